"""User mobility traces: a seeded synthetic walker and CSV ingestion."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CSV_HEADER = ("user_id", "slot", "x_m", "y_m")


class TraceError(ValueError):
    """Malformed trace input."""


@dataclass
class TraceSet:
    positions: np.ndarray            # (T, N, 2) meters, slot 1 first
    provenance: str = "synthetic"    # "synthetic" | "ingested"
    slot_duration: float | None = None
    user_ids: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.positions = np.asarray(self.positions, dtype=float)
        if self.positions.ndim != 3 or self.positions.shape[2] != 2:
            raise TraceError("positions must be (T, N, 2)")
        if not self.user_ids:
            self.user_ids = [str(i) for i in range(self.n_users)]

    @property
    def n_slots(self) -> int:
        return self.positions.shape[0]

    @property
    def n_users(self) -> int:
        return self.positions.shape[1]

    def directions(self) -> np.ndarray:
        """Per-slot direction vectors (T, N, 2).

        Slot 1 uses the position itself; a zero displacement later on reuses
        the previous slot's direction.
        """
        out = np.empty_like(self.positions)
        if self.n_slots == 0:
            return out
        out[0] = self.positions[0]
        out[1:] = np.diff(self.positions, axis=0)
        for t in range(1, self.n_slots):
            still = np.all(out[t] == 0, axis=1)
            out[t, still] = out[t - 1, still]
        # a user parked exactly at the origin from slot 1 has no direction at all
        out[np.all(out == 0, axis=2)] = (1.0, 0.0)
        return out

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_HEADER)
            for i, uid in enumerate(self.user_ids):
                for t in range(self.n_slots):
                    x, y = self.positions[t, i]
                    w.writerow([uid, t + 1, repr(float(x)), repr(float(y))])


def synth_traces(n_users: int, n_slots: int, rng: np.random.Generator, area_size: float = 500.0,
                 speed_max: float = 1.5, turn_max: float = math.pi / 12, margin: float = 5.0) -> TraceSet:
    """Random-waypoint walkers with bounded speed and bounded turn rate.

    Each walker heads for a uniformly drawn waypoint at a per-leg speed in
    [speed_max/2, speed_max], turning at most ``turn_max`` per slot, and
    draws a new waypoint once it is within one step of the current one.
    """
    lo, hi = margin, area_size - margin
    pos = rng.uniform(lo, hi, (n_users, 2))
    heading = rng.uniform(0, 2 * math.pi, n_users)
    goal = rng.uniform(lo, hi, (n_users, 2))
    speed = rng.uniform(0.5, 1.0, n_users) * speed_max
    out = np.empty((n_slots, n_users, 2))
    for t in range(n_slots):
        out[t] = pos
        to_goal = goal - pos
        dist = np.linalg.norm(to_goal, axis=1)
        arrived = dist <= np.maximum(speed, 1e-9)
        if np.any(arrived):
            k = int(arrived.sum())
            goal[arrived] = rng.uniform(lo, hi, (k, 2))
            speed[arrived] = rng.uniform(0.5, 1.0, k) * speed_max
            to_goal = goal - pos
        want = np.arctan2(to_goal[:, 1], to_goal[:, 0])
        turn = (want - heading + math.pi) % (2 * math.pi) - math.pi
        heading = heading + np.clip(turn, -turn_max, turn_max)
        step = speed[:, None] * np.column_stack([np.cos(heading), np.sin(heading)])
        pos = np.clip(pos + step, 0.0, area_size)
    return TraceSet(out, "synthetic")


def zoom_to_area(positions: np.ndarray, area_size: float = 500.0) -> np.ndarray:
    """Similarity map fitting the joint bounding box into [0, area]^2, centered."""
    pts = np.asarray(positions, dtype=float)
    flat = pts.reshape(-1, 2)
    lo, hi = flat.min(axis=0), flat.max(axis=0)
    extent = float(np.max(hi - lo))
    scale = 1.0 if extent <= area_size else area_size / extent
    mid = (lo + hi) / 2
    return (pts - mid) * scale + area_size / 2


def ingest_traces(path: str | Path, area_size: float = 500.0, slot_duration: float | None = None) -> TraceSet:
    """Read ``user_id,slot,x_m,y_m`` rows; slots must run 1..T for every user."""
    rows: dict[str, dict[int, tuple[float, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise TraceError(f"expected header {','.join(CSV_HEADER)}")
        last_slot: dict[str, int] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise TraceError(f"line {lineno}: expected 4 fields, got {len(row)}")
            uid = row[0].strip()
            try:
                slot, x, y = int(row[1]), float(row[2]), float(row[3])
            except ValueError as exc:
                raise TraceError(f"line {lineno}: {exc}") from None
            if not (math.isfinite(x) and math.isfinite(y)):
                raise TraceError(f"line {lineno}: non-finite coordinate")
            if uid in last_slot and slot <= last_slot[uid]:
                raise TraceError(f"line {lineno}: slots for user {uid} are not increasing")
            last_slot[uid] = slot
            rows.setdefault(uid, {})[slot] = (x, y)
    if not rows:
        raise TraceError("no trace rows")
    lengths = {len(v) for v in rows.values()}
    if len(lengths) != 1:
        raise TraceError("every user needs the same number of slots")
    n_slots = lengths.pop()
    for uid, series in rows.items():
        if sorted(series) != list(range(1, n_slots + 1)):
            raise TraceError(f"user {uid}: slots must be contiguous from 1")
    uids = list(rows)
    pos = np.array([[rows[u][t] for u in uids] for t in range(1, n_slots + 1)])
    return TraceSet(zoom_to_area(pos, area_size), "ingested", slot_duration, uids)
