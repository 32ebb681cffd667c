"""Network scene: APs, users, trajectories and per-slot channel realizations."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SimConfig
from .net_model import ApConfig, ChannelRealization, RadioParams, aps_from_config, realize_channels
from .traces import TraceSet

# stream tags mixed into the seed so that independent draws never collide
_TAG_HEIGHTS = 11
_TAG_SMALL_SCALE = 23
_TAG_SHADOW_FROZEN = 29


def draw_heights(cfg: SimConfig, n_users: int, rng: np.random.Generator) -> np.ndarray:
    lo, hi = cfg.user_height_clamp
    return np.clip(rng.normal(cfg.user_height_mean, np.sqrt(cfg.user_height_var), n_users), lo, hi)


@dataclass
class NetworkScene:
    cfg: SimConfig
    aps: list[ApConfig]
    params: RadioParams
    traces: TraceSet
    heights: np.ndarray           # (N,)
    directions: np.ndarray        # (T, N, 2)
    stream: int = 0               # separates pretraining scenes from evaluation scenes

    @classmethod
    def create(cls, cfg: SimConfig, traces: TraceSet, stream: int = 0) -> "NetworkScene":
        rng = np.random.default_rng([cfg.seed, _TAG_HEIGHTS, stream])
        return cls(cfg, aps_from_config(cfg), RadioParams.from_config(cfg), traces,
                   draw_heights(cfg, traces.n_users, rng), traces.directions(), stream)

    @property
    def n_users(self) -> int:
        return self.traces.n_users

    @property
    def n_slots(self) -> int:
        return self.traces.n_slots

    @property
    def power_caps(self) -> np.ndarray:
        return np.array([ap.max_power - ap.circuit_power for ap in self.aps])

    def small_scale(self, slot: int) -> tuple[np.ndarray, np.ndarray]:
        """Standard-normal shadowing and uniform phases for one slot, (N, J, K) each.

        Keyed by (seed, stream, slot) so that every algorithm and every
        position hypothesis sees the same draws.
        """
        shape = (self.n_users, len(self.aps), self.cfg.n_elements)
        rng = np.random.default_rng([self.cfg.seed, _TAG_SMALL_SCALE, self.stream, slot])
        phases = rng.uniform(0.0, 2 * np.pi, shape)
        if self.cfg.freeze_shadowing:
            frozen = np.random.default_rng([self.cfg.seed, _TAG_SHADOW_FROZEN, self.stream])
            return frozen.standard_normal(shape), phases
        return rng.standard_normal(shape), phases

    def channels(self, slot: int, positions: np.ndarray | None = None,
                 directions: np.ndarray | None = None) -> ChannelRealization:
        """Channels at ``slot``; by default at the true positions of that slot."""
        pos = self.traces.positions[slot] if positions is None else np.asarray(positions, dtype=float)
        dirs = self.directions[slot] if directions is None else np.asarray(directions, dtype=float)
        dirs = np.where(np.all(dirs == 0, axis=1, keepdims=True), self.directions[slot], dirs)
        shadow, phases = self.small_scale(slot)
        return realize_channels(pos, self.heights, dirs, self.aps, self.params, shadow, phases)
