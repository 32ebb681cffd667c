"""Association, power and beamforming decisions.

Uplink: the policy output is quantized into candidate association groups,
each group gets closed-form HMD powers and a reward, and the best group is
executed after a constraint audit.  Downlink: candidate served sets are
scored by solving the power-control SDP; the largest feasible set wins.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .config import SimConfig
from .net_model import ChannelRealization, DECODE_RTOL
from .policy_net import (ExplorationSchedule, PolicyNet, ReplayMemory, backward_and_adam, explore, forward,
                         init_xavier)
from . import sdp

AUDIT_SINR_RTOL = sdp.RECOVERY_SLACK
AUDIT_POWER_RTOL = 1e-6


@dataclass
class ActionGroupSet:
    groups: list[np.ndarray]          # (N, J) uplink or (N,) downlink binary arrays
    thresholds: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __len__(self) -> int:
        return len(self.groups)


# ---------------------------------------------------------------------------
# quantizers


def _threshold_groups(scores: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Masks [scores > 0.5] then [scores > b_v] for the ascending sorted b."""
    b = np.sort(scores)
    masks = [scores > 0.5] + [scores > b[v] for v in range(len(scores) - 1)]
    return masks, b


def quantize_uplink(probs: np.ndarray) -> ActionGroupSet:
    """N groups; each selected user goes to its highest-scoring AP."""
    p = np.asarray(probs, dtype=float)
    n, j = p.shape
    best = p.max(axis=1)
    ap = p.argmax(axis=1)
    masks, b = _threshold_groups(best)
    groups = []
    for mask in masks:
        g = np.zeros((n, j), dtype=int)
        g[np.flatnonzero(mask), ap[mask]] = 1
        groups.append(g)
    return ActionGroupSet(groups, b)


def quantize_downlink(probs: np.ndarray) -> ActionGroupSet:
    masks, b = _threshold_groups(np.asarray(probs, dtype=float))
    return ActionGroupSet([m.astype(int) for m in masks], b)


def order_preserving_candidates(probs: np.ndarray, count: int) -> list[np.ndarray]:
    """DROO's order-preserving quantizer on a flat vector."""
    m = np.asarray(probs, dtype=float)
    out = [(m > 0.5).astype(int)]
    if count > 1:
        idx = np.argsort(np.abs(m - 0.5), kind="stable")[:count - 1]
        for i in idx:
            if m[i] > 0.5:
                out.append((m - m[i] > 0).astype(int))
            else:
                out.append((m - m[i] >= 0).astype(int))
    return out


def knn_candidates(probs: np.ndarray, count: int) -> list[np.ndarray]:
    """The ``count`` binary vectors closest to ``probs`` in Euclidean distance.

    Flipping coordinate i of the rounded vector raises the squared distance
    by |1 - 2 p_i|, so the answer is the ``count`` smallest subset sums of
    those costs, enumerated best-first with a heap.
    """
    m = np.asarray(probs, dtype=float)
    base = (m > 0.5).astype(int)
    cost = np.abs(1.0 - 2.0 * m)
    order = np.argsort(cost, kind="stable")
    c = cost[order]
    out = [base]
    heap: list[tuple[float, tuple[int, ...]]] = [(float(c[0]), (0,))] if m.size else []
    while heap and len(out) < count:
        total, subset = heapq.heappop(heap)
        v = base.copy()
        flip = order[list(subset)]
        v[flip] = 1 - v[flip]
        out.append(v)
        last = subset[-1]
        if last + 1 < m.size:
            heapq.heappush(heap, (total + float(c[last + 1]), subset + (last + 1,)))
            heapq.heappush(heap, (total - float(c[last]) + float(c[last + 1]), subset[:-1] + (last + 1,)))
    return out


def candidate_groups(probs: np.ndarray, quantizer: str, shape: tuple[int, ...], count: int) -> ActionGroupSet:
    if quantizer == "proposed":
        return quantize_uplink(probs.reshape(shape)) if len(shape) == 2 else quantize_downlink(probs)
    flat = probs.ravel()
    if quantizer == "droo":
        cands = order_preserving_candidates(flat, count)
    elif quantizer == "knn":
        cands = knn_candidates(flat, count)
    else:
        raise ValueError(f"unknown quantizer {quantizer!r}")
    return ActionGroupSet([c.reshape(shape) for c in cands])


# ---------------------------------------------------------------------------
# uplink


def required_ul_power(pathloss: np.ndarray, cfg: SimConfig) -> np.ndarray:
    """Power putting each user exactly on the SNR threshold at each AP, (N, J)."""
    n = pathloss.shape[0]
    return cfg.ul_snr_threshold * cfg.noise_psd * cfg.ul_bandwidth / (n * cfg.rayleigh_gain * pathloss)


def uplink_power_closed_form(assoc: np.ndarray, pathloss: np.ndarray, cfg: SimConfig) -> np.ndarray:
    """Sum over associated APs of the threshold power, or 0 above the budget."""
    p = np.sum(np.asarray(assoc) * required_ul_power(pathloss, cfg), axis=1)
    return np.where(p <= cfg.hmd_power_budget, p, 0.0)


def ul_decoded(assoc: np.ndarray, powers: np.ndarray, pathloss: np.ndarray, cfg: SimConfig) -> np.ndarray:
    n = pathloss.shape[0]
    snr = np.asarray(powers)[:, None] * cfg.rayleigh_gain * pathloss / (cfg.noise_psd * cfg.ul_bandwidth / n)
    return (np.asarray(assoc) == 1) & (snr >= cfg.ul_snr_threshold * (1.0 - DECODE_RTOL))


def uplink_reward(assoc: np.ndarray, powers: np.ndarray, pathloss: np.ndarray, cfg: SimConfig) -> float:
    """Decoded fraction minus sum of (p + p^c)/p~ over decoded pairs."""
    dec = ul_decoded(assoc, powers, pathloss, cfg)
    n = pathloss.shape[0]
    per_user = (np.asarray(powers) + cfg.hmd_circuit_power) / cfg.hmd_max_power
    return float(dec.sum() / n - np.sum(dec * per_user[:, None]))


@dataclass
class UplinkChoice:
    assoc: np.ndarray
    powers: np.ndarray
    reward: float
    index: int
    rewards: np.ndarray


def select_uplink_action(groups: ActionGroupSet | list[np.ndarray], pathloss: np.ndarray,
                         cfg: SimConfig) -> UplinkChoice:
    gs = groups.groups if isinstance(groups, ActionGroupSet) else groups
    if not gs:
        raise ValueError("need at least one candidate group")
    powers = [uplink_power_closed_form(g, pathloss, cfg) for g in gs]
    rewards = np.array([uplink_reward(g, p, pathloss, cfg) for g, p in zip(gs, powers)])
    k = int(np.argmax(rewards))          # first maximum -> lowest index on ties
    return UplinkChoice(np.asarray(gs[k]), powers[k], float(rewards[k]), k, rewards)


def audit_uplink(assoc: np.ndarray, powers: np.ndarray, pathloss: np.ndarray, cfg: SimConfig) -> dict[str, bool]:
    a = np.asarray(assoc)
    p = np.asarray(powers)
    flags = {
        "ul_single_ap": bool(np.all(a.sum(axis=1) <= 1)),
        "ul_capacity": bool(np.all(a.sum(axis=0) <= cfg.decode_capacity)),
        "ul_decode": bool(np.all(ul_decoded(a, p, pathloss, cfg) == (a == 1))),
        "ul_hmd_power": bool(np.all((p >= 0) & (p <= cfg.hmd_power_budget))),
    }
    flags["ul_ok"] = all(flags.values())
    return flags


# ---------------------------------------------------------------------------
# downlink


@dataclass
class DownlinkOutcome:
    serve: np.ndarray
    beams: np.ndarray             # (N, JK)
    reward: float                 # -inf when the set cannot be served
    power: float                  # total transmit power, W
    status: str
    index: int = -1


def downlink_evaluate(serve: np.ndarray, channel: ChannelRealization, cfg: SimConfig, caps: np.ndarray,
                      rng: np.random.Generator) -> DownlinkOutcome:
    """Solve power control for one served set and recover beams."""
    a = np.asarray(serve).astype(int)
    n = a.size
    h = channel.stacked()
    beams = np.zeros_like(h)
    if a.sum() == 0:
        return DownlinkOutcome(a, beams, 0.0, 0.0, sdp.FEASIBLE)
    inst = sdp.build_instance(a, h, channel.interferers, cfg.sinr_target, cfg.dl_noise_power, caps, cfg.n_elements)
    sol = sdp.solve(inst)
    if sol.status != sdp.FEASIBLE:
        return DownlinkOutcome(a, beams, -math.inf, math.inf, sol.status)
    rec = sdp.recover_beamformers(inst, sol, rng, cfg.recovery_candidates)
    if rec.beams is None:
        return DownlinkOutcome(a, beams, -math.inf, math.inf, "recovery-failed")
    beams[inst.served] = rec.beams
    return DownlinkOutcome(a, beams, float(a.sum() / n), float(np.sum(np.abs(rec.beams) ** 2)), sdp.FEASIBLE)


def select_downlink_action(groups: ActionGroupSet | list[np.ndarray], channel: ChannelRealization,
                           cfg: SimConfig, caps: np.ndarray, rng: np.random.Generator) -> DownlinkOutcome:
    """Largest feasible served set; least total power among sets of that size.

    Sets are tried in order of decreasing size and the scan stops at the
    first size with a feasible member.  If none is feasible, nobody is served.
    """
    gs = groups.groups if isinstance(groups, ActionGroupSet) else groups
    sizes = sorted({int(np.sum(g)) for g in gs}, reverse=True)
    for size in sizes:
        if size == 0:
            break
        best: DownlinkOutcome | None = None
        seen: set[bytes] = set()
        for k, g in enumerate(gs):
            key = np.asarray(g, dtype=np.int8).tobytes()
            if int(np.sum(g)) != size or key in seen:
                continue
            seen.add(key)
            out = downlink_evaluate(g, channel, cfg, caps, rng)
            out.index = k
            if out.reward > -math.inf and (best is None or out.power < best.power):
                best = out
        if best is not None:
            return best
    zero = next((k for k, g in enumerate(gs) if int(np.sum(g)) == 0), -1)
    out = downlink_evaluate(np.zeros(channel.n_users, dtype=int), channel, cfg, caps, rng)
    out.index = zero
    return out


def audit_downlink(serve: np.ndarray, beams: np.ndarray, channel: ChannelRealization, cfg: SimConfig,
                   caps: np.ndarray) -> dict[str, bool]:
    a = np.asarray(serve).astype(bool)
    h = channel.stacked()
    recv = np.abs(np.einsum("ni,ni->n", h.conj(), beams)) ** 2
    interference = (channel.interferers & a[None, :]).astype(float) @ recv
    sinr = recv / (cfg.dl_noise_power + interference)
    ok_sinr = bool(np.all(sinr[a] >= cfg.sinr_target * (1.0 - AUDIT_SINR_RTOL)))
    ap_power = np.sum(np.abs(beams[a].reshape(int(a.sum()), cfg.n_aps, cfg.n_elements)) ** 2, axis=(0, 2))
    ok_power = bool(np.all(ap_power <= caps * (1.0 + AUDIT_POWER_RTOL)))
    silent = bool(np.all(beams[~a] == 0))
    flags = {"dl_sinr": ok_sinr, "dl_ap_power": ok_power, "dl_unserved_silent": silent}
    flags["dl_ok"] = all(flags.values())
    return flags


# ---------------------------------------------------------------------------
# state encodings


def encode_uplink_state(counts: np.ndarray, pathloss: np.ndarray, powers: np.ndarray, cfg: SimConfig) -> np.ndarray:
    """[counts / M~, decode margin in dB / 10, powers / budget]."""
    margin_db = 10.0 * np.log10(cfg.hmd_power_budget / required_ul_power(pathloss, cfg))
    return np.concatenate([np.asarray(counts) / cfg.decode_capacity, margin_db.ravel() / 10.0,
                           np.asarray(powers) / cfg.hmd_power_budget])


def encode_downlink_state(counts: np.ndarray, channel: ChannelRealization, prev_beams: np.ndarray,
                          cfg: SimConfig, caps: np.ndarray) -> np.ndarray:
    """[counts / N, per-element SNR margin in dB / 10, interference matrix, |g|^2 / cap]."""
    cap = float(np.max(caps))
    floor = cfg.sinr_target * cfg.dl_noise_power / cap
    gain_db = 10.0 * np.log10(np.abs(channel.dl_channel) ** 2 / floor)
    return np.concatenate([np.asarray(counts) / channel.n_users, gain_db.ravel() / 10.0,
                           channel.interferers.astype(float).ravel(), (np.abs(prev_beams) ** 2 / cap).ravel()])


# ---------------------------------------------------------------------------
# learning agent


@dataclass
class LinkAgent:
    """Policy net, replay memory and exploration for one link."""

    net: PolicyNet
    memory: ReplayMemory
    schedule: ExplorationSchedule
    rng: np.random.Generator
    quantizer: str = "proposed"
    batch_size: int = 64
    train_interval: int = 20
    epoch: int = 0
    losses: list[float] = field(default_factory=list)

    @classmethod
    def create(cls, in_dim: int, out_dim: int, cfg: SimConfig, lr: float, quantizer: str,
               rng: np.random.Generator) -> "LinkAgent":
        net = init_xavier([in_dim, *cfg.hidden_sizes, out_dim], rng, lr)
        sched = ExplorationSchedule(cfg.epsilon0, cfg.epsilon_decay, cfg.epsilon_floor, cfg.noise_var)
        return cls(net, ReplayMemory(cfg.replay_capacity), sched, rng, quantizer, cfg.batch_size, cfg.train_interval)

    def act(self, state: np.ndarray, epsilon: float | None = None) -> np.ndarray:
        eps = self.schedule.epsilon if epsilon is None else epsilon
        return explore(forward(self.net, state), eps, self.schedule.noise_var, self.rng)

    def record(self, state: np.ndarray, action: np.ndarray, next_state: np.ndarray) -> float | None:
        """Store a transition, train every ``train_interval`` epochs, advance exploration."""
        self.memory.push(state, np.asarray(action).ravel(), next_state)
        self.epoch += 1
        self.schedule.advance()
        if self.epoch % self.train_interval:
            return None
        batch = self.memory.sample(self.batch_size, self.rng)
        if batch is None:
            return None
        value = backward_and_adam(self.net, *batch)
        self.losses.append(value)
        return value


def penalized(reward: float, previous: float, factor: float) -> float:
    """Reward logged for a cancelled action: r - factor * |previous|."""
    return reward - factor * abs(previous)
