"""Greedy admission baseline.

The KNN and order-preserving quantizers live in :mod:`comp_vr.allocator`
next to the proposed quantizer, since all three feed the same selection step.
"""
from __future__ import annotations

import numpy as np

from .allocator import DownlinkOutcome, downlink_evaluate, required_ul_power, uplink_power_closed_form
from .config import SimConfig
from .net_model import ChannelRealization
from . import sdp


def greedy_uplink(pathloss: np.ndarray, cfg: SimConfig) -> tuple[np.ndarray, np.ndarray]:
    """Admit users cheapest-first, each at its cheapest AP with spare capacity."""
    req = required_ul_power(pathloss, cfg)
    n, j = req.shape
    assoc = np.zeros((n, j), dtype=int)
    load = np.zeros(j, dtype=int)
    for i in np.argsort(req.min(axis=1), kind="stable"):
        for ap in np.argsort(req[i], kind="stable"):
            if req[i, ap] > cfg.hmd_power_budget:
                break
            if load[ap] < cfg.decode_capacity:
                assoc[i, ap] = 1
                load[ap] += 1
                break
    return assoc, uplink_power_closed_form(assoc, pathloss, cfg)


def greedy_downlink(channel: ChannelRealization, cfg: SimConfig, caps: np.ndarray,
                    rng: np.random.Generator) -> DownlinkOutcome:
    """Admit users by ascending single-user power; stop at the first infeasible set."""
    h = channel.stacked()
    need = np.array([sdp.single_user_min_power(h[i], cfg.sinr_target, cfg.dl_noise_power) for i in range(len(h))])
    serve = np.zeros(len(h), dtype=int)
    best = downlink_evaluate(serve, channel, cfg, caps, rng)
    for i in np.argsort(need, kind="stable"):
        trial = serve.copy()
        trial[i] = 1
        out = downlink_evaluate(trial, channel, cfg, caps, rng)
        if out.reward == -np.inf:
            break
        serve, best = trial, out
    return best
