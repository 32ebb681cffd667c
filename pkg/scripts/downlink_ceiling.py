"""Upper bound on the downlink served fraction imposed by the interference rule.

A served user's interferers contribute their full received power to its
interference term.  With the SINR target above 1, two mutually interfering
users can never both be served (the coupling matrix has Perron root tau > 1),
so every served set is an independent set of the proximity graph and the
served fraction is at most the maximum-independent-set fraction.
"""
from __future__ import annotations

import argparse

import networkx as nx
import numpy as np

from comp_vr import sdp
from comp_vr.config import SimConfig
from comp_vr.experiment import eval_traces
from comp_vr.scene import NetworkScene


def mis_size(interferers: np.ndarray) -> int:
    n = interferers.shape[0]
    complement = nx.complement(nx.from_numpy_array(interferers.astype(int)))
    complement.add_nodes_from(range(n))
    _, size = nx.max_weight_clique(complement, weight=None)
    return int(size)


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--users", type=int, default=16)
    p.add_argument("--slots", type=int, default=500)
    p.add_argument("--every", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    cfg = SimConfig(n_users=args.users, n_slots=args.slots, seed=args.seed)
    scene = NetworkScene.create(cfg, eval_traces(cfg))
    caps = scene.power_caps
    frac, alone, degree = [], [], []
    for t in range(0, args.slots, args.every):
        ch = scene.channels(t)
        h = ch.stacked()
        need = np.array([sdp.single_user_min_power(h[i], cfg.sinr_target, cfg.dl_noise_power)
                         for i in range(cfg.n_users)])
        frac.append(mis_size(ch.interferers) / cfg.n_users)
        alone.append(float(np.mean(need <= caps.sum())))
        degree.append(float(ch.interferers.sum() / cfg.n_users))
    print(f"SINR target tau = {cfg.sinr_target:.4f}")
    print(f"max-independent-set fraction: mean {np.mean(frac):.4f} min {np.min(frac):.4f} max {np.max(frac):.4f}")
    print(f"individually feasible users: {np.mean(alone):.4f}")
    print(f"mean interferer degree: {np.mean(degree):.3f}")


if __name__ == "__main__":
    main()
