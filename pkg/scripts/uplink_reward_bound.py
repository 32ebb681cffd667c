"""Best possible per-user contribution to the uplink reward.

A decoded user adds 1/N and costs (p + p^c) / p~ with p >= 0, so its net
contribution is at most 1/N - p^c / p~.  When that is negative for every N of
interest, the empty association is optimal and the reward plateau is 0.
"""
from __future__ import annotations

from comp_vr.config import SimConfig


def main() -> None:
    cfg = SimConfig()
    floor = cfg.hmd_circuit_power / cfg.hmd_max_power
    print(f"p^c / p~ = {floor:.4f}")
    for n in (1, 2, 4, 8, 12, 16, 20):
        print(f"N={n:2d}: best per-user contribution 1/N - p^c/p~ = {1 / n - floor:+.4f}")


if __name__ == "__main__":
    main()
