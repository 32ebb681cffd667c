"""Independent oracles behind the derived example values.

Each row pairs a value produced by the package with one computed a second
way (enumeration, direct arithmetic, a generic solver).  ``table()`` is what
``comp-vr oracle`` prints.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import sdp
from .allocator import knn_candidates, quantize_uplink, uplink_power_closed_form
from .config import SimConfig
from .esn import ridge_closed_form, train_readout
from .net_model import RadioParams, gram, interferers
from .traces import zoom_to_area


@dataclass
class OracleRow:
    name: str
    package: float
    oracle: float
    tol: float

    @property
    def error(self) -> float:
        if self.package == self.oracle:
            return 0.0
        # relative error, or absolute when the reference is zero
        return abs(self.package - self.oracle) / (abs(self.oracle) or 1.0)

    @property
    def ok(self) -> bool:
        return self.error <= self.tol


def _ul_power_at(distance: float, cfg: SimConfig) -> tuple[float, float]:
    pathloss = np.full((cfg.n_users, 1), distance ** -cfg.ul_fading_exponent)
    assoc = np.zeros((cfg.n_users, 1), dtype=int)
    assoc[0, 0] = 1
    pkg = float(uplink_power_closed_form(assoc, pathloss, cfg)[0])
    direct = cfg.ul_snr_threshold * cfg.noise_psd * cfg.ul_bandwidth / (
        cfg.n_users * cfg.rayleigh_gain * distance ** -cfg.ul_fading_exponent)
    return pkg, direct


def ul_power_20m() -> OracleRow:
    cfg = SimConfig(n_users=16)
    pkg, _ = _ul_power_at(20.0, cfg)
    pathloss = np.full((16, 1), 20.0 ** -cfg.ul_fading_exponent)
    lp = sdp.lp_power_oracle(np.eye(16, 1, dtype=int), pathloss, cfg.ul_snr_threshold, cfg.noise_psd,
                             cfg.ul_bandwidth, cfg.rayleigh_gain, cfg.hmd_power_budget)
    return OracleRow("uplink power at 20 m vs LP oracle [W]", pkg, float(lp[0]), 1e-9)


def ul_power_100m() -> OracleRow:
    cfg = SimConfig(n_users=16)
    pkg, direct = _ul_power_at(100.0, cfg)
    # the direct requirement exceeds the budget, so the closed form must return 0
    return OracleRow("uplink power at 100 m (over budget -> 0) [W]", pkg, 0.0 if direct > cfg.hmd_power_budget else direct, 0.0)


def ul_required_100m() -> OracleRow:
    cfg = SimConfig(n_users=16)
    _, direct = _ul_power_at(100.0, cfg)
    by_hand = 200.0 * 10 ** (-167 / 10) * 1e-3 * 200e6 / (16 * 0.3 * 100.0 ** -5)
    return OracleRow("required uplink power at 100 m [W]", direct, by_hand, 1e-12)


def quantizer_hand_case() -> OracleRow:
    groups = quantize_uplink(np.array([[0.7, 0.2], [0.4, 0.6]])).groups
    got = [g.tolist() for g in groups]
    want = [[[1, 0], [0, 1]], [[1, 0], [0, 0]]]
    return OracleRow("uplink quantizer 2x2 hand case (mismatches)", float(got != want), 0.0, 0.0)


def interferer_distances() -> OracleRow:
    params = RadioParams.from_config(SimConfig())
    near = interferers(np.array([[0.0, 0.0], [30.0, 0.0]]), params)
    far = interferers(np.array([[0.0, 0.0], [60.0, 0.0]]), params)
    wrong = int(not near[0, 1]) + int(not near[1, 0]) + int(far.any())
    return OracleRow("interferers at 30 m / 60 m (mismatches)", float(wrong), 0.0, 0.0)


def zoom_scale() -> OracleRow:
    pts = np.array([[[0.0, 0.0]], [[5000.0, 5000.0]]])
    z = zoom_to_area(pts, 500.0)
    return OracleRow("zoom of a 5 km box: scale", float(np.ptp(z[:, 0, 0]) / 5000.0), 0.1, 1e-12)


def knn_enumeration(seed: int = 0) -> OracleRow:
    rng = np.random.default_rng(seed)
    p = rng.uniform(0.01, 0.99, 3)
    got = knn_candidates(p, 4)
    verts = sorted(itertools.product([0, 1], repeat=3), key=lambda v: float(np.sum((np.array(v) - p) ** 2)))
    want = [np.array(v) for v in verts[:4]]
    diff = sum(int(not np.array_equal(a, b)) for a, b in zip(got, want))
    return OracleRow("KNN dim 3 vs vertex enumeration (mismatches)", float(diff), 0.0, 0.0)


def single_user_sdp(seed: int = 0) -> OracleRow:
    rng = np.random.default_rng(seed)
    cfg = SimConfig()
    h = (rng.standard_normal(6) + 1j * rng.standard_normal(6)) * 1e-5
    inst = sdp.build_instance(np.array([1]), h[None, :], np.zeros((1, 1), dtype=bool), cfg.sinr_target,
                              cfg.dl_noise_power, np.full(3, cfg.ap_max_power - cfg.ap_circuit_power), 2)
    sol = sdp.solve(inst, fast_path=False)
    closed = sdp.single_user_min_power(h, cfg.sinr_target, cfg.dl_noise_power)
    return OracleRow("single-user SDP power vs matched filter [W]", float(np.real(np.trace(sol.grams[0]))), closed, 1e-6)


def trace_identity(seed: int = 0) -> OracleRow:
    rng = np.random.default_rng(seed)
    h = rng.standard_normal(6) + 1j * rng.standard_normal(6)
    g = rng.standard_normal(6) + 1j * rng.standard_normal(6)
    lhs = float(np.real(np.trace(gram(h) @ gram(g))))
    return OracleRow("tr(HG) vs |h^H g|^2", lhs, float(abs(np.vdot(h, g)) ** 2), 1e-10)


def esn_ridge(seed: int = 0) -> OracleRow:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((10, 6))
    y = rng.standard_normal((6, 2))
    res = train_readout(x, y, n_workers=3, xi=0.25, max_rounds=1000)
    ref = ridge_closed_form(x, y, 0.25)
    err = float(np.linalg.norm(res.weights - ref) / np.linalg.norm(ref))
    return OracleRow("distributed readout vs ridge (relative error)", err, 0.0, 1e-6)


ORACLES: list[Callable[[], OracleRow]] = [
    ul_required_100m, ul_power_100m, ul_power_20m, quantizer_hand_case, interferer_distances, zoom_scale,
    knn_enumeration, single_user_sdp, trace_identity, esn_ridge,
]


def run_all() -> list[OracleRow]:
    return [fn() for fn in ORACLES]


def table(rows: list[OracleRow]) -> str:
    lines = [f"{'example':52s} {'package':>14s} {'oracle':>14s} {'tol':>8s}  ok"]
    for r in rows:
        lines.append(f"{r.name:52s} {r.package:14.6g} {r.oracle:14.6g} {r.tol:8.0e}  {'yes' if r.ok else 'NO'}")
    return "\n".join(lines)

