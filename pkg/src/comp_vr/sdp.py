"""Downlink power control as a small complex SDP.

The relaxed program for a served set S is

    minimize    sum_i tr(G_i)
    subject to  tr(H_i G_i) >= tau (sigma^2 + sum_{m in M_i, m in S} tr(H_m G_m))
                sum_i tr(Z_j G_i) <= P_j                for every AP j
                G_i Hermitian PSD

and is solved by a dense primal-dual interior-point method (HKM direction
with a Mehrotra predictor-corrector) working directly on complex Hermitian
blocks.  Infeasibility is certified either by the Perron root of the
interference coupling (the SINR part alone is infeasible) or by a phase-1
program; iteration exhaustion is reported as a numerical failure.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FEASIBLE = "feasible"
INFEASIBLE = "infeasible"
FAILED = "numerical-failure"

RANK_RATIO_TOL = 1e-6
RESIDUAL_TOL = 1e-6
RECOVERY_SLACK = 1e-4
PHASE1_TOL = 1e-6


# ---------------------------------------------------------------------------
# generic solver


@dataclass
class IpmResult:
    x_blk: np.ndarray      # (S, n, n) complex
    x_lp: np.ndarray       # (L,)
    y: np.ndarray          # (m,)
    z_blk: np.ndarray
    z_lp: np.ndarray
    status: str            # "optimal" | "max-iter" | "diverged"
    iterations: int
    primal_infeas: float
    dual_infeas: float
    gap: float


def _apply(a_blk: np.ndarray, a_lp: np.ndarray, x_blk: np.ndarray, x_lp: np.ndarray) -> np.ndarray:
    """A(X)_k = Re sum_s tr(A_ks X_s) + a_lp[k] . x_lp."""
    out = np.einsum("ksij,sji->k", a_blk, x_blk).real
    if a_lp.shape[1]:
        out = out + a_lp @ x_lp
    return out


def _adjoint(a_blk: np.ndarray, a_lp: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return np.einsum("k,ksij->sij", y, a_blk), a_lp.T @ y


def _herm(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + np.conj(np.swapaxes(m, -1, -2)))


def _max_step_psd(x: np.ndarray, dx: np.ndarray) -> float:
    if x.shape[0] == 0:
        return np.inf
    lo = np.linalg.inv(np.linalg.cholesky(x))
    w = lo @ dx @ np.conj(np.swapaxes(lo, -1, -2))
    lam = np.linalg.eigvalsh(_herm(w)).min()
    return np.inf if lam >= 0 else -1.0 / lam


def _max_step_lp(x: np.ndarray, dx: np.ndarray) -> float:
    neg = dx < 0
    return np.inf if not np.any(neg) else float(np.min(-x[neg] / dx[neg]))


def solve_standard_form(a_blk: np.ndarray, a_lp: np.ndarray, b: np.ndarray, c_blk: np.ndarray,
                        c_lp: np.ndarray, tol: float = 1e-10, max_iter: int = 100) -> IpmResult:
    """min <C, X> s.t. A(X) = b, X PSD (blocks) and x >= 0 (lp part).

    ``a_blk`` is (m, S, n, n) with Hermitian slices, ``a_lp`` is (m, L).
    """
    m = b.size
    n_blk, n = c_blk.shape[0], c_blk.shape[-1]
    n_lp = c_lp.size
    nu = n_blk * n + n_lp
    eye = np.broadcast_to(np.eye(n), (n_blk, n, n))

    norm_a = np.sqrt(np.einsum("ksij,ksij->k", a_blk, a_blk.conj()).real + np.sum(a_lp ** 2, axis=1))
    scale = np.sqrt(max(n, 1))
    xi = max(10.0, scale, float(np.max(scale * (1 + np.abs(b)) / (1 + norm_a))) if m else 10.0)
    eta = max(10.0, scale, float(norm_a.max()) if m else 0.0, float(np.linalg.norm(c_blk)), float(np.linalg.norm(c_lp)))
    x_blk = xi * eye.astype(complex)
    z_blk = eta * eye.astype(complex)
    x_lp = np.full(n_lp, xi)
    z_lp = np.full(n_lp, eta)
    y = np.zeros(m)
    norm_b = 1.0 + np.linalg.norm(b)
    norm_c = 1.0 + np.linalg.norm(c_blk) + np.linalg.norm(c_lp)

    status, it = "max-iter", 0
    pinf = dinf = gap = np.inf
    for it in range(1, max_iter + 1):
        aty_blk, aty_lp = _adjoint(a_blk, a_lp, y)
        rp = b - _apply(a_blk, a_lp, x_blk, x_lp)
        rd_blk = c_blk - z_blk - aty_blk
        rd_lp = c_lp - z_lp - aty_lp
        xz = np.einsum("sij,sji->", x_blk, z_blk).real + x_lp @ z_lp
        mu = xz / nu
        pobj = np.einsum("sij,sji->", c_blk, x_blk).real + c_lp @ x_lp
        dobj = b @ y
        pinf = np.linalg.norm(rp) / norm_b
        dinf = (np.linalg.norm(rd_blk) + np.linalg.norm(rd_lp)) / norm_c
        gap = abs(pobj - dobj) / (1 + abs(pobj) + abs(dobj))
        if max(pinf, dinf, gap) < tol:
            status = "optimal"
            break
        if not np.isfinite(mu) or np.abs(x_blk).max(initial=0) > 1e14 or np.abs(y).max(initial=0) > 1e14:
            status = "diverged"
            break

        z_inv = np.linalg.inv(z_blk)
        # Schur complement M_kl = Re sum_s tr(A_k X A_l Z^-1) + lp part
        xaz = np.einsum("sij,ksjl,slm->ksim", x_blk, a_blk, z_inv)
        schur = np.einsum("ksij,lsji->kl", a_blk, xaz).real
        if n_lp:
            schur += (a_lp * (x_lp / z_lp)) @ a_lp.T
        schur = 0.5 * (schur + schur.T)
        try:
            chol = np.linalg.cholesky(schur)
        except np.linalg.LinAlgError:
            schur += 1e-12 * np.trace(schur) / m * np.eye(m)
            try:
                chol = np.linalg.cholesky(schur)
            except np.linalg.LinAlgError:
                status = "diverged"
                break

        def direction(rc_blk: np.ndarray, rc_lp: np.ndarray):
            # dX = herm((Rc - X dZ) Z^-1), dZ = Rd - A^T dy
            base_blk = (rc_blk - x_blk @ rd_blk) @ z_inv
            base_lp = (rc_lp - x_lp * rd_lp) / z_lp
            rhs = rp - _apply(a_blk, a_lp, base_blk, base_lp)
            dy = np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))
            at_blk, at_lp = _adjoint(a_blk, a_lp, dy)
            dz_blk = rd_blk - at_blk
            dz_lp = rd_lp - at_lp
            dx_blk = _herm(base_blk + x_blk @ at_blk @ z_inv)
            dx_lp = base_lp + (x_lp / z_lp) * at_lp
            return dx_blk, dx_lp, dy, _herm(dz_blk), dz_lp

        def steps(dx_blk, dx_lp, dz_blk, dz_lp, frac: float) -> tuple[float, float]:
            ap = min(_max_step_psd(x_blk, dx_blk), _max_step_lp(x_lp, dx_lp))
            ad = min(_max_step_psd(z_blk, dz_blk), _max_step_lp(z_lp, dz_lp))
            return min(1.0, frac * ap), min(1.0, frac * ad)

        xz_blk = x_blk @ z_blk
        dxa, dxa_lp, _, dza, dza_lp = direction(-xz_blk, -x_lp * z_lp)
        ap, ad = steps(dxa, dxa_lp, dza, dza_lp, 1.0)
        mu_aff = (np.einsum("sij,sji->", x_blk + ap * dxa, z_blk + ad * dza).real
                  + (x_lp + ap * dxa_lp) @ (z_lp + ad * dza_lp)) / nu
        sigma = min(1.0, max(0.0, mu_aff / mu)) ** 3
        rc_blk = sigma * mu * eye - xz_blk - dxa @ dza
        rc_lp = sigma * mu - x_lp * z_lp - dxa_lp * dza_lp
        dx, dx_lp, dy, dz, dz_lp = direction(rc_blk, rc_lp)
        ap, ad = steps(dx, dx_lp, dz, dz_lp, 0.98)
        x_blk = _herm(x_blk + ap * dx)
        x_lp = x_lp + ap * dx_lp
        y = y + ad * dy
        z_blk = _herm(z_blk + ad * dz)
        z_lp = z_lp + ad * dz_lp
    return IpmResult(x_blk, x_lp, y, z_blk, z_lp, status, it, float(pinf), float(dinf), float(gap))


# ---------------------------------------------------------------------------
# downlink instances


def selector_blocks(n_aps: int, n_elements: int) -> np.ndarray:
    """(J, JK, JK) stack of the block selectors Z_j."""
    n = n_aps * n_elements
    out = np.zeros((n_aps, n, n))
    for j in range(n_aps):
        s = slice(j * n_elements, (j + 1) * n_elements)
        out[j, s, s] = np.eye(n_elements)
    return out


@dataclass
class SdpInstance:
    channels: np.ndarray          # (S, JK) stacked channels of the served users
    served: np.ndarray            # (S,) user indices
    coupling: np.ndarray          # (S, S) bool, coupling[i, m] = m interferes with i
    sinr_target: float            # tau
    noise_power: float            # N_0 W^dl
    power_caps: np.ndarray        # (J,) E~_j - E^c_j
    n_elements: int

    @property
    def size(self) -> int:
        return len(self.served)

    @property
    def dim(self) -> int:
        return self.channels.shape[1]

    @property
    def n_aps(self) -> int:
        return len(self.power_caps)

    def grams(self) -> np.ndarray:
        h = self.channels
        return np.einsum("si,sj->sij", h, h.conj())

    def selectors(self) -> np.ndarray:
        return selector_blocks(self.n_aps, self.n_elements)

    def to_dict(self) -> dict:
        return {
            "channels_re": self.channels.real.tolist(), "channels_im": self.channels.imag.tolist(),
            "served": self.served.tolist(), "coupling": self.coupling.astype(int).tolist(),
            "sinr_target": self.sinr_target, "noise_power": self.noise_power,
            "power_caps": self.power_caps.tolist(), "n_elements": self.n_elements,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SdpInstance":
        h = np.array(d["channels_re"]) + 1j * np.array(d["channels_im"])
        return cls(h.reshape(len(d["served"]), -1), np.array(d["served"], dtype=int),
                   np.array(d["coupling"], dtype=bool).reshape(len(d["served"]), -1),
                   d["sinr_target"], d["noise_power"], np.array(d["power_caps"]), d["n_elements"])


def build_instance(served_mask: np.ndarray, stacked_channels: np.ndarray, interferer_matrix: np.ndarray,
                   sinr_target: float, noise_power: float, power_caps: np.ndarray, n_elements: int) -> SdpInstance:
    served = np.flatnonzero(np.asarray(served_mask))
    return SdpInstance(
        channels=np.asarray(stacked_channels)[served],
        served=served,
        coupling=np.asarray(interferer_matrix, dtype=bool)[np.ix_(served, served)],
        sinr_target=float(sinr_target), noise_power=float(noise_power),
        power_caps=np.asarray(power_caps, dtype=float), n_elements=int(n_elements),
    )


@dataclass
class SdpSolution:
    grams: np.ndarray              # (S, JK, JK) complex, watts
    status: str
    residual: float = 0.0          # worst relative constraint violation
    objective: float = 0.0         # total transmit power, W
    min_eig: float = 0.0
    iterations: int = 0
    certificate: str = ""          # how infeasibility was shown
    phase1_value: float | None = None
    extra: dict = field(default_factory=dict)


def interference_min_received(inst: SdpInstance) -> np.ndarray | None:
    """Smallest received powers meeting every SINR target, ignoring power caps.

    s = tau (sigma^2 + M s) has a non-negative solution iff the Perron root
    of tau M is below one; None otherwise.
    """
    tau, m = inst.sinr_target, inst.coupling.astype(float)
    if inst.size == 0:
        return np.zeros(0)
    if np.any(m):
        if np.max(np.abs(np.linalg.eigvals(tau * m))) >= 1.0 - 1e-12:
            return None
    s = np.linalg.solve(np.eye(inst.size) - tau * m, tau * inst.noise_power * np.ones(inst.size))
    return s if np.all(s > 0) else None


def constraint_residual(inst: SdpInstance, grams: np.ndarray) -> float:
    """Worst relative violation of the SINR and cap constraints (0 if all hold)."""
    if inst.size == 0:
        return 0.0
    h = inst.grams()
    recv = np.einsum("sij,sji->s", h, grams).real
    need = inst.sinr_target * (inst.noise_power + inst.coupling.astype(float) @ recv)
    sinr_viol = np.max(np.maximum(need - recv, 0.0) / need)
    ap_power = np.einsum("jab,sba->j", inst.selectors(), grams).real
    cap_viol = np.max(np.maximum(ap_power - inst.power_caps, 0.0) / inst.power_caps)
    return float(max(sinr_viol, cap_viol))


def _program(inst: SdpInstance, phase1: bool, rho: float | None = None) -> tuple:
    """Standard-form data in units of ``rho`` watts (default: the largest cap)."""
    s, n, j = inst.size, inst.dim, inst.n_aps
    rho = float(np.max(inst.power_caps)) if rho is None else float(rho)
    tau = inst.sinr_target
    h = inst.grams() * (rho / inst.noise_power)       # received SNR per unit of normalized G
    z = inst.selectors()
    n_lp = s + j + (1 if phase1 else 0)
    a_blk = np.zeros((s + j, s, n, n), dtype=complex)
    a_lp = np.zeros((s + j, n_lp))
    b = np.empty(s + j)
    for i in range(s):
        a_blk[i, i] = h[i]
        for m in np.flatnonzero(inst.coupling[i]):
            a_blk[i, m] -= tau * h[m]
        a_lp[i, i] = -1.0
        b[i] = tau
    caps = inst.power_caps / rho
    for jj in range(j):
        a_blk[s + jj, :] = z[jj]
        a_lp[s + jj, s + jj] = 1.0
        b[s + jj] = caps[jj]
    if phase1:
        a_lp[:s, -1] = tau
        a_lp[s:, -1] = -caps
        c_blk = np.zeros((s, n, n), dtype=complex)
        c_lp = np.zeros(n_lp)
        c_lp[-1] = 1.0
    else:
        c_blk = np.broadcast_to(np.eye(n), (s, n, n)).astype(complex)
        c_lp = np.zeros(n_lp)
    # row scaling keeps the SINR rows comparable to the cap rows
    rs = 1.0 / np.maximum(1.0, np.sqrt(np.einsum("ksij,ksij->k", a_blk, a_blk.conj()).real))
    return a_blk * rs[:, None, None, None], a_lp * rs[:, None], b * rs, c_blk, c_lp, rho


def matched_filter_solution(inst: SdpInstance, received: np.ndarray) -> np.ndarray:
    """Grams of matched-filter beams delivering exactly ``received`` to each user."""
    h = inst.channels
    norm2 = np.einsum("si,si->s", h.conj(), h).real
    return np.einsum("s,si,sj->sij", received / norm2 ** 2, h, h.conj())


def solve(inst: SdpInstance, tol: float = 1e-10, max_iter: int = 100, fast_path: bool = True) -> SdpSolution:
    """Minimum-power relaxed solution, or a labelled infeasible / failed result.

    Every feasible point delivers at least the Perron-minimal received powers
    s*, and matched filters reach s* at the least total power.  When those
    beams respect every AP cap they are therefore optimal, and ``fast_path``
    returns them without running the interior-point method.
    """
    s, n = inst.size, inst.dim
    empty = np.zeros((s, n, n), dtype=complex)
    if s == 0:
        return SdpSolution(empty, FEASIBLE)
    s_min = interference_min_received(inst)
    if s_min is None:
        return SdpSolution(empty, INFEASIBLE, certificate="perron")
    grams = matched_filter_solution(inst, s_min)
    floor = float(np.einsum("sii->", grams).real)      # no feasible point uses less total power
    if fast_path:
        ap_power = np.einsum("jab,sba->j", inst.selectors(), grams).real
        if np.all(ap_power <= inst.power_caps):
            return SdpSolution(grams, FEASIBLE, constraint_residual(inst, grams), floor, 0.0, 0,
                               extra={"method": "matched-filter"})
    # work in units of the power floor so the optimum is O(1) whatever the caps
    unit = min(floor, float(np.max(inst.power_caps))) if floor > 0 else None
    a_blk, a_lp, b, c_blk, c_lp, rho = _program(inst, phase1=False, rho=unit)
    res = solve_standard_form(a_blk, a_lp, b, c_blk, c_lp, tol, max_iter)
    grams = res.x_blk * rho
    if res.status == "optimal":
        resid = constraint_residual(inst, grams)
        min_eig = float(np.linalg.eigvalsh(grams).min())
        scale = float(np.max(np.abs(grams))) or 1.0
        if resid <= RESIDUAL_TOL and min_eig >= -1e-8 * max(scale, 1.0):
            return SdpSolution(grams, FEASIBLE, resid, float(np.einsum("sii->", grams).real), min_eig, res.iterations)
    # phase 1 decides between infeasible and a numerical problem
    a_blk, a_lp, b, c_blk, c_lp, _ = _program(inst, phase1=True, rho=unit)
    res1 = solve_standard_form(a_blk, a_lp, b, c_blk, c_lp, tol, max_iter)
    if res1.status == "optimal" and res1.x_lp[-1] > PHASE1_TOL:
        return SdpSolution(empty, INFEASIBLE, iterations=res.iterations + res1.iterations,
                           certificate="phase1", phase1_value=float(res1.x_lp[-1]))
    return SdpSolution(empty, FAILED, iterations=res.iterations + res1.iterations,
                       phase1_value=float(res1.x_lp[-1]) if res1.status == "optimal" else None,
                       extra={"phase2": res.status, "phase1": res1.status})


# ---------------------------------------------------------------------------
# rank and recovery


def check_rank(g: np.ndarray) -> tuple[bool, float]:
    """(rank-1 flag, lambda_2 / lambda_1) for a Hermitian PSD matrix."""
    lam = np.linalg.eigvalsh(_herm(np.asarray(g)))[::-1]
    if lam[0] <= 0:
        return True, 0.0
    ratio = float(max(lam[1], 0.0) / lam[0]) if lam.size > 1 else 0.0
    return ratio <= RANK_RATIO_TOL, ratio


def principal_beam(g: np.ndarray) -> np.ndarray:
    lam, vec = np.linalg.eigh(_herm(np.asarray(g)))
    return np.sqrt(max(lam[-1], 0.0)) * vec[:, -1]


@dataclass
class Recovery:
    beams: np.ndarray | None       # (S, JK) or None on failure
    method: str                    # "eigen" | "randomization" | "failed"
    sinr_margin: float = 0.0       # worst SINR / target - 1


def beams_margin(inst: SdpInstance, beams: np.ndarray) -> tuple[float, float]:
    """(worst SINR relative margin, worst cap relative excess)."""
    recv = np.abs(np.einsum("si,si->s", inst.channels.conj(), beams)) ** 2
    interference = inst.coupling.astype(float) @ recv
    sinr = recv / (inst.noise_power + interference)
    ap_power = np.sum(np.abs(beams.reshape(inst.size, inst.n_aps, inst.n_elements)) ** 2, axis=(0, 2))
    return float(np.min(sinr / inst.sinr_target) - 1.0), float(np.max(ap_power / inst.power_caps) - 1.0)


def recover_beamformers(inst: SdpInstance, sol: SdpSolution, rng: np.random.Generator,
                        candidates: int = 100) -> Recovery:
    """Eigen-decomposition when every block is rank-1, Gaussian randomization otherwise."""
    if inst.size == 0:
        return Recovery(np.zeros((0, inst.dim), dtype=complex), "eigen")
    if all(check_rank(g)[0] for g in sol.grams):
        beams = np.array([principal_beam(g) for g in sol.grams])
        margin, excess = beams_margin(inst, beams)
        if margin >= -RECOVERY_SLACK and excess <= RECOVERY_SLACK:
            return Recovery(beams, "eigen", margin)
    roots = []
    for g in sol.grams:
        lam, vec = np.linalg.eigh(_herm(g))
        roots.append(vec * np.sqrt(np.maximum(lam, 0.0)))
    target = np.einsum("sij,sji->s", inst.grams(), sol.grams).real
    for _ in range(candidates):
        zeta = (rng.standard_normal((inst.size, inst.dim)) + 1j * rng.standard_normal((inst.size, inst.dim))) / np.sqrt(2)
        beams = np.einsum("sij,sj->si", np.array(roots), zeta)
        recv = np.abs(np.einsum("si,si->s", inst.channels.conj(), beams)) ** 2
        beams = beams * np.sqrt(np.where(recv > 0, target / np.maximum(recv, 1e-300), 0.0))[:, None]
        ap_power = np.sum(np.abs(beams.reshape(inst.size, inst.n_aps, inst.n_elements)) ** 2, axis=(0, 2))
        over = np.max(ap_power / inst.power_caps)
        if over > 1:
            beams = beams / np.sqrt(over)
        margin, excess = beams_margin(inst, beams)
        if margin >= -RECOVERY_SLACK and excess <= RECOVERY_SLACK:
            return Recovery(beams, "randomization", margin)
    return Recovery(None, "failed")


# ---------------------------------------------------------------------------
# reference values used by tests and baselines


def single_user_min_power(h: np.ndarray, sinr_target: float, noise_power: float) -> float:
    """Matched-filter minimum power for one user without interference or caps."""
    return sinr_target * noise_power / float(np.vdot(h, h).real)


def lp_power_oracle(assoc: np.ndarray, pathloss: np.ndarray, snr_threshold: float, noise_psd: float,
                    bandwidth: float, rayleigh_gain: float, budget: float, iters: int = 200) -> np.ndarray:
    """Minimal HMD power per user meeting the uplink SNR test, by bisection.

    Users whose requirement exceeds ``budget`` get 0, as do unassigned users.
    """
    a = np.asarray(assoc)
    n = a.shape[0]
    noise = noise_psd * bandwidth / n
    out = np.zeros(n)
    for i in range(n):
        js = np.flatnonzero(a[i])
        if js.size == 0:
            continue
        gain = rayleigh_gain * pathloss[i, js[0]] / noise

        def ok(p: float) -> bool:
            return p * gain >= snr_threshold

        if not ok(budget):
            continue
        lo, hi = 0.0, budget
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            if ok(mid):
                hi = mid
            else:
                lo = mid
        out[i] = hi
    return out
