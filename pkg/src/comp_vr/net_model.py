"""Physical-layer model: uplink decoding, sectored antennas, body blockage,
mmWave channels, CoMP downlink rate, FoP and power budgets.

The scalar functions (``ul_pathloss``, ``antenna_gain``, ...) work on one
user/AP pair and are what the tests pin down.  The ``*_matrix`` helpers and
:func:`realize_channels` evaluate the same formulas for all pairs at once and
are what the simulator calls.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import SimConfig

# Relative slack on the uplink decode test: Eq.-(35) powers hit the SNR
# threshold exactly, so rounding must not flip a decode.
DECODE_RTOL = 1e-9
_ANGLE_TOL = 1e-12


class DomainError(ValueError):
    """Geometry or input outside the domain where a formula is defined."""


@dataclass
class ApConfig:
    position: np.ndarray          # (2,) m
    height: float                 # m
    downtilt: float               # rad
    mainlobe_gain: float          # linear
    sidelobe_gain: float          # linear
    beamwidth: float              # rad
    num_elements: int
    max_power: float              # W
    circuit_power: float          # W
    decode_capacity: int

    def __post_init__(self) -> None:
        self.position = np.asarray(self.position, dtype=float).reshape(2)
        if min(self.height, self.mainlobe_gain, self.sidelobe_gain, self.max_power, self.circuit_power) <= 0:
            raise DomainError("AP heights, gains and powers must be positive")
        if not 0 < self.beamwidth < math.pi:
            raise DomainError("beamwidth must lie in (0, pi)")
        if not 0 < self.downtilt < math.pi / 2:
            raise DomainError("downtilt must lie in (0, pi/2)")
        if self.circuit_power >= self.max_power:
            raise DomainError("circuit power must be below the AP power cap")

    @property
    def position3d(self) -> np.ndarray:
        return np.array([self.position[0], self.position[1], self.height])


@dataclass
class UserState:
    position: np.ndarray          # (2,) m
    height: float                 # m
    direction: np.ndarray         # (2,) displacement since the previous slot
    hmd_tx_power: float = 0.0     # W
    hmd_circuit_power: float = 0.1995262315   # W (23 dBm)
    hmd_max_power: float = 0.5011872336       # W (27 dBm)

    def __post_init__(self) -> None:
        self.position = np.asarray(self.position, dtype=float).reshape(2)
        self.direction = np.asarray(self.direction, dtype=float).reshape(2)
        if self.height <= 0:
            raise DomainError("user height must be positive")

    @property
    def position3d(self) -> np.ndarray:
        return np.array([self.position[0], self.position[1], self.height])


@dataclass
class RadioParams:
    carrier_freq: float
    light_speed: float
    noise_psd: float              # W/Hz
    ul_bandwidth: float
    dl_bandwidth: float
    ul_snr_threshold: float
    dl_rate_threshold: float
    ul_fading_exponent: float
    rayleigh_gain: float
    pathloss_exp_los: float
    pathloss_exp_nlos: float
    shadow_var_los: float         # dB^2
    shadow_var_nlos: float        # dB^2
    blockage_angle: float
    interference_radius: float
    area_center: np.ndarray

    def __post_init__(self) -> None:
        self.area_center = np.asarray(self.area_center, dtype=float).reshape(2)
        if self.pathloss_exp_nlos < self.pathloss_exp_los:
            raise DomainError("NLoS exponent must be >= LoS exponent")

    @classmethod
    def from_config(cls, cfg: SimConfig) -> "RadioParams":
        return cls(
            carrier_freq=cfg.carrier_freq, light_speed=cfg.light_speed, noise_psd=cfg.noise_psd,
            ul_bandwidth=cfg.ul_bandwidth, dl_bandwidth=cfg.dl_bandwidth,
            ul_snr_threshold=cfg.ul_snr_threshold, dl_rate_threshold=cfg.dl_rate_threshold,
            ul_fading_exponent=cfg.ul_fading_exponent, rayleigh_gain=cfg.rayleigh_gain,
            pathloss_exp_los=cfg.pathloss_exp_los, pathloss_exp_nlos=cfg.pathloss_exp_nlos,
            shadow_var_los=cfg.shadow_var_los, shadow_var_nlos=cfg.shadow_var_nlos,
            blockage_angle=cfg.blockage_angle, interference_radius=cfg.interference_radius,
            area_center=np.asarray(cfg.area_center),
        )

    @property
    def fspl_db(self) -> float:
        """20 log10(4 pi f_c / c)."""
        return 20.0 * math.log10(4.0 * math.pi * self.carrier_freq / self.light_speed)

    @property
    def sinr_target(self) -> float:
        return 2.0 ** (self.dl_rate_threshold / self.dl_bandwidth) - 1.0


def aps_from_config(cfg: SimConfig) -> list[ApConfig]:
    return [
        ApConfig(
            position=np.array(pos), height=cfg.ap_height, downtilt=cfg.downtilt,
            mainlobe_gain=cfg.mainlobe_gain, sidelobe_gain=cfg.sidelobe_gain,
            beamwidth=cfg.beamwidth, num_elements=cfg.n_elements, max_power=cfg.ap_max_power,
            circuit_power=cfg.ap_circuit_power, decode_capacity=cfg.decode_capacity,
        )
        for pos in cfg.ap_ground_positions()
    ]


@dataclass
class ChannelRealization:
    ul_pathloss: np.ndarray       # (N, J) linear gain d^-alpha
    dl_channel: np.ndarray        # (N, J, K) complex, antenna gain already applied
    blockage: np.ndarray          # (N, J) 0/1
    antenna_gain: np.ndarray      # (N, J) in {G, g}
    interferers: np.ndarray       # (N, N) bool, symmetric, zero diagonal
    distance: np.ndarray          # (N, J) 3D distance, m

    @property
    def n_users(self) -> int:
        return self.ul_pathloss.shape[0]

    def stacked(self) -> np.ndarray:
        """(N, J*K) stacked CoMP channel vectors."""
        n, j, k = self.dl_channel.shape
        return self.dl_channel.reshape(n, j * k)

    def interferer_sets(self) -> list[frozenset[int]]:
        return [frozenset(np.flatnonzero(row).tolist()) for row in self.interferers]


@dataclass
class BeamformerSet:
    beams: np.ndarray                         # (N, J*K) complex
    grams: np.ndarray | None = None           # (N, JK, JK) complex Hermitian, optional
    rank_one: bool = True

    @classmethod
    def zeros(cls, n_users: int, dim: int) -> "BeamformerSet":
        return cls(np.zeros((n_users, dim), dtype=complex))

    def gram(self, i: int) -> np.ndarray:
        if self.grams is not None and not self.rank_one:
            return self.grams[i]
        return np.outer(self.beams[i], self.beams[i].conj())


# ---------------------------------------------------------------------------
# uplink


def ul_pathloss(user: UserState, ap: ApConfig, params: RadioParams) -> float:
    d = float(np.linalg.norm(user.position3d - ap.position3d))
    if d <= 0:
        raise DomainError("user and AP antenna coincide")
    return d ** (-params.ul_fading_exponent)


def ul_snr(assoc: int, user: UserState, ap: ApConfig, params: RadioParams, n_users: int) -> float:
    if n_users < 1:
        raise DomainError("n_users must be >= 1")
    noise = params.noise_psd * params.ul_bandwidth / n_users
    return assoc * user.hmd_tx_power * params.rayleigh_gain * ul_pathloss(user, ap, params) / noise


def decodes(snr: float | np.ndarray, threshold: float) -> bool | np.ndarray:
    return snr >= threshold * (1.0 - DECODE_RTOL)


def ul_snr_matrix(powers: np.ndarray, pathloss: np.ndarray, params: RadioParams) -> np.ndarray:
    """SNR every user would see at every AP with the given HMD powers, (N, J)."""
    n = pathloss.shape[0]
    noise = params.noise_psd * params.ul_bandwidth / n
    return np.asarray(powers)[:, None] * params.rayleigh_gain * pathloss / noise


# ---------------------------------------------------------------------------
# downlink geometry


def boresight_point(ap: ApConfig, params: RadioParams) -> np.ndarray:
    """Ground point B_j hit by the antenna boresight (2D)."""
    offset = params.area_center - ap.position
    r = float(np.linalg.norm(offset))
    if r == 0:
        raise DomainError("AP sits at the area center; boresight direction undefined")
    d = ap.height / math.tan(ap.downtilt)
    return d * offset / r + ap.position


def tilt_angle(user: UserState, ap: ApConfig, params: RadioParams) -> float:
    b = boresight_point(ap, params)
    cb = np.array([b[0] - ap.position[0], b[1] - ap.position[1], -ap.height])
    cd = user.position3d - ap.position3d
    norm = np.linalg.norm(cb) * np.linalg.norm(cd)
    if norm == 0:
        raise DomainError("user at the antenna point")
    return float(np.arccos(np.clip(cb @ cd / norm, -1.0, 1.0)))


def antenna_gain(user: UserState, ap: ApConfig, params: RadioParams) -> float:
    angle = tilt_angle(user, ap, params)
    return ap.mainlobe_gain if angle <= ap.beamwidth / 2 + _ANGLE_TOL else ap.sidelobe_gain


def orientation_angle(user: UserState, ap: ApConfig) -> float:
    to_ap = ap.position - user.position
    na, nx = np.linalg.norm(to_ap), np.linalg.norm(user.direction)
    if nx == 0:
        raise DomainError("zero direction vector")
    if na == 0:
        raise DomainError("user directly below the AP; orientation undefined")
    return float(np.arccos(np.clip(to_ap @ user.direction / (na * nx), -1.0, 1.0)))


def blockage(user: UserState, ap: ApConfig, params: RadioParams) -> int:
    return int(orientation_angle(user, ap) > params.blockage_angle)


def dl_gain_db(distance: float | np.ndarray, gain: float | np.ndarray, blocked: int | np.ndarray,
               shadow_db: float | np.ndarray, params: RadioParams) -> np.ndarray:
    """Per-element |h|^2 in dB: antenna gain minus path loss.

    The path loss is ``10 eta log10 d + 20 log10(4 pi f_c / c) + shadowing``
    with eta switching on the blockage flag.
    """
    eta = np.where(blocked, params.pathloss_exp_nlos, params.pathloss_exp_los)
    loss = 10.0 * eta * np.log10(distance) + params.fspl_db + shadow_db
    return 10.0 * np.log10(gain) - loss


def dl_channel(user: UserState, ap: ApConfig, params: RadioParams, rng: np.random.Generator) -> np.ndarray:
    """Complex K-vector from AP to user; draws K shadowing terms then K phases."""
    d = float(np.linalg.norm(user.position3d - ap.position3d))
    if d <= 0:
        raise DomainError("user and AP antenna coincide")
    b = blockage(user, ap, params)
    f = antenna_gain(user, ap, params)
    var = params.shadow_var_nlos if b else params.shadow_var_los
    shadow = rng.standard_normal(ap.num_elements) * math.sqrt(var)
    phase = rng.uniform(0.0, 2 * math.pi, ap.num_elements)
    mag = 10.0 ** (dl_gain_db(d, f, b, shadow, params) / 20.0)
    return mag * np.exp(1j * phase)


# ---------------------------------------------------------------------------
# vectorized scene evaluation


def distances3d(user_pos: np.ndarray, user_height: np.ndarray, ap_pos: np.ndarray, ap_height: np.ndarray) -> np.ndarray:
    u = np.column_stack([user_pos, user_height])
    a = np.column_stack([ap_pos, ap_height])
    return np.linalg.norm(u[:, None, :] - a[None, :, :], axis=-1)


def antenna_gain_matrix(user_pos: np.ndarray, user_height: np.ndarray, aps: list[ApConfig],
                        params: RadioParams) -> np.ndarray:
    out = np.empty((len(user_pos), len(aps)))
    for j, ap in enumerate(aps):
        b = boresight_point(ap, params)
        cb = np.array([b[0] - ap.position[0], b[1] - ap.position[1], -ap.height])
        cd = np.column_stack([user_pos - ap.position, user_height - ap.height])
        cos = cd @ cb / (np.linalg.norm(cd, axis=1) * np.linalg.norm(cb))
        angle = np.arccos(np.clip(cos, -1.0, 1.0))
        out[:, j] = np.where(angle <= ap.beamwidth / 2 + _ANGLE_TOL, ap.mainlobe_gain, ap.sidelobe_gain)
    return out


def blockage_matrix(user_pos: np.ndarray, directions: np.ndarray, ap_pos: np.ndarray,
                    params: RadioParams) -> np.ndarray:
    """Body blockage for all pairs.  A user exactly below an AP counts as LoS."""
    to_ap = ap_pos[None, :, :] - user_pos[:, None, :]
    na = np.linalg.norm(to_ap, axis=-1)
    nx = np.linalg.norm(directions, axis=-1)
    if np.any(nx == 0):
        raise DomainError("zero direction vector")
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.einsum("njc,nc->nj", to_ap, directions) / (na * nx[:, None])
    cos = np.where(na == 0, 1.0, cos)
    angle = np.arccos(np.clip(cos, -1.0, 1.0))
    return (angle > params.blockage_angle).astype(int)


def interferers(positions: np.ndarray, params: RadioParams) -> np.ndarray:
    """Boolean (N, N) matrix; m interferes with i iff m != i and 2D distance < D^th."""
    positions = np.asarray(positions, dtype=float).reshape(-1, 2)
    d = np.linalg.norm(positions[:, None, :] - positions[None, :, :], axis=-1)
    out = d < params.interference_radius
    np.fill_diagonal(out, False)
    return out


def realize_channels(user_pos: np.ndarray, user_height: np.ndarray, directions: np.ndarray,
                     aps: list[ApConfig], params: RadioParams, shadow_std_normal: np.ndarray,
                     phases: np.ndarray) -> ChannelRealization:
    """Evaluate every link of one slot.

    ``shadow_std_normal`` and ``phases`` are (N, J, K) draws (standard normal
    and uniform on [0, 2 pi)); passing them in keeps the small-scale state
    identical whichever positions (true or predicted) are evaluated.
    """
    ap_pos = np.array([ap.position for ap in aps])
    ap_h = np.array([ap.height for ap in aps])
    dist = distances3d(user_pos, user_height, ap_pos, ap_h)
    if np.any(dist <= 0):
        raise DomainError("user and AP antenna coincide")
    hul = dist ** (-params.ul_fading_exponent)
    gain = antenna_gain_matrix(user_pos, user_height, aps, params)
    blocked = blockage_matrix(user_pos, directions, ap_pos, params)
    std = np.where(blocked, math.sqrt(params.shadow_var_nlos), math.sqrt(params.shadow_var_los))
    shadow = shadow_std_normal * std[:, :, None]
    gdb = dl_gain_db(dist[:, :, None], gain[:, :, None], blocked[:, :, None], shadow, params)
    h = 10.0 ** (gdb / 20.0) * np.exp(1j * phases)
    return ChannelRealization(
        ul_pathloss=hul, dl_channel=h, blockage=blocked, antenna_gain=gain,
        interferers=interferers(user_pos, params), distance=dist,
    )


# ---------------------------------------------------------------------------
# downlink rate, power budgets, objective


def block_selector(j: int, n_aps: int, n_elements: int) -> np.ndarray:
    """Z_j: identity on AP j's K x K diagonal block, zero elsewhere."""
    z = np.zeros((n_aps * n_elements, n_aps * n_elements))
    s = slice(j * n_elements, (j + 1) * n_elements)
    z[s, s] = np.eye(n_elements)
    return z


def gram(v: np.ndarray) -> np.ndarray:
    """v v^H."""
    v = np.asarray(v)
    return np.outer(v, v.conj())


def received_power(h: np.ndarray, g: np.ndarray) -> float:
    """|h^H g|^2 for stacked CoMP vectors."""
    return float(abs(np.vdot(h, g)) ** 2)


def dl_rate(i: int, dl_assoc: np.ndarray, stacked_channels: np.ndarray, beams: BeamformerSet | np.ndarray,
            interferer_matrix: np.ndarray, params: RadioParams) -> float:
    g = beams.beams if isinstance(beams, BeamformerSet) else np.asarray(beams)
    a = np.asarray(dl_assoc)
    if not a[i]:
        return 0.0
    signal = received_power(stacked_channels[i], g[i])
    interference = sum(
        received_power(stacked_channels[m], g[m]) for m in np.flatnonzero(interferer_matrix[i]) if a[m]
    )
    noise = params.noise_psd * params.dl_bandwidth
    return params.dl_bandwidth * math.log2(1.0 + signal / (noise + interference))


def ap_transmit_power(dl_assoc: np.ndarray, beams: np.ndarray, n_aps: int, n_elements: int) -> np.ndarray:
    """Sum_i a_i ||g_ij||^2 for each AP j (the tr(Z_j G_i) terms)."""
    a = np.asarray(dl_assoc, dtype=float)
    g = np.asarray(beams).reshape(len(a), n_aps, n_elements)
    return np.einsum("i,ijk->j", a, np.abs(g) ** 2)


def ap_power_check(dl_assoc: np.ndarray, beams: np.ndarray, aps: list[ApConfig], rtol: float = 1e-9) -> np.ndarray:
    """Per-AP pass flags for sum_i a_i tr(Z_j G_i) + E^c_j <= E~_j."""
    k = aps[0].num_elements
    tx = ap_transmit_power(dl_assoc, beams, len(aps), k)
    cap = np.array([ap.max_power - ap.circuit_power for ap in aps])
    return tx <= cap * (1.0 + rtol)


def hmd_power_check(user: UserState) -> bool:
    return hmd_power_ok(user.hmd_tx_power, user.hmd_circuit_power, user.hmd_max_power)


def hmd_power_ok(p: float | np.ndarray, p_circuit: float, p_max: float) -> bool | np.ndarray:
    # compared against the budget p~ - p^c so that p == budget passes exactly
    return (np.asarray(p) >= 0) & (np.asarray(p) <= p_max - p_circuit)


@dataclass
class FopSummary:
    ul_terms: np.ndarray          # B_t^ul per slot
    dl_terms: np.ndarray          # B_t^dl per slot
    power_terms: np.ndarray       # sum_ij a_ij p_tot / p~ per slot
    fop: float                    # B-bar(T)
    objective: float


def fop_and_objective(ul_assoc: np.ndarray, dl_serve: np.ndarray, hmd_power: np.ndarray,
                      p_circuit: float, p_max: float) -> FopSummary:
    """FoP and objective over a window.

    ``ul_assoc`` is (T, N, J), ``dl_serve`` (T, N), ``hmd_power`` (T, N).
    """
    ul = np.asarray(ul_assoc, dtype=float)
    dl = np.asarray(dl_serve, dtype=float)
    p = np.asarray(hmd_power, dtype=float)
    if ul.ndim != 3 or ul.shape[0] == 0:
        raise ValueError("need a non-empty (T, N, J) association window")
    n = ul.shape[1]
    b_ul = ul.sum(axis=(1, 2)) / n
    b_dl = dl.sum(axis=1) / n
    power = np.einsum("tnj,tn->t", ul, (p + p_circuit) / p_max)
    fop = float(np.mean(b_ul + b_dl))
    return FopSummary(b_ul, b_dl, power, fop, fop - float(np.mean(power)))
