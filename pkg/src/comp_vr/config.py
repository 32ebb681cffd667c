"""Simulation configuration.

Every physical constant lives here in SI units unless the field name says
otherwise (``*_dbm``, ``*_db``).  Conversions to linear units happen through
the properties at the bottom of :class:`SimConfig`; nothing downstream should
touch a dB value directly.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

# (N users -> per-AP decode capacity) pairs used in the comparison study.
DEFAULT_DECODE_CAPACITY = {8: 3, 12: 5, 16: 6, 20: 7}

ALGORITHMS = ("proposed", "droo", "knn", "heuristic")


def db_to_linear(x_db: float) -> float:
    return 10.0 ** (x_db / 10.0)


def linear_to_db(x: float) -> float:
    return 10.0 * math.log10(x)


def dbm_to_watts(x_dbm: float) -> float:
    return 1e-3 * 10.0 ** (x_dbm / 10.0)


def watts_to_dbm(x_w: float) -> float:
    return 10.0 * math.log10(x_w / 1e-3)


class ConfigError(ValueError):
    """Raised for invalid or inconsistent configuration values."""


@dataclass
class SimConfig:
    # -- topology
    n_aps: int = 3                       # J
    n_elements: int = 2                  # K, antenna elements per AP
    n_users: int = 16                    # N
    decode_capacity: int | None = None   # M~, None -> paper pair for n_users
    area_size: float = 500.0             # m, square side
    area_center: tuple[float, float] = (250.0, 250.0)  # m, (x_o, y_o)
    # AP ground positions; None -> evenly spaced on a circle around the center
    ap_positions: list[list[float]] | None = None
    ap_ring_radius: float = 150.0        # m, used when ap_positions is None

    # -- downlink antenna / AP
    mainlobe_gain_db: float = 5.0        # G
    sidelobe_gain_db: float = 1.0        # g
    beamwidth: float = math.pi / 3       # phi, rad
    downtilt: float = math.pi / 3        # theta_j, rad
    ap_height: float = 5.5               # H_j, m
    ap_max_power_dbm: float = 40.0       # E~_j
    ap_circuit_power_dbm: float = 30.0   # E^c_j

    # -- radio
    carrier_freq: float = 28e9           # Hz
    light_speed: float = 3.0e8           # m/s
    noise_psd_dbm_hz: float = -167.0     # N_0
    ul_bandwidth: float = 200e6          # Hz
    dl_bandwidth: float = 800e6          # Hz
    ul_snr_threshold: float = 200.0      # theta^th, linear
    dl_rate_threshold: float = 1e9       # gamma^th, bit/s
    ul_fading_exponent: float = 5.0      # alpha
    rayleigh_gain: float = 0.3           # c_ij
    pathloss_exp_los: float = 2.0
    pathloss_exp_nlos: float = 2.4
    shadow_var_los: float = 5.3          # dB^2
    shadow_var_nlos: float = 5.27        # dB^2
    blockage_angle: float = math.pi / 2  # vartheta, rad
    interference_radius: float = 50.0    # D^th, m
    freeze_shadowing: bool = False       # True -> one shadowing draw per link per run

    # -- users / HMDs
    user_height_mean: float = 1.8        # m
    user_height_var: float = 0.05        # m^2
    user_height_clamp: tuple[float, float] = (1.4, 2.2)
    hmd_circuit_power_dbm: float = 23.0  # p^c
    hmd_max_power_dbm: float = 27.0      # p~
    user_speed_max: float = 1.5          # m/slot, synthetic traces
    user_turn_max: float = math.pi / 12  # rad/slot, synthetic traces

    # -- ESN predictor
    esn_strong_convexity: float = 1.0    # zeta
    esn_smoothness: float = 1.0          # mu (unused at runtime)
    esn_regularization: float = 0.25    # xi
    esn_max_rounds: int = 1000           # r_max
    esn_window: int = 6                  # Q
    esn_workers: int = 3                 # slave workers, one per AP
    esn_step_rule: str = "full"          # "full" | "harmonic"
    horizon: int = 8                     # M
    esn_input_dim: int = 2               # N_i
    esn_output_dim: int = 2              # N_o
    esn_reservoir_dim: int = 300         # N_r
    esn_spectral_radius: float | None = None  # None -> raw uniform(0,1) weights
    esn_input_mode: str = "displacement"  # "displacement" | "position"
    esn_input_scale: float = 1.0         # m per input unit
    retrain_interval: int = 5            # T_pr

    # -- policy networks / DRL
    hidden_sizes: tuple[int, int] = (120, 80)
    replay_capacity: int = 1_000_000     # C
    n_episodes: int = 10                 # N_epi
    n_epochs: int = 1000                 # N_epo
    penalty_factor: float = 10.0         # varpi
    noise_var: float = 0.36              # sigma^2 of exploration noise
    epsilon0: float = 0.99
    epsilon_decay: float = 0.999
    epsilon_floor: float = 0.01
    lr_ul: float = 0.1
    lr_dl: float = 0.01
    batch_size: int = 64                 # |T_t|
    train_interval: int = 20             # T_ti
    pretrain_realizations: int = 10_000
    recovery_candidates: int = 100       # R, Gaussian randomization draws
    refine_at_execution: bool = True
    eval_epsilon: float = 0.0

    # -- run
    n_slots: int = 5000                  # T
    seed: int = 0
    algorithm: str = "proposed"

    def __post_init__(self) -> None:
        self.area_center = tuple(float(v) for v in self.area_center)
        self.user_height_clamp = tuple(float(v) for v in self.user_height_clamp)
        self.hidden_sizes = tuple(int(v) for v in self.hidden_sizes)
        if self.decode_capacity is None:
            self.decode_capacity = DEFAULT_DECODE_CAPACITY.get(self.n_users, max(1, math.ceil(self.n_users / self.n_aps)))
        self.validate()

    # ------------------------------------------------------------------
    def validate(self) -> None:
        positive = [
            "n_aps", "n_elements", "n_users", "decode_capacity", "area_size", "beamwidth",
            "downtilt", "ap_height", "carrier_freq", "light_speed", "ul_bandwidth",
            "dl_bandwidth", "ul_snr_threshold", "dl_rate_threshold", "ul_fading_exponent",
            "rayleigh_gain", "pathloss_exp_los", "pathloss_exp_nlos", "shadow_var_los",
            "shadow_var_nlos", "blockage_angle", "interference_radius", "user_height_mean",
            "esn_strong_convexity", "esn_regularization", "esn_max_rounds", "esn_window",
            "esn_workers", "esn_input_dim", "esn_output_dim", "esn_reservoir_dim",
            "retrain_interval", "replay_capacity", "n_episodes", "n_epochs", "batch_size",
            "train_interval", "lr_ul", "lr_dl", "recovery_candidates",
        ]
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)!r}")
        if not 0 < self.beamwidth < math.pi:
            raise ConfigError("beamwidth must lie in (0, pi)")
        if not 0 < self.downtilt < math.pi / 2:
            raise ConfigError("downtilt must lie in (0, pi/2)")
        if self.pathloss_exp_nlos < self.pathloss_exp_los:
            raise ConfigError("NLoS path-loss exponent must be >= the LoS exponent")
        if self.ap_circuit_power >= self.ap_max_power:
            raise ConfigError("AP circuit power must be below the AP power cap")
        if self.hmd_circuit_power >= self.hmd_max_power:
            raise ConfigError("HMD circuit power must be below the HMD power cap")
        if self.horizon < 0:
            raise ConfigError("horizon must be >= 0")
        if self.n_slots < 0:
            raise ConfigError("n_slots must be >= 0")
        if not 0 <= self.epsilon0 < 1 or not 0 < self.epsilon_decay <= 1:
            raise ConfigError("exploration schedule out of range")
        if self.esn_step_rule not in ("full", "harmonic"):
            raise ConfigError(f"unknown esn_step_rule {self.esn_step_rule!r}")
        if self.esn_input_mode not in ("displacement", "position"):
            raise ConfigError(f"unknown esn_input_mode {self.esn_input_mode!r}")
        if not self.esn_input_scale > 0:
            raise ConfigError("esn_input_scale must be positive")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if self.ap_positions is not None and len(self.ap_positions) != self.n_aps:
            raise ConfigError("ap_positions must list one point per AP")
        lo, hi = self.user_height_clamp
        if not 0 < lo <= hi:
            raise ConfigError("user_height_clamp must satisfy 0 < lo <= hi")

    # -- derived linear quantities ---------------------------------------
    @property
    def mainlobe_gain(self) -> float:
        return db_to_linear(self.mainlobe_gain_db)

    @property
    def sidelobe_gain(self) -> float:
        return db_to_linear(self.sidelobe_gain_db)

    @property
    def noise_psd(self) -> float:
        """N_0 in W/Hz."""
        return dbm_to_watts(self.noise_psd_dbm_hz)

    @property
    def ap_max_power(self) -> float:
        return dbm_to_watts(self.ap_max_power_dbm)

    @property
    def ap_circuit_power(self) -> float:
        return dbm_to_watts(self.ap_circuit_power_dbm)

    @property
    def hmd_circuit_power(self) -> float:
        return dbm_to_watts(self.hmd_circuit_power_dbm)

    @property
    def hmd_max_power(self) -> float:
        return dbm_to_watts(self.hmd_max_power_dbm)

    @property
    def hmd_power_budget(self) -> float:
        """Largest admissible HMD transmit power, p~ - p^c."""
        return self.hmd_max_power - self.hmd_circuit_power

    @property
    def sinr_target(self) -> float:
        """Linear SINR needed for the downlink rate threshold, 2^(gamma/W) - 1."""
        return 2.0 ** (self.dl_rate_threshold / self.dl_bandwidth) - 1.0

    @property
    def dl_noise_power(self) -> float:
        return self.noise_psd * self.dl_bandwidth

    def ap_ground_positions(self) -> list[tuple[float, float]]:
        if self.ap_positions is not None:
            return [(float(x), float(y)) for x, y in self.ap_positions]
        cx, cy = self.area_center
        out = []
        for j in range(self.n_aps):
            ang = math.pi / 2 + 2 * math.pi * j / self.n_aps
            out.append((cx + self.ap_ring_radius * math.cos(ang), cy + self.ap_ring_radius * math.sin(ang)))
        return out

    # -- (de)serialization -------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        for k, v in out.items():
            if isinstance(v, tuple):
                out[k] = list(v)
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SimConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def replace(self, **changes: Any) -> "SimConfig":
        data = self.to_dict()
        data.update(changes)
        if "n_users" in changes and "decode_capacity" not in changes:
            data["decode_capacity"] = None
        return SimConfig.from_dict(data)


def load_config(path: str | Path, overrides: dict[str, Any] | None = None) -> SimConfig:
    """Read a flat JSON or TOML key/value file; ``overrides`` win over file values."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".toml":
        try:
            import tomllib  # type: ignore[import-not-found]
        except ModuleNotFoundError:  # python < 3.11
            import tomli as tomllib
        data = tomllib.loads(text)
    else:
        data = json.loads(text)
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a flat key/value mapping")
    data.update(overrides or {})
    return SimConfig.from_dict(data)


def coerce_value(cfg_field: dataclasses.Field, raw: str) -> Any:
    """Parse a CLI ``key=value`` string into the type of ``cfg_field``."""
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    if isinstance(value, str) and cfg_field.type in ("float", "int", "int | None", "float | None"):
        raise ConfigError(f"{cfg_field.name}: expected a number, got {raw!r}")
    return value


def parse_overrides(pairs: list[str]) -> dict[str, Any]:
    fields = {f.name: f for f in dataclasses.fields(SimConfig)}
    out: dict[str, Any] = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override must look like key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        key = key.strip().replace("-", "_")
        if key not in fields:
            raise ConfigError(f"unknown config key {key!r}")
        out[key] = coerce_value(fields[key], raw.strip())
    return out
