"""Per-slot control loop shared by pretraining and prediction-driven runs.

Decisions for a slot are taken on the channel the controller believes in
(built from predicted positions during a run) and then audited and executed
against the true channel of that slot.  A decision failing the audit is
cancelled: nothing is transmitted and the logged reward is penalized.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .allocator import (LinkAgent, audit_downlink, audit_uplink, candidate_groups, downlink_evaluate,
                        encode_downlink_state, encode_uplink_state, penalized, select_downlink_action,
                        select_uplink_action, ul_decoded, uplink_power_closed_form, uplink_reward)
from .baselines import greedy_downlink, greedy_uplink
from .config import SimConfig
from .esn import EsnModel
from .net_model import ChannelRealization
from .scene import NetworkScene
from .traces import synth_traces

_TAG_PRETRAIN_TRACES = 41
_TAG_AGENTS = 43
_TAG_RECOVERY = 47
PRETRAIN_STREAM = 1000


@dataclass
class SlotRecord:
    slot: int
    ul_reward: float
    dl_reward: float
    ul_executed: bool
    dl_executed: bool
    ul_decoded: int
    dl_served: int
    b_ul: float
    b_dl: float
    power_term: float
    objective: float
    epsilon: float
    ul_candidate: int
    dl_candidate: int
    dl_status: str
    audit: dict[str, bool] = field(default_factory=dict)
    ul_loss: float | None = None
    dl_loss: float | None = None
    # executed decision, kept for the independent audit pass
    ul_assoc: np.ndarray | None = None
    hmd_power: np.ndarray | None = None
    dl_serve: np.ndarray | None = None
    beams: np.ndarray | None = None


@dataclass
class Controller:
    cfg: SimConfig
    algorithm: str
    caps: np.ndarray
    rng: np.random.Generator
    ul_agent: LinkAgent | None = None
    dl_agent: LinkAgent | None = None
    ul_counts: np.ndarray | None = None
    ul_powers: np.ndarray | None = None
    dl_counts: np.ndarray | None = None
    dl_beams: np.ndarray | None = None
    prev_ul_reward: float = 1.0
    prev_dl_reward: float = 1.0
    _pending_ul: tuple | None = None
    _pending_dl: tuple | None = None

    @classmethod
    def create(cls, cfg: SimConfig, caps: np.ndarray) -> "Controller":
        n, j, k = cfg.n_users, cfg.n_aps, cfg.n_elements
        rng = np.random.default_rng([cfg.seed, _TAG_RECOVERY])
        ctl = cls(cfg, cfg.algorithm, np.asarray(caps, dtype=float), rng)
        if cfg.algorithm != "heuristic":
            agent_rng = np.random.default_rng([cfg.seed, _TAG_AGENTS])
            ul_in = j + n * j + n
            dl_in = j + n * j * k + n * n + n * j * k
            ctl.ul_agent = LinkAgent.create(ul_in, n * j, cfg, cfg.lr_ul, cfg.algorithm, agent_rng)
            ctl.dl_agent = LinkAgent.create(dl_in, n, cfg, cfg.lr_dl, cfg.algorithm, agent_rng)
        ctl.reset_episode()
        return ctl

    def reset_episode(self) -> None:
        n, j, k = self.cfg.n_users, self.cfg.n_aps, self.cfg.n_elements
        self.ul_counts = np.zeros(j)
        self.ul_powers = np.zeros(n)
        self.dl_counts = np.zeros(j)
        self.dl_beams = np.zeros((n, j * k), dtype=complex)
        self._pending_ul = self._pending_dl = None

    # -- uplink -------------------------------------------------------------
    def _uplink(self, ch_dec: ChannelRealization, ch_true: ChannelRealization, epsilon: float | None,
                learn: bool) -> tuple:
        cfg = self.cfg
        n, j = cfg.n_users, cfg.n_aps
        state = None
        loss = None
        if self.ul_agent is None:
            assoc, p = greedy_uplink(ch_dec.ul_pathloss, cfg)
            chosen_reward, index = uplink_reward(assoc, p, ch_dec.ul_pathloss, cfg), 0
        else:
            state = encode_uplink_state(self.ul_counts, ch_dec.ul_pathloss, self.ul_powers, cfg)
            if self._pending_ul is not None and learn:
                loss = self.ul_agent.record(*self._pending_ul, state)
            self._pending_ul = None
            probs = self.ul_agent.act(state, epsilon)
            groups = candidate_groups(probs, self.ul_agent.quantizer, (n, j), n)
            choice = select_uplink_action(groups, ch_dec.ul_pathloss, cfg)
            assoc, p, chosen_reward, index = choice.assoc, choice.powers, choice.reward, choice.index
        if cfg.refine_at_execution:
            p = uplink_power_closed_form(assoc, ch_true.ul_pathloss, cfg)
        flags = audit_uplink(assoc, p, ch_true.ul_pathloss, cfg)
        if flags["ul_ok"]:
            reward = uplink_reward(assoc, p, ch_true.ul_pathloss, cfg)
            exec_assoc, exec_p = assoc, p
            self.ul_counts = assoc.sum(axis=0).astype(float)
            self.ul_powers = p
            if state is not None:
                self._pending_ul = (state, assoc)
        else:
            reward = penalized(chosen_reward, self.prev_ul_reward, cfg.penalty_factor)
            exec_assoc, exec_p = np.zeros_like(assoc), np.zeros(n)
            if state is not None and learn:
                loss = self.ul_agent.record(state, assoc, state)
        self.prev_ul_reward = chosen_reward
        return exec_assoc, exec_p, reward, flags, index, loss

    # -- downlink -----------------------------------------------------------
    def _downlink(self, ch_dec: ChannelRealization, ch_true: ChannelRealization, epsilon: float | None,
                  learn: bool) -> tuple:
        cfg = self.cfg
        n = cfg.n_users
        state = None
        loss = None
        if self.dl_agent is None:
            out = greedy_downlink(ch_dec, cfg, self.caps, self.rng)
        else:
            state = encode_downlink_state(self.dl_counts, ch_dec, self.dl_beams, cfg, self.caps)
            if self._pending_dl is not None and learn:
                loss = self.dl_agent.record(*self._pending_dl, state)
            self._pending_dl = None
            probs = self.dl_agent.act(state, epsilon)
            groups = candidate_groups(probs, self.dl_agent.quantizer, (n,), n)
            out = select_downlink_action(groups, ch_dec, cfg, self.caps, self.rng)
        serve, beams, status = out.serve, out.beams, out.status
        if cfg.refine_at_execution and serve.sum() > 0 and ch_true is not ch_dec:
            again = downlink_evaluate(serve, ch_true, cfg, self.caps, self.rng)
            beams, status = again.beams, again.status
        flags = audit_downlink(serve, beams, ch_true, cfg, self.caps)
        if flags["dl_ok"]:
            reward = float(serve.sum() / n)
            exec_serve, exec_beams = serve, beams
            self.dl_counts = np.full(cfg.n_aps, float(serve.sum()))
            self.dl_beams = beams
            if state is not None:
                self._pending_dl = (state, serve)
        else:
            reward = penalized(out.reward, self.prev_dl_reward, cfg.penalty_factor)
            exec_serve, exec_beams = np.zeros_like(serve), np.zeros_like(beams)
            if state is not None and learn:
                loss = self.dl_agent.record(state, serve, state)
        self.prev_dl_reward = out.reward
        return exec_serve, exec_beams, reward, flags, out.index, status, loss

    def step(self, slot: int, ch_dec: ChannelRealization, ch_true: ChannelRealization,
             epsilon: float | None = None, learn: bool = True) -> SlotRecord:
        cfg = self.cfg
        eps = epsilon if epsilon is not None else (self.ul_agent.schedule.epsilon if self.ul_agent else 0.0)
        assoc, p, r_ul, f_ul, i_ul, l_ul = self._uplink(ch_dec, ch_true, epsilon, learn)
        serve, beams, r_dl, f_dl, i_dl, status, l_dl = self._downlink(ch_dec, ch_true, epsilon, learn)
        n = cfg.n_users
        dec = ul_decoded(assoc, p, ch_true.ul_pathloss, cfg)
        b_ul = float(dec.sum() / n)
        b_dl = float(serve.sum() / n)
        power = float(np.sum(dec * ((p + cfg.hmd_circuit_power) / cfg.hmd_max_power)[:, None]))
        return SlotRecord(slot, r_ul, r_dl, f_ul["ul_ok"], f_dl["dl_ok"], int(dec.sum()), int(serve.sum()),
                          b_ul, b_dl, power, b_ul + b_dl - power, float(eps), i_ul, i_dl, status,
                          {**f_ul, **f_dl}, l_ul, l_dl, assoc, p, serve, beams)


# ---------------------------------------------------------------------------


def episode_lengths(total: int, episodes: int) -> list[int]:
    episodes = max(1, min(episodes, total)) if total > 0 else 0
    base, extra = divmod(total, episodes) if episodes else (0, 0)
    return [base + (1 if e < extra else 0) for e in range(episodes)]


def pretrain_scenes(cfg: SimConfig, n_realizations: int | None = None):
    """Yield the synthetic scene of every pretraining episode, in order."""
    total = cfg.pretrain_realizations if n_realizations is None else n_realizations
    for e, length in enumerate(episode_lengths(total, cfg.n_episodes)):
        rng = np.random.default_rng([cfg.seed, _TAG_PRETRAIN_TRACES, e])
        traces = synth_traces(cfg.n_users, length, rng, cfg.area_size, cfg.user_speed_max, cfg.user_turn_max)
        yield NetworkScene.create(cfg, traces, stream=PRETRAIN_STREAM + e)


def pretrain(controller: Controller, n_realizations: int | None = None) -> list[SlotRecord]:
    """Train both agents on fresh synthetic episodes, deciding on true channels."""
    if controller.ul_agent is None:
        return []
    records: list[SlotRecord] = []
    for scene in pretrain_scenes(controller.cfg, n_realizations):
        controller.reset_episode()
        for t in range(scene.n_slots):
            ch = scene.channels(t)
            rec = controller.step(len(records), ch, ch, None, learn=True)
            records.append(rec)
    return records


def make_esn_models(cfg: SimConfig, n_users: int) -> list[EsnModel]:
    return [
        EsnModel.create(np.random.default_rng([cfg.seed, 53, i]), cfg.esn_input_dim, cfg.esn_reservoir_dim,
                        cfg.esn_output_dim, cfg.esn_window, cfg.esn_workers, cfg.esn_regularization,
                        cfg.esn_strong_convexity, cfg.esn_smoothness, cfg.esn_max_rounds, cfg.esn_step_rule,
                        cfg.esn_input_scale, cfg.esn_spectral_radius, cfg.esn_input_mode)
        for i in range(n_users)
    ]


@dataclass
class Forecast:
    """Positions and headings the controller decides on, per slot."""

    positions: np.ndarray           # (T, N, 2)
    directions: np.ndarray          # (T, N, 2)
    mask: np.ndarray                # (T,) True where the slot was forecast by the ESNs
    truth: bool = False             # True when decisions use the current true positions


def forecast_positions(scene: NetworkScene, esn_models: list[EsnModel] | None, horizon: int,
                       retrain_interval: int) -> Forecast:
    """Run the predictors over the trace and schedule the position used at each slot.

    At slot t every model observes the true position, retrains when
    t % retrain_interval == 0, and rolls ``horizon`` steps ahead; the end
    point becomes the decision position of slot t + horizon.  Slots before
    the first forecast lands hold the slot-0 position.  A zero horizon (or
    no models) bypasses prediction.
    """
    pos = scene.traces.positions
    n_slots, n = scene.n_slots, scene.n_users
    if horizon == 0 or esn_models is None:
        return Forecast(pos.copy(), scene.directions.copy(), np.zeros(n_slots, dtype=bool), truth=True)
    positions = np.broadcast_to(pos[:1], pos.shape).copy() if n_slots else pos.copy()
    directions = np.broadcast_to(scene.directions[:1], pos.shape).copy() if n_slots else pos.copy()
    mask = np.zeros(n_slots, dtype=bool)
    for t in range(max(0, n_slots - horizon)):
        for i, model in enumerate(esn_models):
            model.observe(pos[t, i])
            if t % retrain_interval == 0:
                model.fit()
        paths = np.array([model.predict(horizon) for model in esn_models])    # (N, M, 2)
        prev = paths[:, -2] if horizon > 1 else pos[t]
        heading = paths[:, -1] - prev
        still = np.all(heading == 0, axis=1)
        heading[still] = scene.directions[t][still]
        positions[t + horizon] = paths[:, -1]
        directions[t + horizon] = heading
        mask[t + horizon] = True
    return Forecast(positions, directions, mask)


def orchestrate(scene: NetworkScene, controller: Controller, forecast: Forecast,
                epsilon: float | None = None, learn: bool = True) -> list[SlotRecord]:
    """Decide every slot on the forecast channel and execute on the true one."""
    controller.reset_episode()
    records = []
    for t in range(scene.n_slots):
        ch_true = scene.channels(t)
        ch_dec = ch_true if forecast.truth else scene.channels(t, forecast.positions[t], forecast.directions[t])
        records.append(controller.step(t, ch_dec, ch_true, epsilon, learn))
    return records


def moving_average(values: list[float] | np.ndarray, window: int = 50) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return v
    c = np.cumsum(np.insert(v, 0, 0.0))
    idx = np.arange(1, v.size + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)
