"""End-to-end runs, paired comparisons, the independent audit and report files."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from .config import ALGORITHMS, SimConfig
from .esn import nrmse
from .net_model import (ChannelRealization, ap_power_check, decodes, dl_rate, hmd_power_ok,
                        ul_snr_matrix)
from .orchestrator import (Controller, Forecast, SlotRecord, forecast_positions, make_esn_models, moving_average,
                           orchestrate, pretrain, pretrain_scenes)
from .policy_net import save_checkpoint
from .scene import NetworkScene
from .traces import TraceSet, synth_traces

_TAG_EVAL_TRACES = 61
MA_WINDOW = 50
AUDIT_SINR_RTOL = 1e-4

SLOT_COLUMNS = ["slot", "ul_reward", "dl_reward", "ul_executed", "dl_executed", "ul_decoded", "dl_served",
                "b_ul", "b_dl", "power_term", "objective", "ul_candidate", "dl_candidate", "dl_status"]
EPOCH_COLUMNS = ["epoch", "ul_reward", "dl_reward", "ul_reward_ma", "dl_reward_ma", "epsilon",
                 "ul_executed", "dl_executed", "ul_loss", "dl_loss"]


@dataclass
class RunReport:
    algorithm: str
    config: dict[str, Any]
    slots: list[SlotRecord] = field(default_factory=list)
    epochs: list[SlotRecord] = field(default_factory=list)
    nrmse: list[float] = field(default_factory=list)
    failure: str | None = None
    controller: Controller | None = None

    def summary(self) -> dict[str, Any]:
        s = self.slots
        out: dict[str, Any] = {
            "algorithm": self.algorithm,
            "n_slots": len(s),
            "n_epochs": len(self.epochs),
            "failure": self.failure,
        }
        if s:
            obj = np.array([r.objective for r in s])
            out.update(
                objective=float(obj.mean()),
                fop=float(np.mean([r.b_ul + r.b_dl for r in s])),
                mean_ul_reward=float(np.mean([r.ul_reward for r in s])),
                mean_dl_reward=float(np.mean([r.dl_reward for r in s])),
                ul_cancelled=int(sum(not r.ul_executed for r in s)),
                dl_cancelled=int(sum(not r.dl_executed for r in s)),
            )
        if self.epochs:
            out.update(plateau("ul", [r.ul_reward for r in self.epochs]))
            out.update(plateau("dl", [r.dl_reward for r in self.epochs]))
        if self.nrmse:
            out.update(nrmse_max=float(max(self.nrmse)), nrmse_mean=float(np.mean(self.nrmse)),
                       nrmse_per_user=[float(v) for v in self.nrmse])
        return out


def plateau(prefix: str, rewards: list[float], tail: int = 500) -> dict[str, float]:
    """Mean and spread of the moving-average reward over the last ``tail`` epochs."""
    ma = moving_average(rewards, MA_WINDOW)[-tail:]
    return {f"{prefix}_plateau_mean": float(ma.mean()), f"{prefix}_plateau_std": float(ma.std())}


def eval_traces(cfg: SimConfig) -> TraceSet:
    rng = np.random.default_rng([cfg.seed, _TAG_EVAL_TRACES])
    return synth_traces(cfg.n_users, cfg.n_slots, rng, cfg.area_size, cfg.user_speed_max, cfg.user_turn_max)


def prepare(cfg: SimConfig, traces: TraceSet | None = None) -> tuple[NetworkScene, Forecast]:
    """Scene and forecast shared by every algorithm of a comparison."""
    traces = eval_traces(cfg) if traces is None else traces
    scene = NetworkScene.create(cfg, traces)
    models = make_esn_models(cfg, scene.n_users) if cfg.horizon > 0 else None
    return scene, forecast_positions(scene, models, cfg.horizon, cfg.retrain_interval)


def forecast_nrmse(scene: NetworkScene, forecast: Forecast) -> list[float]:
    mask = forecast.mask
    if forecast.truth or mask.sum() < 2:
        return []
    true = scene.traces.positions[mask]
    pred = forecast.positions[mask]
    return [nrmse(pred[:, i], true[:, i]) for i in range(scene.n_users)]


def run_with(cfg: SimConfig, scene: NetworkScene, forecast: Forecast) -> RunReport:
    report = RunReport(cfg.algorithm, cfg.to_dict())
    stage = "pretraining"
    try:
        controller = Controller.create(cfg, scene.power_caps)
        report.controller = controller
        report.epochs = pretrain(controller)
        stage = "orchestration"
        report.slots = orchestrate(scene, controller, forecast, cfg.eval_epsilon, learn=True)
        report.nrmse = forecast_nrmse(scene, forecast)
    except Exception as exc:              # surfaced as a labelled failure record
        report.failure = f"{stage}: {type(exc).__name__}: {exc}"
    return report


def run_experiment(cfg: SimConfig, traces: TraceSet | None = None) -> RunReport:
    """Pretrain, then run the configured algorithm over ``cfg.n_slots`` slots."""
    try:
        scene, forecast = prepare(cfg, traces)
    except Exception as exc:
        return RunReport(cfg.algorithm, cfg.to_dict(), failure=f"prediction: {type(exc).__name__}: {exc}")
    return run_with(cfg, scene, forecast)


def compare(cfg: SimConfig, algorithms: Iterable[str] = ALGORITHMS,
            traces: TraceSet | None = None) -> dict[str, RunReport]:
    """Paired runs: every algorithm sees the same traces, forecasts and channel draws."""
    scene, forecast = prepare(cfg, traces)
    return {alg: run_with(cfg.replace(algorithm=alg), scene, forecast) for alg in algorithms}


# ---------------------------------------------------------------------------
# independent audit


def audit_decision(rec: SlotRecord, ch: ChannelRealization, scene: NetworkScene) -> list[str]:
    """Constraint violations of one executed decision, recomputed from the network model."""
    cfg, params = scene.cfg, scene.params
    bad = []
    a = np.asarray(rec.ul_assoc)
    p = np.asarray(rec.hmd_power)
    if np.any(a.sum(axis=1) > 1):
        bad.append("single-ap")
    if np.any(a.sum(axis=0) > cfg.decode_capacity):
        bad.append("decode-capacity")
    snr = ul_snr_matrix(p, ch.ul_pathloss, params)
    if np.any(a.astype(bool) & ~decodes(snr, params.ul_snr_threshold)):
        bad.append("ul-snr")
    if not np.all(hmd_power_ok(p, cfg.hmd_circuit_power, cfg.hmd_max_power)):
        bad.append("hmd-power")
    serve = np.asarray(rec.dl_serve)
    h = ch.stacked()
    for i in np.flatnonzero(serve):
        rate = dl_rate(int(i), serve, h, rec.beams, ch.interferers, params)
        sinr = 2.0 ** (rate / params.dl_bandwidth) - 1.0
        if sinr < params.sinr_target * (1.0 - AUDIT_SINR_RTOL):
            bad.append(f"dl-rate[{i}]")
    if not np.all(ap_power_check(serve, rec.beams, scene.aps, rtol=1e-6)):
        bad.append("ap-power")
    if np.any(rec.beams[serve == 0] != 0):
        bad.append("unserved-beam")
    return bad


def audit_run(scene: NetworkScene, records: list[SlotRecord]) -> list[tuple[int, list[str]]]:
    out = []
    for rec in records:
        bad = audit_decision(rec, scene.channels(rec.slot), scene)
        if bad:
            out.append((rec.slot, bad))
    return out


def audit_pretraining(cfg: SimConfig, records: list[SlotRecord]) -> list[tuple[int, list[str]]]:
    out = []
    it = iter(records)
    for scene in pretrain_scenes(cfg):
        for t in range(scene.n_slots):
            rec = next(it, None)
            if rec is None:
                return out
            bad = audit_decision(rec, scene.channels(t), scene)
            if bad:
                out.append((rec.slot, bad))
    return out


# ---------------------------------------------------------------------------
# report files


def _fmt(v: Any) -> Any:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return v


def write_slots_csv(path: Path, records: list[SlotRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SLOT_COLUMNS)
        for r in records:
            w.writerow([_fmt(getattr(r, c)) for c in SLOT_COLUMNS])


def write_epochs_csv(path: Path, records: list[SlotRecord]) -> None:
    ul_ma = moving_average([r.ul_reward for r in records], MA_WINDOW)
    dl_ma = moving_average([r.dl_reward for r in records], MA_WINDOW)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EPOCH_COLUMNS)
        for k, r in enumerate(records):
            w.writerow([_fmt(v) for v in (r.slot, r.ul_reward, r.dl_reward, float(ul_ma[k]), float(dl_ma[k]),
                                          r.epsilon, r.ul_executed, r.dl_executed, r.ul_loss, r.dl_loss)])


def _json_safe(v: Any) -> Any:
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    if isinstance(v, list):
        return [_json_safe(x) for x in v]
    return v


def write_report(report: RunReport, out_dir: str | Path) -> Path:
    """report.json, slots.csv, epochs.csv and policy checkpoints under models/."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = {"summary": report.summary(), "config": report.config}
    (out / "report.json").write_text(json.dumps(_json_safe(doc), indent=2, sort_keys=True) + "\n")
    write_slots_csv(out / "slots.csv", report.slots)
    write_epochs_csv(out / "epochs.csv", report.epochs)
    ctl = report.controller
    if ctl is not None and ctl.ul_agent is not None:
        models = out / "models"
        models.mkdir(exist_ok=True)
        save_checkpoint(models / "uplink.json", ctl.ul_agent.net, ctl.ul_agent.schedule)
        save_checkpoint(models / "downlink.json", ctl.dl_agent.net, ctl.dl_agent.schedule)
    return out


def read_summary(out_dir: str | Path) -> dict[str, Any]:
    return json.loads((Path(out_dir) / "report.json").read_text())["summary"]
