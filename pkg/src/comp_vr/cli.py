"""Command-line entry point: predict, train, simulate, compare, oracle."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ALGORITHMS, ConfigError, SimConfig, load_config, parse_overrides
from .experiment import compare, forecast_nrmse, prepare, run_experiment, write_epochs_csv, write_report
from .oracles import run_all, table
from .orchestrator import Controller, pretrain
from .policy_net import save_checkpoint
from .scene import NetworkScene
from .traces import TraceError, TraceSet, ingest_traces

log = logging.getLogger("comp_vr")


def build_config(args: argparse.Namespace) -> SimConfig:
    overrides = parse_overrides(args.set or [])
    if args.config:
        return load_config(args.config, overrides)
    return SimConfig.from_dict(overrides)


def load_traces(args: argparse.Namespace, cfg: SimConfig) -> TraceSet | None:
    if not getattr(args, "traces", None):
        return None
    return ingest_traces(args.traces, cfg.area_size)


def cmd_predict(args: argparse.Namespace) -> int:
    cfg = build_config(args)
    scene, forecast = prepare(cfg, load_traces(args, cfg))
    scores = forecast_nrmse(scene, forecast)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = {"nrmse_per_user": scores, "nrmse_max": max(scores, default=None),
           "nrmse_mean": float(np.mean(scores)) if scores else None, "config": cfg.to_dict()}
    (out / "predict.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    for i, v in enumerate(scores):
        print(f"user {i:3d}  nrmse {v:.4f}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = build_config(args)
    if cfg.algorithm == "heuristic":
        raise ConfigError("the heuristic has nothing to train")
    traces = load_traces(args, cfg)
    caps = NetworkScene.create(cfg, traces).power_caps if traces else \
        np.full(cfg.n_aps, cfg.ap_max_power - cfg.ap_circuit_power)
    ctl = Controller.create(cfg, caps)
    records = pretrain(ctl)
    out = Path(args.out)
    (out / "models").mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "models" / "uplink.json", ctl.ul_agent.net, ctl.ul_agent.schedule)
    save_checkpoint(out / "models" / "downlink.json", ctl.dl_agent.net, ctl.dl_agent.schedule)
    write_epochs_csv(out / "epochs.csv", records)
    print(f"trained {len(records)} epochs -> {out / 'models'}")
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = build_config(args)
    report = run_experiment(cfg, load_traces(args, cfg))
    write_report(report, args.out)
    print(json.dumps(report.summary(), indent=2, default=str))
    return 1 if report.failure else 0


def cmd_compare(args: argparse.Namespace) -> int:
    cfg = build_config(args)
    algs = args.algorithms.split(",") if args.algorithms else list(ALGORITHMS)
    reports = compare(cfg, algs, load_traces(args, cfg))
    out = Path(args.out)
    rows = {}
    for alg, rep in reports.items():
        write_report(rep, out / alg)
        rows[alg] = rep.summary().get("objective")
        print(f"{alg:10s} objective {rows[alg]}")
    (out / "comparison.json").write_text(json.dumps(rows, indent=2) + "\n")
    return 1 if any(r.failure for r in reports.values()) else 0


def cmd_oracle(args: argparse.Namespace) -> int:
    rows = run_all()
    print(table(rows))
    return 0 if all(r.ok for r in rows) else 1


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="comp-vr", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp: argparse.ArgumentParser, default_out: str) -> None:
        sp.add_argument("--config", help="JSON or TOML file with SimConfig fields")
        sp.add_argument("--set", nargs="*", metavar="KEY=VALUE", help="override config fields")
        sp.add_argument("--traces", help="trace CSV (user_id,slot,x_m,y_m); synthetic traces otherwise")
        sp.add_argument("--out", default=default_out, help="output directory")

    for name, fn, help_ in [("predict", cmd_predict, "ESN trajectory prediction and NRMSE"),
                            ("train", cmd_train, "policy pretraining, checkpoints out"),
                            ("simulate", cmd_simulate, "pretrain then run one algorithm"),
                            ("compare", cmd_compare, "paired run of several algorithms")]:
        sp = sub.add_parser(name, help=help_)
        common(sp, f"runs/{name}")
        sp.set_defaults(func=fn)
    sub.choices["compare"].add_argument("--algorithms", help=f"comma list from {','.join(ALGORITHMS)}")
    sp = sub.add_parser("oracle", help="print the oracle-checked example table")
    sp.set_defaults(func=cmd_oracle)
    return p


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, TraceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
