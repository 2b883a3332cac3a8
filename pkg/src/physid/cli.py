"""Command-line entry point: ``physid <subcommand> [--config ...]``."""
import argparse
import json
import logging
import sys
import warnings
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from . import pipeline as pl
from .config import ConfigError, ExperimentConfig, load_config
from .io import CsvFormatError, emit_report, ingest_csv
from .mechanics import build_chain, export_csv

log = logging.getLogger("physid")

_MODE_OF = {"pssid": "pssid", "blind": "blind", "demo-input-est": "input-estimation-demo"}


def _seed(text):
    val = int(text)
    if not 0 <= val < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return val


def build_parser():
    p = argparse.ArgumentParser(prog="physid", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML experiment configuration")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("--seed", type=_seed, help="overrides the config seed")
    common.add_argument("--verbose", action="store_true", help="log stage progress")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="simulate the configured chain and write a CSV")
    for name, text in (("pssid", "known-input identification"), ("blind", "output-only identification")):
        sp = sub.add_parser(name, parents=[common], help=text)
        sp.add_argument("--data", type=Path, help="dataset CSV; simulated when omitted")
    sub.add_parser("demo-input-est", parents=[common], help="input estimation on the two-state demo plant")
    sp = sub.add_parser("sweep", parents=[common], help="Monte Carlo sweep over DOF counts and SNRs")
    sp.add_argument("--workers", type=int, default=1, help="worker processes (results keep their order)")
    return p


def _load(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    mode = _MODE_OF.get(args.command)
    if mode and cfg.mode != mode:
        if mode == "pssid" and cfg.input_spec.kind == "unknown":
            raise ConfigError("pssid needs a known input_spec")
        cfg = cfg.with_updates(mode=mode)
    if args.seed is not None:
        cfg = pl.with_seed(cfg, args.seed)
    return cfg


def dataset_from_csv(path, cfg):
    """Dataset plus sensors for an external CSV, described by ``cfg``.

    Recorded ``fe`` columns are physical forces; they are scaled by the
    configured mass matrix so that they compare with the identified input.
    """
    rec = ingest_csv(path)
    n = cfg.chain.n if cfg.chain.masses is None else len(cfg.chain.masses)
    sensors = cfg.sensors.build(n)
    if rec.y.shape[0] != sensors.C_ac.shape[0]:
        raise ConfigError(f"{path} has {rec.y.shape[0]} output columns, "
                          f"the sensor section describes {sensors.C_ac.shape[0]}")
    truth = None
    if rec.f_e.size:
        if rec.f_e.shape[0] != n:
            raise ConfigError(f"{path} has {rec.f_e.shape[0]} fe columns, expected {n}")
        M = build_chain(cfg.chain.to_spec()).M
        truth = pl.Truth(f_e=np.linalg.solve(M, rec.f_e))
    data = pl.Dataset(rec.T_s, rec.u, rec.y, rec.f_e if rec.f_e.size else None, truth)
    return data, sensors


def _summary(rep):
    parts = [f"mode={rep.mode}"]
    if rep.modal:
        parts.append("f_hz=" + ",".join(f"{m['f_nat_hz']:.6g}" for m in rep.modal))
    for key in ("k_norm_rel", "freq_rel", "fe_nrmse", "nrmse"):
        if rep.errors and rep.errors.get(key) is not None:
            val = rep.errors[key]
            val = max(val) if isinstance(val, list) else val
            parts.append(f"{key}={val:.3g}")
    return " ".join(parts)


def run(args):
    cfg = _load(args)
    log.info("config hash %s, seed %d", cfg.hash(), cfg.seed)
    if args.command == "simulate":
        data, _, _ = pl.generate_dataset(cfg, cfg.seed)
        args.out.mkdir(parents=True, exist_ok=True)
        path = args.out / "dataset.csv"
        fe = data.f_e if data.f_e is not None else np.empty((0, data.y.shape[1]))
        t = np.arange(data.y.shape[1]) * data.T_s
        export_csv(path, SimpleNamespace(t=t, u=np.atleast_2d(data.u), y=data.y, f_e=fe))
        print(path)
        return 0
    if args.command in ("pssid", "blind"):
        runner = pl.run_pssid if args.command == "pssid" else pl.run_blind
        if args.data:
            data, sensors = dataset_from_csv(args.data, cfg)
            rep = runner(cfg, data, sensors)
        else:
            rep = runner(cfg)
    elif args.command == "demo-input-est":
        rep = pl.run_input_estimation_demo(cfg)
    else:
        rep = pl.run_sweep(cfg, workers=args.workers)
    path = emit_report(rep, args.out)
    if rep.mode == "sweep":
        for row in rep.diagnostics["summary"]:
            print(json.dumps(row))
    else:
        print(_summary(rep))
    print(path)
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)
    if not args.verbose:
        warnings.filterwarnings("default", category=pl.OrderCapWarning)
    try:
        return run(args)
    except (ConfigError, CsvFormatError, FileNotFoundError) as exc:
        print(f"physid: error: {exc}", file=sys.stderr)
        return 2
    except pl.StageError as exc:
        print(f"physid: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
