"""battwin command line: batch pipeline stages with reproducible artifacts.

Every subcommand resolves its settings (defaults < --config JSON < explicit
flags), writes the resolved config next to its outputs, and exits 0 on
success, 2 on usage/config errors, 3 on numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from battwin import campaign as camp
from battwin import identify as ident
from battwin import pinn as pinnmod
from battwin import soh as sohmod
from battwin.errors import BattwinError
from battwin.optim import DEConfig
from battwin.params import NOMINAL_CAPACITY_AH, ParameterSet, nominal_parameters
from battwin.sensitivity import run_oat_analysis
from battwin.solver import CurrentProfile, solve_spm

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class UsageError(Exception):
    pass


def _load_params(spec: str) -> ParameterSet:
    if spec in (None, "nominal"):
        return nominal_parameters()
    if not os.path.exists(spec):
        raise UsageError(f"parameter file not found: {spec}")
    return ParameterSet.from_json(spec)


def _profile_from_config(cfg) -> CurrentProfile:
    tag = cfg.get("profile", "c3-charge")
    if tag == "c3-charge":
        return CurrentProfile.constant(NOMINAL_CAPACITY_AH / 3.0,
                                       cfg.get("duration_s", 10200.0))
    if tag in ident.TAIL_LENGTHS:
        return ident.protocol_profile(tag)
    if tag == "custom":
        return CurrentProfile.constant(cfg["current_A"], cfg["duration_s"])
    raise UsageError(f"unknown profile {tag!r}")


def _resolve(args, defaults: dict) -> dict:
    cfg = dict(defaults)
    if args.config:
        if not os.path.exists(args.config):
            raise UsageError(f"config file not found: {args.config}")
        with open(args.config) as fh:
            cfg.update(json.load(fh))
    for key, value in vars(args).items():
        if key in ("command", "config", "func"):
            continue
        if value is not None:
            cfg[key.replace("-", "_")] = value
    cfg.setdefault("seed", 0)
    cfg.setdefault("out_dir", ".")
    return cfg


def _snapshot(cfg: dict, name: str) -> str:
    out = cfg["out_dir"]
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, f"{name}_config.json")
    with open(path, "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


def cmd_simulate(args):
    cfg = _resolve(args, {"params": "nominal", "dt": 1.0, "shells": 50,
                          "v_max": 4.2})
    out = _snapshot(cfg, "simulate")
    params = _load_params(cfg["params"])
    profile = _profile_from_config(cfg)
    result = solve_spm(params, profile, n_shells=int(cfg["shells"]),
                       dt=float(cfg["dt"]),
                       v_limits=(-np.inf, float(cfg["v_max"])),
                       store_fields=False)
    result.to_csv(os.path.join(out, "sim.csv"))
    return EXIT_OK


def cmd_sensitivity(args):
    cfg = _resolve(args, {"params": "nominal", "span": 0.10, "samples": 10,
                          "dt": 4.0, "shells": 30})
    out = _snapshot(cfg, "sensitivity")
    params = _load_params(cfg["params"])
    report = run_oat_analysis(params, span=float(cfg["span"]),
                              n_samples=int(cfg["samples"]),
                              n_shells=int(cfg["shells"]), dt=float(cfg["dt"]))
    report.to_csv(os.path.join(out, "si.csv"))
    report.trajectories_to_csv(os.path.join(out, "si_trajectories.csv"))
    return EXIT_OK


def cmd_train_pinn(args):
    cfg = _resolve(args, {
        "params": "nominal", "protocol": "RPT-C/3", "duration_s": 10200.0,
        "residual_points": 256, "boundary_points": 48, "pairs": 10,
        "data_grid_r": 8, "data_grid_t": 21, "full": False,
        "adam_epochs": 2000, "lbfgs_epochs": 2000, "refine": None,
    })
    out = _snapshot(cfg, "train_pinn")
    params = _load_params(cfg["params"])
    profile = CurrentProfile.constant(
        ident.protocol_profile(cfg["protocol"]).steps[0][1],
        float(cfg["duration_s"]))
    colloc = pinnmod.CollocationSet.generate(
        params, profile, n_residual=int(cfg["residual_points"]),
        n_boundary=int(cfg["boundary_points"]), n_pairs=int(cfg["pairs"]),
        data_grid=(int(cfg["data_grid_r"]), int(cfg["data_grid_t"])),
        seed=int(cfg["seed"]))
    sched = pinnmod.desk_schedule(seed=int(cfg["seed"]))
    sched.adam_epochs = 5000 if cfg["full"] else int(cfg["adam_epochs"])
    sched.lbfgs_epochs = 60000 if cfg["full"] else int(cfg["lbfgs_epochs"])
    model = pinnmod.train_pinn(colloc, params, profile, sched)
    if cfg["refine"]:
        model = pinnmod.refine_pinn(model, colloc, params,
                                    lbfgs_epochs=tuple(cfg["refine"]))
    model.protocol = cfg["protocol"]
    model.save(os.path.join(out, "pinn_model.json"))
    model.history_to_csv(os.path.join(out, "pinn_training_log.csv"))
    return EXIT_OK


IDENT_HEADER = "cell,cycle,eps_plus_scale,eps_minus_scale,fitness,backend"


def cmd_identify(args):
    cfg = _resolve(args, {
        "params": "nominal", "backend": "fvm", "model": None,
        "segment": None, "campaign_dir": None, "pop_size": 100,
        "iterations": 10, "fvm_dt": 4.0, "fvm_shells": 30,
    })
    out = _snapshot(cfg, "identify")
    params = _load_params(cfg["params"])
    if cfg["backend"] == "pinn":
        if not cfg["model"] or not os.path.exists(cfg["model"]):
            raise UsageError(f"PINN model file not found: {cfg['model']!r}")
        backend = ident.PinnBackend(pinnmod.PinnModel.load(cfg["model"]))
    elif cfg["backend"] == "fvm":
        backend = ident.FvmBackend(params, n_shells=int(cfg["fvm_shells"]),
                                   dt=float(cfg["fvm_dt"]))
    else:
        raise UsageError(f"unknown backend {cfg['backend']!r}")

    jobs = []  # (cell, cycle, segment)
    if cfg["segment"]:
        if not os.path.exists(cfg["segment"]):
            raise UsageError(f"segment file not found: {cfg['segment']}")
        jobs.append((0, 0, ident.ChargingSegment.from_csv(cfg["segment"])))
    elif cfg["campaign_dir"]:
        ledger = camp.CampaignLedger.load(cfg["campaign_dir"])
        jobs = [(r.cell_id, r.cycle, r.segment)
                for r in ledger.records if not r.failed]
    else:
        raise UsageError("need --segment or --campaign-dir")

    path = os.path.join(out, "identified.csv")
    with open(path, "w") as fh:
        fh.write(IDENT_HEADER + "\n")
        for cell, cycle, segment in jobs:
            de = DEConfig(bounds=[list(ident.SEARCH_BOX)] * 2,
                          pop_size=int(cfg["pop_size"]),
                          iterations=int(cfg["iterations"]),
                          seed=int(cfg["seed"]) + 7919 * cell + cycle)
            idp = ident.identify(segment, backend, de)
            fh.write(f"{cell},{cycle},{idp.eps_plus_scale:.9g},"
                     f"{idp.eps_minus_scale:.9g},{idp.fitness:.9g},"
                     f"{idp.backend}\n")
    return EXIT_OK


def cmd_campaign(args):
    cfg = _resolve(args, {"params": "nominal", "rpt_interval": 70,
                          "cells": 7, "dt": 2.0, "shells": 50,
                          "capacity_dt": 2.0})
    out = _snapshot(cfg, "campaign")
    params = _load_params(cfg["params"])
    scens = camp.default_scenarios(seed=int(cfg["seed"]),
                                   rpt_interval=int(cfg["rpt_interval"]))
    scens = scens[: int(cfg["cells"])]
    camp.run_campaign(scens, params, n_shells=int(cfg["shells"]),
                      dt=float(cfg["dt"]), capacity_dt=float(cfg["capacity_dt"]),
                      out_dir=os.path.join(out, "campaign"))
    return EXIT_OK


def _load_samples(cfg):
    for key in ("campaign_dir", "identified"):
        if not cfg.get(key) or not os.path.exists(cfg[key]):
            raise UsageError(f"missing input: --{key.replace('_', '-')}")
    ledger = camp.CampaignLedger.load(cfg["campaign_dir"])
    ids = {}
    with open(cfg["identified"]) as fh:
        next(fh)
        for line in fh:
            cell, cycle, ep, em, fit, backend = line.strip().split(",")
            ids[(int(cell), int(cycle))] = ident.IdentifiedParameters(
                float(ep), float(em), float(fit), 0, backend, 0.0)
    records, matched = [], []
    for r in ledger.records:
        key = (r.cell_id, r.cycle)
        if not r.failed and key in ids:
            records.append(r)
            matched.append(ids[key])
    return sohmod.build_dataset(records, matched)


def cmd_train_soh(args):
    cfg = _resolve(args, {"campaign_dir": None, "identified": None,
                          "mode": "fused", "epochs": 2000, "best_of": 5})
    out = _snapshot(cfg, "train_soh")
    samples = _load_samples(cfg)
    seeds = tuple(int(cfg["seed"]) + i for i in range(int(cfg["best_of"])))
    model = sohmod.train_soh_best_of(samples, cfg["mode"], seeds=seeds,
                                     epochs=int(cfg["epochs"]))
    import torch

    torch.save(model.net.state_dict(), os.path.join(out, "soh_net.pt"))
    with open(os.path.join(out, "soh_model.json"), "w") as fh:
        json.dump({"mode": model.mode, "v_mean": model.v_mean,
                   "v_std": model.v_std, "train_loss": model.train_loss,
                   "seed": model.seed}, fh, indent=2, sort_keys=True)
    return EXIT_OK


def cmd_eval_soh(args):
    cfg = _resolve(args, {"campaign_dir": None, "identified": None,
                          "split": "leave-one-cell", "epochs": 2000,
                          "best_of": 5,
                          "modes": "fused,voltage-only,param-only"})
    out = _snapshot(cfg, "eval_soh")
    samples = _load_samples(cfg)
    seeds = tuple(int(cfg["seed"]) + i for i in range(int(cfg["best_of"])))
    table = sohmod.cross_eval(samples, cfg["split"],
                              modes=tuple(cfg["modes"].split(",")),
                              seeds=seeds, epochs=int(cfg["epochs"]))
    sohmod.cross_eval_to_csv(table, os.path.join(out, "soh_mape.csv"))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="battwin",
        description="battery digital-twin pipeline (SPM, surrogate, "
                    "identification, SOH)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--out-dir", dest="out_dir")
        p.add_argument("--params", help="parameter JSON path or 'nominal'")

    p = sub.add_parser("simulate", help="run the finite-volume SPM")
    common(p)
    p.add_argument("--profile")
    p.add_argument("--dt", type=float)
    p.add_argument("--shells", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sensitivity", help="one-at-a-time sensitivity sweep")
    common(p)
    p.add_argument("--span", type=float)
    p.add_argument("--samples", type=int)
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("train-pinn", help="train the parameterized surrogate")
    common(p)
    p.add_argument("--protocol")
    p.add_argument("--full", action="store_true", default=None,
                   help="long 5k/60k schedule instead of desk 2k/2k")
    p.set_defaults(func=cmd_train_pinn)

    p = sub.add_parser("identify", help="fit (eps+, eps-) to segments")
    common(p)
    p.add_argument("--segment")
    p.add_argument("--campaign-dir", dest="campaign_dir")
    p.add_argument("--backend", choices=("pinn", "fvm"))
    p.add_argument("--model", help="PINN checkpoint for the pinn backend")
    p.add_argument("--pop-size", dest="pop_size", type=int)
    p.add_argument("--iterations", type=int)
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("campaign", help="generate the synthetic aging ledger")
    common(p)
    p.add_argument("--cells", type=int)
    p.add_argument("--rpt-interval", dest="rpt_interval", type=int)
    p.set_defaults(func=cmd_campaign)

    p = sub.add_parser("train-soh", help="train one SOH estimator")
    common(p)
    p.add_argument("--campaign-dir", dest="campaign_dir")
    p.add_argument("--identified")
    p.add_argument("--mode", choices=sohmod.MODES)
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_train_soh)

    p = sub.add_parser("eval-soh", help="cross-validated SOH MAPE tables")
    common(p)
    p.add_argument("--campaign-dir", dest="campaign_dir")
    p.add_argument("--identified")
    p.add_argument("--split", choices=("leave-one-cell", "leave-one-profile",
                                       "leave-one-condition"))
    p.add_argument("--modes")
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_eval_soh)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (BattwinError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
