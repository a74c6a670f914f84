"""Command line entry point: ``sbgen <command> --config RUN.yaml --output DIR``.

Exit codes: 0 success, 2 input/config error, 3 numerical failure,
4 estimation failure, 5 I/O error.
"""

import argparse
import csv
import glob
import json
import logging
import os
import sys

import numpy as np

from . import config as cfgmod
from . import io, pipeline
from .errors import InputError, SbgenError
from .flow import FlowProposal, StandardizedTarget
from .metrics import histogram_csv
from .smc import sbg_run
from .train import Trainer

log = logging.getLogger("sbgen")

EXIT_IO = 5
DATA_SPLITS = ("train", "val", "test")


def _load_config(args):
    cfg = cfgmod.load(args.config) if args.config else cfgmod.resolve({"target": {"kind": "double_well"}})
    if args.seed is not None:
        cfg["seed"] = int(args.seed)
    return cfg


def _out(args, *parts):
    os.makedirs(args.output, exist_ok=True)
    return os.path.join(args.output, *parts)


def _data_path(directory, split, fmt):
    return os.path.join(directory, f"{split}.{'bin' if fmt == 'binary' else 'csv'}")


def _find_split(directory, split):
    for ext in ("csv", "bin"):
        p = os.path.join(directory, f"{split}.{ext}")
        if os.path.exists(p):
            return p
    raise InputError(f"no {split}.csv or {split}.bin in {directory}")


def _checkpoint(args):
    path = args.checkpoint or os.path.join(args.output, "checkpoint.json")
    if not os.path.exists(path):
        raise InputError(f"checkpoint {path} not found; run 'sbgen train' first")
    return io.load_checkpoint(path)


# -- commands ---------------------------------------------------------------


def cmd_generate_data(args, cfg):
    target = pipeline.build_target(cfg)
    data, prov = pipeline.generate_data(cfg, target)
    fmt = cfg["data"]["format"]
    for split in DATA_SPLITS:
        io.write_dataset(_data_path(args.output, split, fmt), data[split], fmt)
    prov["occupancy"] = {s: _occupancy(target, data[s]) for s in DATA_SPLITS}
    io.dump_json(_out(args, "provenance.json"), prov)
    return prov


def _occupancy(target, X):
    """Fraction of rows with a negative first coordinate (left well), where meaningful."""
    if target.kind != "double_well" or len(X) == 0:
        return None
    return float(np.mean(X[:, 0] < 0))


def cmd_train(args, cfg):
    target = pipeline.build_target(cfg)
    data_dir = args.data or args.output
    train = io.read_dataset(_find_split(data_dir, "train"))
    val = io.read_dataset(_find_split(data_dir, "val"))
    trainer = None
    if args.resume:
        model, state, _ = io.load_checkpoint(args.resume)
        if state is None:
            raise InputError(f"{args.resume} has no optimizer state to resume from")
        trainer = io.restore_trainer(Trainer(model, pipeline.train_config(cfg)), state)
    else:
        model = pipeline.build_model(cfg, target, train)
    epochs = cfg["train"]["epochs"] - (trainer.epoch if trainer else 0)
    if epochs <= 0 or cfg["train"]["epochs"] == 0:
        best, trainer = model, trainer or Trainer(model, pipeline.train_config(cfg))
    else:
        best, trainer = pipeline.train_model(cfg, model, target, train, val, trainer, epochs)
    io.save_checkpoint(_out(args, "checkpoint.json"), best)
    io.save_checkpoint(_out(args, "checkpoint_last.json"), trainer.model, trainer)
    log_path = _out(args, "train_log.csv")
    mode = "a" if args.resume and os.path.exists(log_path) else "w"
    with open(log_path, mode, newline="") as fh:
        w = csv.writer(fh)
        if mode == "w":
            w.writerow(["epoch", "step", "lr", "train_nll", "val_energy_w1"])
        for r in trainer.history:
            w.writerow([r.epoch, r.step, repr(float(r.lr)), repr(float(r.train_nll)),
                        "" if r.val_metric is None else repr(float(r.val_metric))])
    return {"epochs": trainer.epoch, "steps": trainer.step, "best_val": trainer.best_metric,
            "diverged": getattr(trainer, "diverged", False)}


def cmd_sample(args, cfg):
    model, _, _ = _checkpoint(args)
    K = int(cfg["metrics"]["K"])
    x, lp = model.sample(pipeline.stream(cfg["seed"], "draw"), K)
    phys = model.standardization.destandardize(x)
    io.write_dataset(_out(args, "samples.csv"), phys)
    io.write_dataset(_out(args, "samples_logprob.csv"), lp[:, None])
    return {"n": K}


def _write_ensemble(path, positions, log_weights, quarantined):
    table = np.column_stack([positions, log_weights, quarantined.astype(float)])
    head = ",".join([f"x{j}" for j in range(positions.shape[1])] + ["log_weight", "quarantined"])
    np.savetxt(path, table, delimiter=",", header=head, comments="", fmt="%.17g")


def cmd_transport(args, cfg):
    model, _, _ = _checkpoint(args)
    target = pipeline.build_target(cfg)
    mt = StandardizedTarget(target, model.standardization)
    dump = _out(args, "trajectory") if args.dump else None
    if dump:
        os.makedirs(dump, exist_ok=True)
    ens, diag = sbg_run(FlowProposal(model), mt, pipeline.schedule(cfg), int(cfg["metrics"]["K"]),
                        cfg["seed"], filters=pipeline._filters(cfg, _bg_samples(model, mt, cfg), cfg["metrics"]["K"]),
                        dump_dir=dump)
    _write_ensemble(_out(args, "ensemble.csv"), model.standardization.destandardize(ens.positions),
                    ens.log_weights, ens.quarantined)
    io.dump_json(_out(args, "diagnostics.json"), diag)
    return {"final_ess_normalized": diag["final_ess_normalized"], "n_resamples": diag["n_resamples"]}


def _bg_samples(model, mt, cfg):
    from .reweight import WeightedSamples
    from .transport import draw_ensemble

    prop = FlowProposal(model)
    ens = draw_ensemble(prop, int(cfg["metrics"]["K"]), cfg["seed"])
    return WeightedSamples.from_target(mt, ens.positions, prop.log_prob(ens.positions))


def cmd_evaluate(args, cfg):
    model, _, _ = _checkpoint(args)
    target = pipeline.build_target(cfg)
    test = io.read_dataset(_find_split(args.data or args.output, "test"))
    reports, hists, extras = pipeline.evaluate(cfg, model, target, test)
    for name, rep in reports.items():
        io.dump_json(_out(args, f"metrics_{name}.json"), rep.to_dict())
    for name, table in hists.items():
        histogram_csv(table, _out(args, f"hist_energy_{name}.csv"))
    diag = dict(extras["diagnostics"])
    diag["filters"] = extras["filter_reports"]
    io.dump_json(_out(args, "diagnostics.json"), diag)
    if cfg["ablation"]["centroid_norm"]:
        abl = pipeline.centroid_norm_ablation(cfg, model, target)
        for name, table in abl["histograms"].items():
            histogram_csv(table, _out(args, f"hist_centroid_{name}.csv"))
    return {k: v.to_dict() for k, v in reports.items()}


def cmd_report(args, cfg):
    rows = []
    for path in sorted(glob.glob(os.path.join(args.output, "metrics_*.json"))):
        rows.append(io.load_json(path))
    if not rows:
        raise InputError(f"no metrics_*.json in {args.output}; run 'sbgen evaluate' first")
    cols = ["estimator", "ess", "ess_normalized", "energy_w1", "torus_w2", "log_z_hat", "log_z_jarzynski"]
    print("\t".join(cols))
    for r in rows:
        print("\t".join("-" if r.get(c) is None else (f"{r[c]:.6g}" if isinstance(r[c], float) else str(r[c]))
                        for c in cols))
    return {"n": len(rows)}


COMMANDS = {
    "generate-data": cmd_generate_data,
    "train": cmd_train,
    "sample": cmd_sample,
    "transport": cmd_transport,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def build_parser():
    p = argparse.ArgumentParser(prog="sbgen", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="YAML run config or bundled preset name (%s)" % ", ".join(cfgmod.list_presets()))
    p.add_argument("--seed", type=int, help="override the run seed")
    p.add_argument("--workers", type=int, default=1,
                   help="worker count; results do not depend on it (single-process execution)")
    p.add_argument("--reproducible", action="store_true",
                   help="fixed reduction order; always on in this build, kept for interface stability")
    p.add_argument("--output", default="run", help="output directory")
    p.add_argument("--data", help="dataset directory (default: --output)")
    p.add_argument("--checkpoint", help="checkpoint path (default: OUTPUT/checkpoint.json)")
    p.add_argument("--resume", help="resume training from a checkpoint_last.json")
    p.add_argument("--dump", action="store_true", help="transport: write trajectory CSVs")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.workers < 1:
            raise InputError("--workers must be >= 1")
        cfg = _load_config(args)
        os.makedirs(args.output, exist_ok=True)
        cfgmod.snapshot(cfg, os.path.join(args.output, f"config_{args.command}.json"))
        summary = COMMANDS[args.command](args, cfg)
    except SbgenError as exc:
        print(f"sbgen {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"sbgen {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    if args.command != "report":
        print(json.dumps(io._plain(summary), sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
