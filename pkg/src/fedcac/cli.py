"""Command-line entry point: ``fedcac run | sweep | probe``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import os
import sys
import time

import numpy as np

from . import orchestrator
from .config import Experiment, load_experiment
from .data import export_partition_viz
from .errors import ConfigurationError, FedCACError
from .nn import linear_names

log = logging.getLogger("fedcac")

SWEEP_PARAMS = {"tau": ("tau",), "beta": ("beta",), "alpha": ("partition", "alpha")}
PROBES = ("angles", "heatmap", "overlap_study", "partition_viz")


class OutputExists(FedCACError):
    pass


class Outputs:
    """Writes files inside one directory, atomically, refusing to clobber without ``force``."""

    def __init__(self, directory, force=False):
        self.directory = os.path.abspath(directory)
        self.force = force
        os.makedirs(self.directory, exist_ok=True)

    def path(self, name) -> str:
        p = os.path.abspath(os.path.join(self.directory, name))
        if os.path.dirname(p) != self.directory:
            raise ConfigurationError(f"output {name!r} escapes {self.directory}")
        if os.path.exists(p) and not self.force:
            raise OutputExists(f"{p} exists; pass --force to overwrite")
        return p

    def write_text(self, name, text) -> str:
        p = self.path(name)
        tmp = p + ".tmp"
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, p)
        return p

    def write_csv(self, name, header, rows) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        return self.write_text(name, buf.getvalue())


def _experiment(args) -> Experiment:
    exp = load_experiment(args.config, args.set)
    if args.seed is not None:
        exp.run = dataclasses.replace(exp.run, seed=args.seed)
    if args.out is not None:
        exp.out = args.out
    return exp


def cmd_run(args) -> int:
    exp = _experiment(args)
    out = Outputs(exp.out, args.force)
    history_path, summary_path = out.path("history.jsonl"), out.path("summary.json")
    log.info("running %s for %d rounds", exp.run.algorithm, exp.run.rounds)
    history, best = orchestrator.run(exp.run, workers=args.workers)
    out.write_text(os.path.basename(history_path), "".join(m.to_json() + "\n" for m in history))
    summary = {
        "best_accuracy": best,
        "final_accuracy": history[-1].mean_accuracy,
        "config": exp.to_dict(),
        "created_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    out.write_text(os.path.basename(summary_path), json.dumps(summary, indent=2) + "\n")
    print(f"best_accuracy={best:.4f}")
    return 0


def _with_value(exp: Experiment, param, value):
    run = exp.run
    if param == "alpha":
        part = dataclasses.replace(run.partition, alpha=float(value))
        return dataclasses.replace(run, partition=part)
    if param == "beta":
        return dataclasses.replace(run, beta=float(value))
    return dataclasses.replace(run, tau=float(value))


def cmd_sweep(args) -> int:
    if args.param not in SWEEP_PARAMS:
        raise ConfigurationError(f"--param must be one of {sorted(SWEEP_PARAMS)}")
    if not args.values:
        raise ConfigurationError("--values needs at least one value")
    exp = _experiment(args)
    out = Outputs(exp.out, args.force)
    out.path("sweep.csv")
    rows = []
    for value in args.values:
        bests = []
        for r in range(args.repeats):
            run = dataclasses.replace(_with_value(exp, args.param, value), seed=exp.run.seed + r)
            bests.append(orchestrator.run(run, workers=args.workers)[1])
        rows.append([repr(float(value)), repr(float(np.mean(bests))), repr(float(np.std(bests)))])
        log.info("%s=%s best=%.4f", args.param, value, np.mean(bests))
    out.write_csv("sweep.csv", ["value", "best_accuracy", "std"], rows)
    return 0


def cmd_probe(args) -> int:
    exp = _experiment(args)
    out = Outputs(exp.out, args.force)
    run, probe = exp.run, exp.probe
    if args.probe == "partition_viz":
        export_partition_viz(orchestrator.make_shards(run), out.path("partition.csv"))
    elif args.probe == "angles":
        shards = orchestrator.make_shards(run)
        seeds = list(range(len(shards)))
        a, b = probe.client_a, probe.client_b
        if probe.duplicate:
            twin = shards[a]
            shards[b] = dataclasses.replace(twin, client_id=b)
            seeds[b] = seeds[a]
        clients = orchestrator.build_clients(run, shards, seeds)
        angles = orchestrator.gradient_angle_probe(run, a, b, clients=clients, workers=args.workers)
        out.write_csv("angles.csv", ["round", "angle_deg"],
                      [[t, "" if x is None else repr(x)] for t, x in enumerate(angles, 1)])
    elif args.probe == "overlap_study":
        rows = orchestrator.overlap_similarity_study(run, duplicate=probe.duplicate, workers=args.workers)
        out.write_csv("overlap_study.csv", ["pair_type", "mean_overlap"], [[t, repr(v)] for t, v in rows])
    else:
        path = out.path("heatmap.csv")
        clients = orchestrator.build_clients(run)
        orchestrator.run(run, workers=args.workers, clients=clients)
        layer = probe.layer or linear_names(run.model.num_linear - 1)[0]
        orchestrator.export_sensitivity_heatmap(clients[probe.client], layer, path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedcac", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="TOML experiment file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key, e.g. tau=0.3 or partition.alpha=0.1")
        p.add_argument("--out", help="output directory (overrides `out` in the config)")
        p.add_argument("--seed", type=int, help="root seed (overrides `seed` in the config)")
        p.add_argument("--workers", type=int, default=1, help="threads for the client phase")
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")

    p = sub.add_parser("run", help="simulate one configuration")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="best accuracy for each value of one parameter")
    common(p)
    p.add_argument("--param", required=True, choices=sorted(SWEEP_PARAMS))
    p.add_argument("--values", required=True, nargs="+", type=float)
    p.add_argument("--repeats", type=int, default=1, help="seeds per value (seed, seed+1, ...)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("probe", help="diagnostic CSV exports")
    common(p)
    p.add_argument("--probe", required=True, choices=PROBES)
    p.set_defaults(func=cmd_probe)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if getattr(args, "workers", 1) < 1:
        parser.error("--workers must be >= 1")
    try:
        return args.func(args)
    except (ConfigurationError, OutputExists) as exc:
        print(f"fedcac: error: {exc}", file=sys.stderr)
        return 2
    except FedCACError as exc:
        print(f"fedcac: run failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
