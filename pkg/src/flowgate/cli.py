"""Command-line surface: data generation, training, evaluation, reports.

Exit codes are stable: 0 success, 1 I/O failure (including refusing to
overwrite an existing run directory), 2 config/usage error, 3 checkpoint
version mismatch. Every run directory gets exactly one manifest.json;
reruns into the same directory are refused. Reports are rebuilt from
CSVs only and never recompute models.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import subprocess
import sys
import time

import numpy as np

from .odesolve import SolverConfig
from .synthdata import (
    Labeled2dSpec,
    MixtureSpec,
    gen_1d_mixture,
    gen_2d_labeled,
    gen_spiral_corpus,
    write_labeled2d_csv,
    write_mixture_csv,
    write_spiral_csv,
)
from .train import (
    CheckpointError,
    TrainConfig,
    evaluate_conditional,
    evaluate_density,
    gates_to_csv,
    load_checkpoint,
    metrics_to_csv,
    save_checkpoint,
    train_conditional,
    train_density,
    train_latentode,
    latentode_extrapolation_mse,
)

EXIT_OK = 0
EXIT_IO = 1
EXIT_USAGE = 2
EXIT_VERSION = 3

OUT_ROOT_ENV = "FLOWGATE_OUT"


class CliError(Exception):
    def __init__(self, msg, code):
        super().__init__(msg)
        self.code = code


def _git_describe() -> str:
    try:
        return subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, cwd=os.path.dirname(__file__), timeout=5,
        ).stdout.strip() or "unknown"
    except Exception:
        return "unknown"


def _resolve_out(path: str) -> str:
    root = os.environ.get(OUT_ROOT_ENV)
    if root and not os.path.isabs(path):
        return os.path.join(root, path)
    return path


def _start_run(out_dir: str, command: str, config: dict, seed: int) -> dict:
    out_dir = _resolve_out(out_dir)
    manifest_path = os.path.join(out_dir, "manifest.json")
    if os.path.exists(manifest_path):
        raise CliError(f"run directory already has a manifest: {manifest_path}", EXIT_IO)
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {out_dir}: {exc}", EXIT_IO)
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "git": _git_describe(),
        "started": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "outputs": [],
        "out_dir": out_dir,
    }
    return manifest


def _finish_run(manifest: dict):
    manifest["finished"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    path = os.path.join(manifest["out_dir"], "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)


# -- gen-data --------------------------------------------------------------


def cmd_gen_data(args) -> int:
    overrides = {}
    if args.dataset == "spirals" and args.n_curves is not None:
        if args.n_curves % 2 != 0:
            raise CliError("--n-curves must be even", EXIT_USAGE)
        overrides["n_curves"] = args.n_curves
    manifest = _start_run(args.out, "gen-data", {"dataset": args.dataset, **overrides},
                          args.seed)
    out = manifest["out_dir"]
    if args.dataset == "mix1d":
        samples, _ = gen_1d_mixture(MixtureSpec(), args.n or 2048, args.seed)
        path = os.path.join(out, "mix1d.csv")
        write_mixture_csv(path, samples)
        manifest["outputs"].append(path)
    elif args.dataset == "labeled2d":
        pts, labels, _ = gen_2d_labeled(Labeled2dSpec(), args.seed)
        path = os.path.join(out, "labeled2d.csv")
        write_labeled2d_csv(path, pts, labels)
        manifest["outputs"].append(path)
    elif args.dataset == "spirals":
        n = overrides.get("n_curves", 5000)
        records = gen_spiral_corpus(n, seed=args.seed)
        path = os.path.join(out, "spirals.csv")
        write_spiral_csv(path, records)
        manifest["outputs"].append(path)
    else:
        raise CliError(f"unknown dataset {args.dataset!r}", EXIT_USAGE)
    _finish_run(manifest)
    print(f"wrote {manifest['outputs'][0]}")
    return EXIT_OK


# -- train -----------------------------------------------------------------


def _load_config(path: str | None) -> TrainConfig:
    if path is None:
        return TrainConfig()
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise CliError(f"config file not found: {path}", EXIT_IO)
    except json.JSONDecodeError as exc:
        raise CliError(f"config is not valid JSON: {exc}", EXIT_USAGE)
    try:
        return TrainConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise CliError(f"config schema violation: {exc}", EXIT_USAGE)


def cmd_train(args) -> int:
    config = _load_config(args.config)
    if args.tolerance_mode:
        config.tolerance_mode = args.tolerance_mode
    from dataclasses import asdict

    manifest = _start_run(args.out, f"train:{args.task}", asdict(config), config.seed)
    out = manifest["out_dir"]

    def progress(m):
        print(f"epoch {m.epoch}: loss={m.train_loss:.4f} test_nll={m.test_nll:.4f} "
              f"err={m.test_err:.4f} nfe={m.mean_nfe:.1f}", flush=True)

    gate_rows = []
    if args.task == "density":
        model, metrics = train_density(config, progress=progress)
    elif args.task in ("infocnf", "ccnf"):
        model, metrics, gate_rows = train_conditional(config, args.task,
                                                      progress=progress)
        manifest["conditioning_param_count"] = model.conditioning_param_count()
    elif args.task == "latentode":
        model, metrics = train_latentode(config, partitioned=not args.baseline,
                                         progress=progress)
    else:
        raise CliError(f"unknown task {args.task!r}", EXIT_USAGE)

    ckpt = os.path.join(out, "checkpoint")
    save_checkpoint(ckpt, model)
    mpath = os.path.join(out, "metrics.csv")
    metrics_to_csv(mpath, metrics)
    manifest["outputs"] += [ckpt + ".json", ckpt + ".bin", mpath]
    if gate_rows:
        gpath = os.path.join(out, "gates.csv")
        gates_to_csv(gpath, gate_rows)
        manifest["outputs"].append(gpath)
    _finish_run(manifest)
    print(f"run complete: {out}")
    return EXIT_OK


# -- eval ------------------------------------------------------------------


def _parse_mode(mode: str):
    if mode == "learned":
        return "learned", None
    if mode.startswith("fixed:"):
        try:
            return "fixed", float(mode.split(":", 1)[1])
        except ValueError:
            raise CliError(f"bad tolerance in mode {mode!r}", EXIT_USAGE)
    raise CliError(f"unknown eval mode {mode!r}", EXIT_USAGE)


def cmd_eval(args) -> int:
    try:
        model = load_checkpoint(args.checkpoint)
    except CheckpointError as exc:
        if "format" in str(exc):
            raise CliError(str(exc), EXIT_VERSION)
        raise CliError(str(exc), EXIT_IO)
    mode, tol = _parse_mode(args.mode)
    config = model.config
    rows = []
    if model.task == "density":
        x_test, _ = gen_1d_mixture(MixtureSpec(), config.n_test, seed=config.seed + 7919)
        m = evaluate_density(model, x_test, tolerance=tol or 1e-5)
        rows.append(("all", m))
    elif model.task == "conditional":
        spec = Labeled2dSpec()
        x, y, _ = gen_2d_labeled(
            Labeled2dSpec(spec.means, spec.stddevs, config.n_test // spec.n_classes),
            seed=config.seed + 7919,
        )
        sizes = args.batch_sizes or [x.shape[0]]
        for bs in sizes:
            m = evaluate_conditional(model, x, y, mode=mode,
                                     tolerance=tol or 1e-5, batch_size=bs)
            rows.append((bs, m))
    else:
        corpus = gen_spiral_corpus(min(config.n_curves, 200), seed=config.seed + 7919)
        mse = latentode_extrapolation_mse(model, corpus)
        print(f"extrapolation_mse {mse!r}")
        return EXIT_OK
    print("batch_size,test_nll,test_err,mean_nfe")
    for bs, m in rows:
        print(f"{bs},{m.test_nll!r},{m.test_err!r},{m.mean_nfe!r}")
    return EXIT_OK


# -- report ----------------------------------------------------------------


def _read_csv(path):
    if not os.path.exists(path):
        raise CliError(f"missing CSV: {path}", EXIT_IO)
    with open(path) as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader]
    return header, rows


def cmd_report(args) -> int:
    import matplotlib

    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    run = _resolve_out(args.run)
    made = []
    for plot in args.plots:
        fig, ax = plt.subplots(figsize=(5, 3.2))
        if plot in ("nll_curve", "nfe_curve"):
            header, rows = _read_csv(os.path.join(run, "metrics.csv"))
            epochs = [int(r[header.index("epoch")]) for r in rows]
            col = "test_nll" if plot == "nll_curve" else "mean_nfe"
            vals = [float(r[header.index(col)]) for r in rows]
            ax.plot(epochs, vals)
            ax.set_xlabel("epoch")
            ax.set_ylabel(col)
        elif plot == "tol_hist":
            header, rows = _read_csv(os.path.join(run, "gates.csv"))
            layers = sorted({int(r[header.index("layer")]) for r in rows})
            for layer in layers:
                tols = [np.log10(float(r[header.index("tol")])) for r in rows
                        if int(r[header.index("layer")]) == layer]
                ax.hist(tols, bins=30, alpha=0.6, label=f"layer {layer}")
            ax.set_xlabel("log10 tolerance")
            ax.legend()
        elif plot == "density_1d":
            made.append(_density_plot(run, ax))
            continue
        elif plot == "spiral_traj":
            header, rows = _read_csv(os.path.join(run, "predictions.csv"))
            seqs = sorted({int(r[0]) for r in rows})[:4]
            for s in seqs:
                xs = [float(r[2]) for r in rows if int(r[0]) == s]
                ys = [float(r[3]) for r in rows if int(r[0]) == s]
                ax.plot(xs, ys)
            ax.set_aspect("equal")
        else:
            raise CliError(f"unknown plot {plot!r}", EXIT_USAGE)
        path = os.path.join(run, f"{plot}.svg")
        fig.savefig(path)
        plt.close(fig)
        made.append(path)
    for p in made:
        print(f"wrote {p}")
    return EXIT_OK


def _density_plot(run, ax):
    # overlays the exact mixture density with a model grid dump if present
    import matplotlib.pyplot as plt

    header, rows = _read_csv(os.path.join(run, "density_grid.csv"))
    xs = [float(r[0]) for r in rows]
    model_p = [float(r[1]) for r in rows]
    exact_p = [float(r[2]) for r in rows]
    ax.plot(xs, exact_p, label="exact")
    ax.plot(xs, model_p, label="model")
    ax.legend()
    path = os.path.join(run, "density_1d.svg")
    ax.figure.savefig(path)
    plt.close(ax.figure)
    return path


# -- oracles ---------------------------------------------------------------


def cmd_oracles(args) -> int:
    from .oracles import run_oracles, write_report

    reports, ok = run_oracles(args.filter)
    for r in reports:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: measured={r.measured:.6g} "
              f"expected={r.expected:.6g} tol={r.tolerance:.3g} ({r.runtime:.2f}s)")
    if args.report:
        write_report(args.report, reports)
    return EXIT_OK if ok else EXIT_IO


# -- entry point -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="flowgate")
    sub = p.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--dataset", required=True, choices=["mix1d", "labeled2d", "spirals"])
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, default=None)
    g.add_argument("--n-curves", type=int, default=None)
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--task", required=True,
                   choices=["density", "infocnf", "ccnf", "latentode"])
    t.add_argument("--config", default=None, help="JSON TrainConfig")
    t.add_argument("--out", required=True)
    t.add_argument("--tolerance-mode", choices=["fixed", "gated"], default=None)
    t.add_argument("--baseline", action="store_true",
                   help="latentode: train the unpartitioned baseline")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True, help="path prefix (no extension)")
    e.add_argument("--mode", default="fixed:1e-5")
    e.add_argument("--batch-size", dest="batch_sizes", type=int, action="append")
    e.set_defaults(fn=cmd_eval)

    r = sub.add_parser("report", help="render plots from run CSVs")
    r.add_argument("--run", required=True)
    r.add_argument("--plots", nargs="+", required=True,
                   choices=["nll_curve", "nfe_curve", "tol_hist", "density_1d",
                            "spiral_traj"])
    r.set_defaults(fn=cmd_report)

    o = sub.add_parser("oracles", help="run the verification oracle suite")
    o.add_argument("--filter", default="*")
    o.add_argument("--report", default=None, help="JSON report path")
    o.set_defaults(fn=cmd_oracles)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.fn(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
