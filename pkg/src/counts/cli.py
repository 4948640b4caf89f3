"""Command-line front end: gen, train, explain, eval, export-plot, model describe.

Every subcommand writes a ``run.json`` into its output directory with the
fully resolved options (defaults materialized), enough to reproduce the
run bit-exactly. Options come from defaults, then an optional ``--config``
JSON file, then explicit flags, in increasing priority.

The environment variable COUNTS_THREADS caps worker parallelism for
generation and explanation; it defaults to the available core count.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .counterfactual import ExplainConfig, explain_dataset, read_explanations, write_explanations
from .dataio import read_dataset, write_dataset
from .errors import (
    ConfigError,
    CountsError,
    DatasetFormatError,
    EvaluationError,
    ExplanationError,
    ModelFormatError,
    TrainingDivergedError,
)
from .metrics import evaluate, write_report
from .model import describe_model, load_model, save_model, spike_arch, toy_arch
from .objective import McConfig, TrainConfig, train, write_history
from .synthgen import generate

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_MISSING = 4
EXIT_FORMAT = 5
EXIT_RUNTIME = 6

GEN_DEFAULTS = {
    "kind": "toy", "n": 1000, "seed": 0, "out": None,
    "mu_x": None, "sigma_x": None, "mu_u": None, "sigma_u": None,
    "t_len": None, "noise_sigma": None, "spike_rate": None, "state_clip": None,
    "literal_lag_sum": False,
}
TRAIN_DEFAULTS = {
    "data": None, "out": None, "epochs": 60, "batch_size": 64, "lr": 1e-3,
    "lambda_sup": 1.0, "seed": 0, "objective": "counts", "val_data": None,
    "hidden": 64, "n_y": 1, "n_u": 1, "n_z": 1, "observed_y": False,
}
EXPLAIN_DEFAULTS = {
    "data": None, "model": None, "out": None, "method": "counts", "target": None,
    "shift": 20, "m_u": 8, "n_z": 8, "step_size": 0.05, "epsilon": 0.05,
    "max_iters": 300, "l1_weight": 0.01, "seed": 0, "limit": None, "ids": None,
}
EVAL_DEFAULTS = {
    "data": None, "explanations": None, "model": None, "out": None, "eps_denom": 1e-8,
}
PLOT_DEFAULTS = {
    "data": None, "explanations": None, "out": None, "limit": 4, "ids": None,
}

DEFAULTS = {
    "gen": GEN_DEFAULTS, "train": TRAIN_DEFAULTS, "explain": EXPLAIN_DEFAULTS,
    "eval": EVAL_DEFAULTS, "export-plot": PLOT_DEFAULTS,
}


def worker_threads() -> int:
    raw = os.environ.get("COUNTS_THREADS")
    if raw is None:
        return max(1, os.cpu_count() or 1)
    try:
        threads = int(raw)
    except ValueError as exc:
        raise ConfigError(f"COUNTS_THREADS must be an integer, got {raw!r}") from exc
    if threads < 1:
        raise ConfigError(f"COUNTS_THREADS must be >= 1, got {threads}")
    return threads


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="counts", description=__doc__)
    parser.add_argument("--version", action="version", version=f"counts {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file with option values (flags override)")
        p.add_argument("--print-config", action="store_const", const=True,
                       help="print the fully resolved options and exit")

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--kind", choices=["toy", "spike", "pairs"])
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output dataset directory")
    p.add_argument("--mu-x", dest="mu_x", type=float)
    p.add_argument("--sigma-x", dest="sigma_x", type=float)
    p.add_argument("--mu-u", dest="mu_u", type=float)
    p.add_argument("--sigma-u", dest="sigma_u", type=float)
    p.add_argument("--T", dest="t_len", type=int, help="spike sequence length")
    p.add_argument("--noise-sigma", dest="noise_sigma", type=float)
    p.add_argument("--spike-rate", dest="spike_rate", type=float)
    p.add_argument("--state-clip", dest="state_clip", type=float)
    p.add_argument("--literal-lag-sum", dest="literal_lag_sum",
                   action="store_const", const=True)
    common(p)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lambda-sup", dest="lambda_sup", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--objective", choices=["counts", "plain"])
    p.add_argument("--val-data", dest="val_data")
    p.add_argument("--hidden", type=int)
    p.add_argument("--n-y", dest="n_y", type=int)
    p.add_argument("--n-u", dest="n_u", type=int)
    p.add_argument("--n-z", dest="n_z", type=int)
    p.add_argument("--observed-y", dest="observed_y", action="store_const", const=True,
                   help="condition the inner objective terms on observed labels")
    common(p)

    p = sub.add_parser("explain", help="generate counterfactual explanations")
    p.add_argument("--data")
    p.add_argument("--model")
    p.add_argument("--out")
    p.add_argument("--method", choices=["counts", "rgd"])
    p.add_argument("--target", help="target class index (default: flip the prediction)")
    p.add_argument("--shift", type=int, help="target shift for sequence tasks")
    p.add_argument("--m-u", dest="m_u", type=int)
    p.add_argument("--n-z", dest="n_z", type=int)
    p.add_argument("--step-size", dest="step_size", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--max-iters", dest="max_iters", type=int)
    p.add_argument("--l1-weight", dest="l1_weight", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--limit", type=int, help="explain only the first N instances")
    p.add_argument("--ids", help="comma-separated instance ids to explain")
    common(p)

    p = sub.add_parser("eval", help="evaluate explanations into report.json")
    p.add_argument("--data")
    p.add_argument("--explanations")
    p.add_argument("--model")
    p.add_argument("--out")
    p.add_argument("--eps-denom", dest="eps_denom", type=float)
    common(p)

    p = sub.add_parser("export-plot", help="export per-instance CSV and figures")
    p.add_argument("--data")
    p.add_argument("--explanations")
    p.add_argument("--out")
    p.add_argument("--limit", type=int)
    p.add_argument("--ids")
    common(p)

    p = sub.add_parser("model", help="model artifact utilities")
    msub = p.add_subparsers(dest="model_command", required=True)
    d = msub.add_parser("describe", help="print the architecture stored in a model file")
    d.add_argument("model_file")

    return parser


def resolve_options(command: str, args: argparse.Namespace) -> dict:
    options = dict(DEFAULTS[command])
    config_path = getattr(args, "config", None)
    if config_path:
        path = Path(config_path)
        if not path.exists():
            raise FileNotFoundError(f"missing config file: {path}")
        try:
            file_values = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        unknown = set(file_values) - set(options)
        if unknown:
            raise ConfigError(f"config file has unknown keys: {sorted(unknown)}")
        options.update(file_values)
    for key in options:
        cli_value = getattr(args, key, None)
        if cli_value is not None:
            options[key] = cli_value
    return options


def _require(options: dict, *keys: str) -> None:
    for key in keys:
        if options.get(key) is None:
            raise ConfigError(f"missing required option --{key.replace('_', '-')}")


def write_run_json(directory: Path, command: str, options: dict) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    payload = {
        "command": command,
        "version": __version__,
        "counts_threads": worker_threads(),
        "options": options,
    }
    (directory / "run.json").write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_gen(options: dict) -> None:
    _require(options, "out", "kind")
    kind = options["kind"]
    kwargs = {"n": options["n"], "seed": options["seed"]}
    if kind in ("toy", "pairs"):
        for key in ("mu_x", "sigma_x", "mu_u", "sigma_u"):
            if options[key] is not None:
                kwargs[key] = options[key]
    else:
        for src, dst in [("t_len", "T"), ("noise_sigma", "noise_sigma"),
                         ("spike_rate", "spike_rate"), ("state_clip", "state_clip")]:
            if options[src] is not None:
                kwargs[dst] = options[src]
        if options["literal_lag_sum"]:
            kwargs["literal_lag_sum"] = True
    dataset = generate(kind, **kwargs)
    out = Path(options["out"])
    write_dataset(dataset, out)
    write_run_json(out, "gen", options)


def _arch_for_dataset(dataset, hidden: int):
    if dataset.kind == "toy":
        return toy_arch(hidden=hidden, num_classes=2)
    if dataset.kind == "pairs":
        return toy_arch(hidden=hidden, num_classes=4, d=24)
    return spike_arch(hidden=hidden, t_in=dataset.T, d=dataset.D)


def cmd_train(options: dict) -> None:
    _require(options, "data", "out")
    dataset = read_dataset(options["data"])
    val_dataset = read_dataset(options["val_data"]) if options["val_data"] else None
    cfg = TrainConfig(
        epochs=options["epochs"], batch_size=options["batch_size"],
        learning_rate=options["lr"], lambda_sup=options["lambda_sup"],
        mc=McConfig(n_y=options["n_y"], n_u=options["n_u"], n_z=options["n_z"],
                    seed=options["seed"]),
        seed=options["seed"],
        observed_y=bool(options["observed_y"]),
    )
    arch = _arch_for_dataset(dataset, options["hidden"])
    model, history = train(dataset, arch, cfg, val_dataset=val_dataset,
                           kind=options["objective"])
    out = Path(options["out"])
    out.mkdir(parents=True, exist_ok=True)
    save_model(model, out / "model.bin")
    write_history(history, out / "history.csv")
    if history:
        from .plotting import render_history

        render_history(history, out / "history.png")
    write_run_json(out, "train", options)


def _selected_ids(options: dict, n: int) -> list | None:
    if options.get("ids"):
        raw = options["ids"]
        ids = [int(v) for v in (raw.split(",") if isinstance(raw, str) else raw)]
        bad = [i for i in ids if not 0 <= i < n]
        if bad:
            raise ConfigError(f"instance ids out of range: {bad}")
        return ids
    if options.get("limit") is not None:
        return list(range(min(int(options["limit"]), n)))
    return None


def cmd_explain(options: dict) -> None:
    _require(options, "data", "model", "out")
    dataset = read_dataset(options["data"])
    model = load_model(options["model"])
    cfg = ExplainConfig(
        m_u=options["m_u"], n_z=options["n_z"], step_size=options["step_size"],
        epsilon=options["epsilon"], max_iters=options["max_iters"], seed=options["seed"],
    )
    target = None if options["target"] in (None, "flip") else int(options["target"])
    records = explain_dataset(
        model, dataset, options["method"], cfg, target=target, shift=options["shift"],
        l1_weight=options["l1_weight"], ids=_selected_ids(options, dataset.n),
        threads=worker_threads(),
    )
    out = Path(options["out"])
    write_explanations(records, out, dataset.kind)
    write_run_json(out, "explain", options)


def cmd_eval(options: dict) -> None:
    _require(options, "data", "explanations", "model", "out")
    dataset = read_dataset(options["data"])
    model = load_model(options["model"])
    records = read_explanations(options["explanations"], dataset.kind)
    report = evaluate(model, dataset, records, eps_denom=options["eps_denom"])
    out = Path(options["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_report(report, out / "report.json")
    write_run_json(out, "eval", options)


def cmd_export_plot(options: dict) -> None:
    from .plotting import render_explanation

    _require(options, "data", "explanations", "out")
    dataset = read_dataset(options["data"])
    records = read_explanations(options["explanations"], dataset.kind)
    by_id = {rec.id: rec for rec in records}
    ids = _selected_ids(options, dataset.n)
    if ids is None:
        ids = sorted(by_id)
    out = Path(options["out"])
    out.mkdir(parents=True, exist_ok=True)
    for i in ids:
        if i not in by_id:
            raise EvaluationError(f"no explanation found for instance id {i}")
        rec = by_id[i]
        inst = dataset.instances[i]
        x = inst.x if dataset.kind == "spike" else np.asarray(inst.x)[:, None]
        x_cf = np.asarray(rec.x_cf)
        y_pred = np.atleast_1d(np.asarray(rec.y_pred, dtype=np.float64))
        y_cf = np.atleast_1d(np.asarray(rec.y_target, dtype=np.float64))
        with open(out / f"plot_{i}.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "ch", "t", "x", "x_cf", "delta", "y_pred", "y_cf"])
            for ch in range(x.shape[0]):
                for t in range(x.shape[1]):
                    yp = y_pred[t] if len(y_pred) > 1 else y_pred[0]
                    yc = y_cf[t] if len(y_cf) > 1 else y_cf[0]
                    writer.writerow([
                        i, ch, t, repr(float(x[ch, t])), repr(float(x_cf[ch, t])),
                        repr(float(x_cf[ch, t] - x[ch, t])), repr(float(yp)), repr(float(yc)),
                    ])
        render_explanation(x, x_cf, rec.y_pred, rec.y_target, out / f"fig_{i}.png")
    write_run_json(out, "export-plot", options)


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "explain": cmd_explain,
    "eval": cmd_eval,
    "export-plot": cmd_export_plot,
}


def _error_line(code: int, exc: BaseException) -> str:
    message = " ".join(str(exc).split())
    return f"counts: error code={code} kind={type(exc).__name__}: {message}"


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "model":
            print(json.dumps(describe_model(args.model_file), indent=2))
            return EXIT_OK
        options = resolve_options(args.command, args)
        if getattr(args, "print_config", None):
            print(json.dumps({"command": args.command, "options": options}, indent=2))
            return EXIT_OK
        torch.set_num_threads(worker_threads())
        COMMANDS[args.command](options)
        return EXIT_OK
    except ConfigError as exc:
        print(_error_line(EXIT_CONFIG, exc), file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(_error_line(EXIT_MISSING, exc), file=sys.stderr)
        return EXIT_MISSING
    except (DatasetFormatError, ModelFormatError) as exc:
        print(_error_line(EXIT_FORMAT, exc), file=sys.stderr)
        return EXIT_FORMAT
    except (TrainingDivergedError, ExplanationError, EvaluationError) as exc:
        print(_error_line(EXIT_RUNTIME, exc), file=sys.stderr)
        return EXIT_RUNTIME
    except (CountsError, ValueError) as exc:
        print(_error_line(EXIT_UNEXPECTED, exc), file=sys.stderr)
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
