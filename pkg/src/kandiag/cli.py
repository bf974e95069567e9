"""Command-line entry point: train, eval, diagnose, viz, synth.

Options may come from a flat key=value config file (--config); any flag
given on the command line overrides the file. Every failure path prints a
single machine-parseable line ``error:<code>: <message>`` on stderr and
exits nonzero (2 for configuration/usage problems, 1 otherwise).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .data import SynthSpec, load_logs, save_dataset, split, synth_dina
from .errors import (
    CapabilityError,
    ConfigError,
    ContractError,
    IdLookupError,
    IntegrityError,
    KandiagError,
    MetricError,
    ParseError,
    TrainingError,
)
from .kan import SplineGrid
from .models import VARIANTS, build_model
from .training import TrainConfig, evaluate, train
from .viz import kan_dot, kan_svg

_ERROR_CODES = {
    ConfigError: ("config", 2),
    ParseError: ("parse", 1),
    IntegrityError: ("integrity", 1),
    IdLookupError: ("lookup", 1),
    CapabilityError: ("capability", 1),
    TrainingError: ("training", 1),
    MetricError: ("metric", 1),
    ContractError: ("contract", 1),
}


def _fail(exc: Exception) -> int:
    for etype, (code, status) in _ERROR_CODES.items():
        if isinstance(exc, etype):
            print(f"error:{code}: {exc}", file=sys.stderr)
            return status
    if isinstance(exc, OSError):
        print(f"error:io: {exc}", file=sys.stderr)
        return 1
    raise exc


def _parse_config_file(path: str) -> dict[str, str]:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    values: dict[str, str] = {}
    for lineno, line in enumerate(p.read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{p}: line {lineno}: expected key = value")
        key, _, value = stripped.partition("=")
        values[key.strip()] = value.strip()
    return values


class Options:
    """Layered option lookup: command line, then config file, then default."""

    def __init__(self, args: argparse.Namespace):
        self.cli = vars(args)
        self.file = _parse_config_file(args.config) if args.config else {}

    def get(self, key: str, default=None, cast=str):
        cli_val = self.cli.get(key)
        if cli_val is not None:
            return cli_val
        if key in self.file:
            raw = self.file[key]
            if cast is bool:
                return raw.lower() in ("1", "true", "yes", "on")
            return cast(raw)
        return default

    def require(self, key: str, cast=str):
        value = self.get(key, None, cast)
        if value is None:
            raise ConfigError(f"missing required option: {key}")
        return value


def _check_path(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise ParseError(f"{what} file not found: {p}")
    return p


def _out_dir(opts: Options) -> Path:
    out = Path(opts.get("out", "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _grid_from(opts: Options) -> SplineGrid:
    return SplineGrid(
        lo=opts.get("grid_lo", -1.0, float),
        hi=opts.get("grid_hi", 1.0, float),
        intervals=opts.get("grid_size", 5, int),
        degree=opts.get("spline_degree", 3, int),
    )


def _load_split_dataset(opts: Options, seed: int):
    logs = _check_path(opts.require("logs"), "response log")
    qmatrix = _check_path(opts.require("qmatrix"), "Q-matrix")
    dataset = load_logs(logs, qmatrix)
    return split(dataset, ratio=opts.get("split_ratio", 0.7, float), seed=seed)


def cmd_train(opts: Options) -> int:
    variant = opts.require("variant")
    if variant not in VARIANTS:
        raise ConfigError(
            f"unknown variant {variant!r}; supported: {', '.join(VARIANTS)}"
        )
    seed = opts.get("seed", 0, int)
    dataset = _load_split_dataset(opts, seed)
    config = TrainConfig(
        batch_size=opts.get("batch_size", 128, int),
        learning_rate=opts.get("learning_rate", 0.002, float),
        epochs=opts.get("epochs", 20, int),
        seed=seed,
        gumbel_tau_start=opts.get("gumbel_tau_start", 1.0, float),
        gumbel_tau_end=opts.get("gumbel_tau_end", 0.3, float),
        monotone_projection=opts.get("monotone_projection", True, bool),
    )
    config.validate()
    rng = np.random.default_rng(seed)
    model = build_model(
        variant,
        dataset.n_students,
        dataset.Q,
        rng=rng,
        dim=opts.get("dim", None, int),
        k_heads=opts.get("k_heads", 2, int),
        hidden=(opts.get("hidden1", 256, int), opts.get("hidden2", 128, int)),
        grid=_grid_from(opts),
        input_norm=opts.get("input_norm", "none"),
        gumbel_tau=config.gumbel_tau_start,
    )
    history = train(model, dataset, config)
    out = _out_dir(opts)
    ckpt_path = out / "model.ckpt"
    ckpt.save_checkpoint(model, ckpt_path, seed=seed, epochs=config.epochs)
    (out / "history.log").write_text(
        "\n".join(history.to_lines()) + "\n", encoding="utf-8"
    )
    final = history.final()
    print(f"trained {variant}: test_auc={final.test_auc:.4f} "
          f"test_acc={final.test_acc:.4f} train_loss={final.train_loss:.4f}")
    print(f"checkpoint: {ckpt_path}")
    return 0


def _load_model_and_data(opts: Options):
    path = _check_path(opts.require("checkpoint"), "checkpoint")
    model = ckpt.load_checkpoint(path)
    manifest, _ = ckpt.read_raw(path)
    dataset = _load_split_dataset(opts, manifest["seed"])
    dims = manifest["dims"]
    if (dataset.n_students, dataset.n_exercises, dataset.n_concepts) != (
        dims["N"], dims["M"], dims["K"]
    ):
        raise IntegrityError(
            f"checkpoint dims (N={dims['N']}, M={dims['M']}, K={dims['K']}) do not "
            f"match dataset (N={dataset.n_students}, M={dataset.n_exercises}, "
            f"K={dataset.n_concepts})"
        )
    return model, dataset


def cmd_eval(opts: Options) -> int:
    model, dataset = _load_model_and_data(opts)
    which = "train" if opts.get("eval_on_train", False, bool) else "test"
    metrics = evaluate(model, dataset, which)
    print(f"split={which} auc={metrics.auc:.6f} acc={metrics.acc:.6f} "
          f"loss={metrics.loss:.6f} n={metrics.n_evaluated}")
    out = _out_dir(opts)
    report = out / "report.log"
    import json

    report.write_text(
        json.dumps(
            {"split": which, "auc": metrics.auc, "acc": metrics.acc,
             "loss": metrics.loss, "n": metrics.n_evaluated},
            sort_keys=True,
        ) + "\n",
        encoding="utf-8",
    )
    print(f"report: {report}")
    return 0


def cmd_diagnose(opts: Options) -> int:
    model, dataset = _load_model_and_data(opts)
    spec = opts.get("students", "all")
    if spec == "all":
        dense_ids = list(range(dataset.n_students))
    else:
        dense_ids = []
        for raw in spec.split(","):
            raw = raw.strip()
            if raw not in dataset.student_ids:
                raise IdLookupError(f"unknown student id {raw!r}")
            dense_ids.append(dataset.student_ids[raw])
    by_student = dataset.train_exercises_by_student()
    rows = []
    for sid in dense_ids:
        mv = model.mastery(sid, exercises=by_student.get(sid, []))
        rows.append(",".join(f"{v:.6f}" for v in mv.values))
    out = _out_dir(opts)
    table = out / "mastery.csv"
    header = ",".join(f"c_{k}" for k in range(dataset.n_concepts))
    table.write_text(header + "\n" + "\n".join(rows) + "\n", encoding="utf-8")
    print(f"mastery table ({len(rows)} students): {table}")
    return 0


def cmd_viz(opts: Options) -> int:
    path = _check_path(opts.require("checkpoint"), "checkpoint")
    model = ckpt.load_checkpoint(path)
    nets = model.kan_networks()
    if not nets:
        raise CapabilityError(
            f"variant {model.variant} has no KAN sub-networks to visualize"
        )
    which = opts.get("which_kan", None)
    if which is None:
        which = sorted(nets)[0]
    if which not in nets:
        raise CapabilityError(
            f"no KAN named {which!r} in {model.variant}; available: {', '.join(sorted(nets))}"
        )
    threshold = opts.get("prune_threshold", 0.0, float)
    fmt = opts.get("format", "dot")
    if fmt not in ("dot", "svg"):
        raise ConfigError(f"format must be dot or svg, got {fmt!r}")
    net = nets[which]
    doc = kan_dot(net, threshold, name=which) if fmt == "dot" else kan_svg(net, threshold)
    out = _out_dir(opts)
    target = out / f"kan_{which}.{fmt}"
    target.write_text(doc, encoding="utf-8")
    print(f"graph: {target}")
    return 0


def cmd_synth(opts: Options) -> int:
    spec = SynthSpec(
        n_students=opts.get("n_students", 300, int),
        n_exercises=opts.get("n_exercises", 30, int),
        n_concepts=opts.get("n_concepts", 5, int),
        guess_range=(opts.get("guess_lo", 0.05, float), opts.get("guess_hi", 0.25, float)),
        slip_range=(opts.get("slip_lo", 0.05, float), opts.get("slip_hi", 0.25, float)),
        mastery_prevalence=opts.get("prevalence", 0.5, float),
        seed=opts.get("seed", 0, int),
    )
    dataset, mastery = synth_dina(spec)
    out = _out_dir(opts)
    paths = save_dataset(dataset, out)
    truth = out / "truth.csv"
    header = "student_id," + ",".join(f"c_{k}" for k in range(spec.n_concepts))
    inv = {i: s for s, i in dataset.student_ids.items()}
    lines = [header]
    for i in range(spec.n_students):
        lines.append(inv[i] + "," + ",".join(str(int(v)) for v in mastery[i]))
    truth.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"synthetic dataset: {paths['logs']} {paths['qmatrix']} "
          f"{paths['manifest']} {truth}")
    return 0


_COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "diagnose": cmd_diagnose,
    "viz": cmd_viz,
    "synth": cmd_synth,
}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--seed", type=int, help="random seed")
    p.add_argument("--out", help="output directory (default: out)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kandiag",
        description="Cognitive diagnosis with spline-activation networks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model from response logs")
    _add_common(p_train)
    p_train.add_argument("--variant", help=f"one of: {', '.join(VARIANTS)}")
    p_train.add_argument("--logs", help="response log CSV")
    p_train.add_argument("--qmatrix", help="Q-matrix CSV")
    p_train.add_argument("--batch-size", dest="batch_size", type=int)
    p_train.add_argument("--learning-rate", dest="learning_rate", type=float)
    p_train.add_argument("--epochs", type=int)
    p_train.add_argument("--split-ratio", dest="split_ratio", type=float)
    p_train.add_argument("--dim", type=int)
    p_train.add_argument("--k-heads", dest="k_heads", type=int)
    p_train.add_argument("--hidden1", type=int)
    p_train.add_argument("--hidden2", type=int)
    p_train.add_argument("--grid-size", dest="grid_size", type=int)
    p_train.add_argument("--spline-degree", dest="spline_degree", type=int)
    p_train.add_argument("--grid-lo", dest="grid_lo", type=float)
    p_train.add_argument("--grid-hi", dest="grid_hi", type=float)
    p_train.add_argument("--input-norm", dest="input_norm",
                         choices=("none", "affine"))
    p_train.add_argument("--gumbel-tau-start", dest="gumbel_tau_start", type=float)
    p_train.add_argument("--gumbel-tau-end", dest="gumbel_tau_end", type=float)
    p_train.add_argument("--monotone-projection", dest="monotone_projection",
                         action="store_const", const=True)
    p_train.add_argument("--no-monotone-projection", dest="monotone_projection",
                         action="store_const", const=False)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_common(p_eval)
    p_eval.add_argument("--checkpoint")
    p_eval.add_argument("--logs")
    p_eval.add_argument("--qmatrix")
    p_eval.add_argument("--split-ratio", dest="split_ratio", type=float)
    p_eval.add_argument("--eval-on-train", dest="eval_on_train",
                        action="store_const", const=True)

    p_diag = sub.add_parser("diagnose", help="emit per-student mastery rows")
    _add_common(p_diag)
    p_diag.add_argument("--checkpoint")
    p_diag.add_argument("--logs")
    p_diag.add_argument("--qmatrix")
    p_diag.add_argument("--split-ratio", dest="split_ratio", type=float)
    p_diag.add_argument("--students", help="comma-separated ids or 'all'")

    p_viz = sub.add_parser("viz", help="emit a DOT or SVG structure graph")
    _add_common(p_viz)
    p_viz.add_argument("--checkpoint")
    p_viz.add_argument("--which-kan", dest="which_kan")
    p_viz.add_argument("--prune-threshold", dest="prune_threshold", type=float)
    p_viz.add_argument("--format", choices=("dot", "svg"))

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset")
    _add_common(p_synth)
    p_synth.add_argument("--n-students", dest="n_students", type=int)
    p_synth.add_argument("--n-exercises", dest="n_exercises", type=int)
    p_synth.add_argument("--n-concepts", dest="n_concepts", type=int)
    p_synth.add_argument("--guess-lo", dest="guess_lo", type=float)
    p_synth.add_argument("--guess-hi", dest="guess_hi", type=float)
    p_synth.add_argument("--slip-lo", dest="slip_lo", type=float)
    p_synth.add_argument("--slip-hi", dest="slip_hi", type=float)
    p_synth.add_argument("--prevalence", type=float)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        opts = Options(args)
        return _COMMANDS[args.command](opts)
    except KandiagError as exc:
        return _fail(exc)
    except OSError as exc:
        return _fail(exc)


if __name__ == "__main__":
    sys.exit(main())
