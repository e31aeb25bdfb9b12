"""Command-line pipeline: synth-gen, train, eval, lambda-stats, ablate, plot.

Every command is deterministic given its flags; all randomness flows from
explicit seeds. A JSON config file (--config) supplies defaults that
individual flags override; --print-config echoes the merged configuration and
exits, and its output reparses as a config file.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from dataclasses import replace

from .data import (
    LabelEmbeddings,
    SyntheticTaskSpec,
    generate_synthetic_crossmodal,
    load_dataset,
    load_embedding_file,
    split_categories,
    write_dataset,
    write_embedding_file,
)
from .episodes import EpisodeConfig
from .errors import ConfigurationError, ProtomixError
from .model import (
    ConditioningMode,
    CrossModalModel,
    ModelConfig,
    load_checkpoint,
    save_checkpoint,
)
from .plotting import render_line_chart
from .training import TrainConfig, ablation_run, evaluate, lambda_statistics, train

__all__ = ["main"]


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


def _int_list(value):
    if value is None:
        return []
    if isinstance(value, (list, tuple)):
        return [int(v) for v in value]
    return [int(v) for v in str(value).split(",") if v.strip()]


def _float_list(value):
    if isinstance(value, (list, tuple)):
        return [float(v) for v in value]
    return [float(v) for v in str(value).split(",") if v.strip()]


def _str_list(value):
    if isinstance(value, (list, tuple)):
        return [str(v) for v in value]
    return [v.strip() for v in str(value).split(",") if v.strip()]


def _merge_config(defaults: dict, args: argparse.Namespace) -> dict:
    """defaults < config file < explicitly passed flags."""
    merged = dict(defaults)
    path = getattr(args, "config", None)
    if path:
        with open(path, "r", encoding="utf-8") as fh:
            loaded = json.load(fh)
        unknown = set(loaded) - set(defaults)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        merged.update(loaded)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def _maybe_print_config(config: dict, args) -> bool:
    if getattr(args, "print_config", False):
        print(json.dumps(config, sort_keys=True, indent=2))
        return True
    return False


def _write_csv(header, rows, stream):
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])


def _emit_csv(header, rows, out_path=None):
    buffer = io.StringIO()
    _write_csv(header, rows, buffer)
    sys.stdout.write(buffer.getvalue())
    if out_path:
        os.makedirs(os.path.dirname(out_path) or ".", exist_ok=True)
        with open(out_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(buffer.getvalue())


def _load_inputs(config):
    dataset = load_dataset(config["dataset"])
    table = load_embedding_file(config["embeddings"])
    embs = LabelEmbeddings(dataset, table, seed=config["seed"])
    return dataset, table, embs


def _splits(dataset, config):
    fractions = tuple(_float_list(config["split_fractions"]))
    return split_categories(dataset, fractions, seed=config["split_seed"])


def _pick_split(splits, name: str):
    try:
        return splits[("train", "val", "test").index(name)]
    except ValueError:
        raise ConfigurationError(f"split must be train, val, or test, got {name!r}") from None


def _model_config(config, dataset, table) -> ModelConfig:
    semantic_dim = table.dimension
    if semantic_dim is None:
        raise ConfigurationError("embedding file is empty: semantic dimension is undefined")
    return ModelConfig(
        visual_dim=dataset.feature_dimension,
        semantic_dim=semantic_dim,
        embed_dim=config["embed_dim"],
        encoder_hidden=tuple(_int_list(config["encoder_hidden"])),
        transform_hidden=config["transform_hidden"],
        mixer_hidden=config["mixer_hidden"],
        mode=ConditioningMode(config["mode"]),
        distance=config["distance"],
        dropout_keep=config["dropout_keep"],
        lambda_fixed=config["lambda_fixed"],
        seed=config["seed"],
    )


def _train_config(config) -> TrainConfig:
    return TrainConfig(
        episode_config=EpisodeConfig(config["n_way"], config["k_shot"], config["k_query"]),
        iterations=config["iterations"],
        initial_lr=config["lr"],
        momentum=config["momentum"],
        anneal_steps=tuple(_int_list(config["anneal_steps"])),
        anneal_factor=config["anneal_factor"],
        tasks_per_batch=config["tasks_per_batch"],
        seed=config["seed"],
    )


def _check_checkpoint_compat(model: CrossModalModel, dataset, table) -> None:
    if model.config.visual_dim != dataset.feature_dimension:
        raise ConfigurationError(
            f"checkpoint expects visual dimension {model.config.visual_dim} but the "
            f"dataset has feature dimension {dataset.feature_dimension}"
        )
    if table.dimension is not None and model.config.semantic_dim != table.dimension:
        raise ConfigurationError(
            f"checkpoint expects semantic dimension {model.config.semantic_dim} but the "
            f"embedding file has dimension {table.dimension}"
        )


# ---------------------------------------------------------------------------
# command defaults (mirror TrainConfig/SyntheticTaskSpec field names)

SYNTH_DEFAULTS = {
    "categories": 40,
    "visual_dim": 12,
    "semantic_dim": 12,
    "visual_spread": 0.8,
    "visual_separation": 3.0,
    "semantic_separation": 3.0,
    "samples_per_category": 40,
    "out_dir": "synthetic",
    "seed": 0,
}

TRAIN_DEFAULTS = {
    "dataset": None,
    "embeddings": None,
    "out_dir": "run",
    "iterations": 600,
    "lr": 0.01,
    "momentum": 0.9,
    "anneal_steps": [],
    "anneal_factor": 10.0,
    "tasks_per_batch": 2,
    "n_way": 5,
    "k_shot": 1,
    "k_query": 5,
    "mode": "w",
    "distance": "sq-euclid",
    "dropout_keep": 0.7,
    "lambda_fixed": None,
    "embed_dim": 16,
    "encoder_hidden": [64],
    "transform_hidden": 300,
    "mixer_hidden": 300,
    "split_fractions": [0.6, 0.2, 0.2],
    "split_seed": 0,
    "seed": 0,
}

EVAL_DEFAULTS = {
    "checkpoint": None,
    "dataset": None,
    "embeddings": None,
    "out_dir": None,
    "split": "test",
    "episodes": 500,
    "queries_per_episode": 20,
    "n_way": 5,
    "k_shot": 1,
    "split_fractions": [0.6, 0.2, 0.2],
    "split_seed": 0,
    "seed": 0,
}

LAMBDA_DEFAULTS = {
    **{k: v for k, v in TRAIN_DEFAULTS.items() if k not in ("out_dir",)},
    "checkpoint": None,
    "out_dir": None,
    "split": "test",
    "shots": [1, 5, 10],
    "episodes": 200,
    "train_per_shot": False,
}

ABLATE_DEFAULTS = {
    **{k: v for k, v in TRAIN_DEFAULTS.items() if k not in ("out_dir", "mode")},
    "out_dir": None,
    "modes": ["w", "e", "p", "wq"],
    "split": "test",
    "episodes": 500,
    "queries_per_episode": 20,
}

PLOT_DEFAULTS = {
    "csv": None,
    "kind": None,
    "out": "plot.svg",
}


def _require(config, *keys):
    for key in keys:
        if config.get(key) is None:
            raise ConfigurationError(f"missing required option --{key.replace('_', '-')}")


# ---------------------------------------------------------------------------
# commands


def cmd_synth_gen(args) -> int:
    config = _merge_config(SYNTH_DEFAULTS, args)
    if _maybe_print_config(config, args):
        return 0
    spec = SyntheticTaskSpec(
        n_categories=config["categories"],
        visual_dim=config["visual_dim"],
        semantic_dim=config["semantic_dim"],
        visual_spread=config["visual_spread"],
        visual_separation=config["visual_separation"],
        semantic_separation=config["semantic_separation"],
        samples_per_category=config["samples_per_category"],
        seed=config["seed"],
    )
    dataset, table = generate_synthetic_crossmodal(spec)
    out = config["out_dir"]
    write_dataset(dataset, os.path.join(out, "dataset"))
    write_embedding_file(table, os.path.join(out, "embeddings.txt"))
    print(f"seed {spec.seed}")
    print(f"dataset {os.path.join(out, 'dataset')}")
    print(f"embeddings {os.path.join(out, 'embeddings.txt')}")
    return 0


def cmd_train(args) -> int:
    config = _merge_config(TRAIN_DEFAULTS, args)
    if _maybe_print_config(config, args):
        return 0
    _require(config, "dataset", "embeddings")
    dataset, table, embs = _load_inputs(config)
    train_split = _splits(dataset, config)[0]
    model = CrossModalModel(_model_config(config, dataset, table))
    trace = train(model, dataset, train_split, _train_config(config), embs)
    out = config["out_dir"]
    os.makedirs(out, exist_ok=True)
    checkpoint_path = os.path.join(out, "checkpoint.json")
    save_checkpoint(model, checkpoint_path)
    with open(os.path.join(out, "loss_trace.csv"), "w", encoding="utf-8", newline="") as fh:
        _write_csv(
            ["iteration", "learning_rate", "batch_loss"],
            [(r.iteration, r.learning_rate, r.batch_loss) for r in trace],
            fh,
        )
    print(f"checkpoint {checkpoint_path}")
    return 0


def cmd_eval(args) -> int:
    config = _merge_config(EVAL_DEFAULTS, args)
    if _maybe_print_config(config, args):
        return 0
    _require(config, "checkpoint", "dataset", "embeddings")
    dataset, table, embs = _load_inputs(config)
    model = load_checkpoint(config["checkpoint"])
    _check_checkpoint_compat(model, dataset, table)
    split = _pick_split(_splits(dataset, config), config["split"])
    report = evaluate(
        model,
        dataset,
        split,
        EpisodeConfig(config["n_way"], config["k_shot"], 1),
        config["episodes"],
        config["queries_per_episode"],
        config["seed"],
        embs,
    )
    _emit_csv(
        ["n_episodes", "n_way", "k_shot", "mean_accuracy", "ci95", "lambda_mean", "lambda_std"],
        [
            (
                report.n_episodes,
                config["n_way"],
                config["k_shot"],
                report.mean_accuracy,
                report.ci95_halfwidth,
                report.lambda_mean,
                report.lambda_std,
            )
        ],
        os.path.join(config["out_dir"], "eval.csv") if config["out_dir"] else None,
    )
    return 0


def cmd_lambda_stats(args) -> int:
    config = _merge_config(LAMBDA_DEFAULTS, args)
    if _maybe_print_config(config, args):
        return 0
    _require(config, "dataset", "embeddings")
    shots = _int_list(config["shots"])
    dataset, table, embs = _load_inputs(config)
    splits = _splits(dataset, config)
    eval_split = _pick_split(splits, config["split"])

    if config["train_per_shot"]:
        # One model per shot count, identical seeds: the shot trend of the
        # mixing coefficient is a property of per-shot-trained models.
        rows = []
        for k in shots:
            model = CrossModalModel(_model_config(config, dataset, table))
            shot_config = replace(
                _train_config(config),
                episode_config=EpisodeConfig(config["n_way"], k, config["k_query"]),
            )
            train(model, dataset, splits[0], shot_config, embs)
            stats = lambda_statistics(
                model, dataset, eval_split, [k], config["episodes"],
                n_way=config["n_way"], seed=config["seed"], label_embeddings=embs,
            )
            rows.append(stats[0])
    else:
        _require(config, "checkpoint")
        model = load_checkpoint(config["checkpoint"])
        _check_checkpoint_compat(model, dataset, table)
        rows = lambda_statistics(
            model, dataset, eval_split, shots, config["episodes"],
            n_way=config["n_way"], seed=config["seed"], label_embeddings=embs,
        )
    _emit_csv(
        ["k_shot", "lambda_mean", "lambda_std"],
        [(r.k_shot, r.lambda_mean, r.lambda_std) for r in rows],
        os.path.join(config["out_dir"], "lambda_stats.csv") if config["out_dir"] else None,
    )
    return 0


def cmd_ablate(args) -> int:
    config = _merge_config(ABLATE_DEFAULTS, args)
    if _maybe_print_config(config, args):
        return 0
    _require(config, "dataset", "embeddings")
    modes = []
    for name in _str_list(config["modes"]):
        try:
            modes.append(ConditioningMode(name))
        except ValueError:
            valid = ", ".join(m.value for m in ConditioningMode)
            raise ConfigurationError(f"unknown mode {name!r}; valid modes: {valid}") from None
    dataset, table, embs = _load_inputs(config)
    splits = _splits(dataset, config)
    eval_split = _pick_split(splits, config["split"])
    base = dict(config)
    base["mode"] = "w"
    rows = ablation_run(
        dataset,
        embs,
        splits[0],
        eval_split,
        _model_config(base, dataset, table),
        _train_config(config),
        modes,
        config["episodes"],
        config["queries_per_episode"],
        config["seed"],
    )
    _emit_csv(
        ["mode", "mean_accuracy", "ci95"],
        [(mode.value, report.mean_accuracy, report.ci95_halfwidth) for mode, report in rows],
        os.path.join(config["out_dir"], "ablation.csv") if config["out_dir"] else None,
    )
    return 0


PLOT_KINDS = {
    "accuracy-vs-shots": ("k_shot", "mean_accuracy", "ci95", "accuracy", "mean accuracy"),
    "lambda-vs-shots": ("k_shot", "lambda_mean", "lambda_std", "lambda", "mixing coefficient"),
}


def cmd_plot(args) -> int:
    config = _merge_config(PLOT_DEFAULTS, args)
    if _maybe_print_config(config, args):
        return 0
    _require(config, "csv", "kind")
    if config["kind"] not in PLOT_KINDS:
        raise ConfigurationError(
            f"kind must be one of {sorted(PLOT_KINDS)}, got {config['kind']!r}"
        )
    x_col, y_col, err_col, name, y_label = PLOT_KINDS[config["kind"]]
    with open(config["csv"], "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
        header = reader.fieldnames or []
    for column in (x_col, y_col, err_col):
        if column not in header:
            raise ConfigurationError(f"CSV is missing the {column!r} column")
    if not rows:
        raise ConfigurationError("CSV has no data rows")
    xs = [float(r[x_col]) for r in rows]
    ys = [float(r[y_col]) for r in rows]
    errs = [float(r[err_col]) for r in rows]
    svg = render_line_chart(
        xs,
        [(name, ys, errs)],
        title=config["kind"],
        x_label="shots (K)",
        y_label=y_label,
    )
    with open(config["out"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write(svg)
    print(f"plot {config['out']}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_common(sub):
    sub.add_argument("--config", help="JSON config file; flags override its values")
    sub.add_argument("--print-config", action="store_true", help="print merged config and exit")
    sub.add_argument("--seed", type=int)


def _add_data_flags(sub):
    sub.add_argument("--dataset", help="dataset root directory")
    sub.add_argument("--embeddings", help="word-embedding text file")
    sub.add_argument("--split-fractions", dest="split_fractions")
    sub.add_argument("--split-seed", dest="split_seed", type=int)


def _add_model_flags(sub):
    sub.add_argument("--mode", choices=[m.value for m in ConditioningMode])
    sub.add_argument("--distance", choices=["sq-euclid", "euclid"])
    sub.add_argument("--lambda-fixed", dest="lambda_fixed", type=float)
    sub.add_argument("--dropout-keep", dest="dropout_keep", type=float)
    sub.add_argument("--embed-dim", dest="embed_dim", type=int)
    sub.add_argument("--encoder-hidden", dest="encoder_hidden")
    sub.add_argument("--transform-hidden", dest="transform_hidden", type=int)
    sub.add_argument("--mixer-hidden", dest="mixer_hidden", type=int)


def _add_train_flags(sub):
    sub.add_argument("--iterations", type=int)
    sub.add_argument("--lr", dest="lr", type=float)
    sub.add_argument("--momentum", type=float)
    sub.add_argument("--anneal-steps", dest="anneal_steps")
    sub.add_argument("--anneal-factor", dest="anneal_factor", type=float)
    sub.add_argument("--tasks-per-batch", dest="tasks_per_batch", type=int)
    sub.add_argument("--n-way", dest="n_way", type=int)
    sub.add_argument("--k-shot", dest="k_shot", type=int)
    sub.add_argument("--k-query", dest="k_query", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="protomix",
        description="Cross-modal few-shot classification with adaptive prototype mixing.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    synth = subs.add_parser("synth-gen", help="generate a synthetic cross-modal dataset")
    _add_common(synth)
    synth.add_argument("--out-dir", dest="out_dir")
    synth.add_argument("--categories", type=int)
    synth.add_argument("--visual-dim", dest="visual_dim", type=int)
    synth.add_argument("--semantic-dim", dest="semantic_dim", type=int)
    synth.add_argument("--visual-spread", dest="visual_spread", type=float)
    synth.add_argument("--visual-separation", dest="visual_separation", type=float)
    synth.add_argument("--semantic-separation", dest="semantic_separation", type=float)
    synth.add_argument("--samples-per-category", dest="samples_per_category", type=int)
    synth.set_defaults(func=cmd_synth_gen)

    tr = subs.add_parser("train", help="episodic training; writes checkpoint and loss CSV")
    _add_common(tr)
    _add_data_flags(tr)
    _add_model_flags(tr)
    _add_train_flags(tr)
    tr.add_argument("--out-dir", dest="out_dir")
    tr.set_defaults(func=cmd_train)

    ev = subs.add_parser("eval", help="evaluate a checkpoint; CSV to stdout")
    _add_common(ev)
    _add_data_flags(ev)
    ev.add_argument("--checkpoint")
    ev.add_argument("--out-dir", dest="out_dir")
    ev.add_argument("--split", choices=["train", "val", "test"])
    ev.add_argument("--episodes", type=int)
    ev.add_argument("--queries-per-episode", dest="queries_per_episode", type=int)
    ev.add_argument("--n-way", dest="n_way", type=int)
    ev.add_argument("--k-shot", dest="k_shot", type=int)
    ev.set_defaults(func=cmd_eval)

    lam = subs.add_parser("lambda-stats", help="mixing-coefficient statistics per shot count")
    _add_common(lam)
    _add_data_flags(lam)
    _add_model_flags(lam)
    _add_train_flags(lam)
    lam.add_argument("--checkpoint")
    lam.add_argument("--out-dir", dest="out_dir")
    lam.add_argument("--split", choices=["train", "val", "test"])
    lam.add_argument("--shots")
    lam.add_argument("--episodes", type=int)
    lam.add_argument(
        "--train-per-shot",
        dest="train_per_shot",
        action="store_true",
        default=None,
        help="train one model per shot count instead of evaluating a checkpoint",
    )
    lam.set_defaults(func=cmd_lambda_stats)

    ab = subs.add_parser("ablate", help="train+eval one model per conditioning mode")
    _add_common(ab)
    _add_data_flags(ab)
    _add_model_flags(ab)
    _add_train_flags(ab)
    ab.add_argument("--out-dir", dest="out_dir")
    ab.add_argument("--split", choices=["train", "val", "test"])
    ab.add_argument("--modes")
    ab.add_argument("--episodes", type=int)
    ab.add_argument("--queries-per-episode", dest="queries_per_episode", type=int)
    ab.set_defaults(func=cmd_ablate)

    pl = subs.add_parser("plot", help="render a CSV as a deterministic SVG chart")
    _add_common(pl)
    pl.add_argument("--csv")
    pl.add_argument("--kind", choices=sorted(PLOT_KINDS))
    pl.add_argument("--out")
    pl.set_defaults(func=cmd_plot)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ProtomixError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
