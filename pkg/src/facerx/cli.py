"""Command-line entry point: ``facerx <command> [options]``.

Every option can also come from a JSON ``--config`` file whose keys are the
option names with underscores (``batch_size``, ``augment_factor``, ...).
Flags given on the command line win over the file.  Exit codes: 0 success,
1 usage error, 2 data error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import __version__
from .data import (
    AugmentConfigError,
    AugmentParams,
    Dataset,
    DatasetError,
    GeometryError,
    HerbDictionary,
    ORGANS,
    REGIONS,
    SignalSpec,
    SyntheticError,
    UnknownHerbError,
    decodability_f1,
    default_signal_spec,
    expand_dataset,
    gen_synthetic,
    load_dataset,
    read_image,
    save_dataset,
    segment_face,
)
from .data.io import to_uint8
from .harness import (
    TABLE_HEADER,
    FoldPlanError,
    TrainConfig,
    TrainingError,
    cross_validate,
    decode_indices,
    evaluate,
    sweep_table,
    threshold_sweep,
    train,
)
from .harness.evaluation import per_sample_table
from .models import (
    ARCHITECTURES,
    CheckpointError,
    ConfigError,
    InputSizeError,
    build_model,
    read_checkpoint,
    save_checkpoint,
)
from .tensor import derive_rng, make_rng

log = logging.getLogger("facerx")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3

TRAIN_KEYS = [f.name for f in fields(TrainConfig) if f.name not in ("seed", "augment_factor")]
DEFAULT_SWEEP = "0.05:0.6:0.05"


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --------------------------------------------------------------------------
# option plumbing

def _global_options(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--seed", type=int, default=d, help="seed for all randomness (default 0)")
    p.add_argument("--threads", type=int, default=d,
                   help="BLAS thread limit (default 1, which keeps runs bitwise reproducible)")
    p.add_argument("--out", default=d, help="output directory")
    p.add_argument("--config", default=d, help="JSON file of option values; flags win")
    p.add_argument("-v", "--verbose", action="store_true", default=d,
                   help="log per-epoch progress")


def _train_options(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training")
    g.add_argument("--batch-size", type=int)
    g.add_argument("--max-epochs", type=int)
    g.add_argument("--val-fraction", type=float)
    g.add_argument("--patience", type=int)
    g.add_argument("--learning-rate", type=float)
    g.add_argument("--decay", type=float)
    g.add_argument("--momentum", type=float)
    g.add_argument("--augment-factor", type=float,
                   help="expand each training split to this multiple with augmented copies")


def _augment_options(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("augmentation")
    g.add_argument("--rotation-range", type=float)
    g.add_argument("--width-shift-range", type=float)
    g.add_argument("--height-shift-range", type=float)
    g.add_argument("--zoom-range", type=float)
    g.add_argument("--no-flip", dest="horizontal_flip", action="store_const", const=False)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="facerx", description="Herb prescription generation from face images.")
    parser.add_argument("--version", action="version", version=f"facerx {__version__}")
    _global_options(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="command")

    def command(name, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        _global_options(p, suppress=True)
        return p

    p = command("gen-synthetic", "write a planted-signal synthetic dataset")
    p.add_argument("--count", type=int)
    p.add_argument("--n-herbs", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--spec",
                   help="signal spec JSON (default: built from --amplitude, --organ-fraction, "
                        "--noise)")
    p.add_argument("--amplitude", type=float, help="planted patch brightness for the default spec")
    p.add_argument("--organ-fraction", type=float,
                   help="share of herbs whose signal sits in an organ crop (default spec)")
    p.add_argument("--noise", type=float, help="per-pixel noise level (default spec)")

    p = command("train", "train one model on a dataset")
    p.add_argument("--dataset")
    p.add_argument("--arch", help=f"one of: {', '.join(ARCHITECTURES)}")
    p.add_argument("--size", type=int, help="resize faces to this side on load")
    _train_options(p)
    _augment_options(p)

    for name, help_ in (("evaluate", "score a checkpoint on a dataset"),
                        ("sweep", "score a checkpoint at several thresholds")):
        p = command(name, help_)
        p.add_argument("--checkpoint")
        p.add_argument("--dataset")
        if name == "evaluate":
            p.add_argument("--threshold", type=float, help="decision threshold (default 0.25)")
        else:
            p.add_argument("--thresholds",
                           help=f"start:stop:step or comma list (default {DEFAULT_SWEEP})")

    p = command("crossval", "five-fold comparison of one or more architectures")
    p.add_argument("--dataset")
    p.add_argument("--arch", action="append",
                   help="architecture to compare; repeat for several (default both)")
    p.add_argument("--size", type=int)
    p.add_argument("--folds", type=int)
    p.add_argument("--test-size", type=int, help="test faces per fold (default min(500, N/folds))")
    p.add_argument("--threshold", type=float)
    _train_options(p)
    _augment_options(p)

    p = command("predict", "print the herbs predicted for one face image")
    p.add_argument("--checkpoint")
    p.add_argument("--image")
    p.add_argument("--dictionary", help="herb names (default: dictionary.txt beside the checkpoint)")
    p.add_argument("--threshold", type=float)
    p.add_argument("--show-crops", action="store_const", const=True,
                   help="write the seven segmented crops to --out")

    p = command("augment", "write an augmented expansion of a dataset")
    p.add_argument("--dataset")
    p.add_argument("--factor", type=float)
    _augment_options(p)
    return parser


DEFAULTS = {
    "seed": 0, "threads": 1, "out": None, "verbose": False,
    "count": 1000, "n_herbs": 20, "size": None, "spec": None, "amplitude": 0.45,
    "organ_fraction": 0.5, "noise": 0.03,
    "dataset": None, "arch": None, "checkpoint": None, "threshold": 0.25,
    "thresholds": DEFAULT_SWEEP, "folds": 5, "test_size": None, "image": None,
    "dictionary": None, "show_crops": False, "factor": 1.91, "augment_factor": 1.0,
    **{k: getattr(TrainConfig(), k) for k in TRAIN_KEYS if k != "threshold"},
    **{f.name: None for f in fields(AugmentParams)},
}


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults < config file < command-line flags."""
    given = {k: v for k, v in vars(args).items() if k != "command"}
    cfg_path = given.pop("config", None)
    allowed = set(given)
    if args.command in ("train", "crossval"):
        allowed |= set(TRAIN_KEYS)
    opts = {k: DEFAULTS.get(k) for k in allowed}
    if cfg_path:
        path = Path(cfg_path)
        if not path.is_file():
            raise DataError(f"config file not found: {path}")
        try:
            cfg = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(cfg, dict):
            raise UsageError(f"config file {path} must hold a JSON object")
        unknown = sorted(set(cfg) - allowed)
        if unknown:
            raise UsageError(f"unknown config keys for {args.command}: {', '.join(unknown)}")
        opts.update(cfg)
    opts.update({k: v for k, v in given.items() if v is not None})
    return opts


def _require(opts: dict, *keys: str) -> None:
    missing = [k for k in keys if opts.get(k) in (None, "")]
    if missing:
        raise UsageError("missing required option(s): "
                         + ", ".join("--" + k.replace("_", "-") for k in missing))


def _existing(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise DataError(f"{what} not found: {p}")
    return p


def _out_dir(opts: dict, default: str) -> Path:
    out = Path(opts["out"] or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _train_config(opts: dict) -> TrainConfig:
    return TrainConfig(**{k: opts.get(k, DEFAULTS[k]) for k in TRAIN_KEYS}, seed=opts["seed"],
                       augment_factor=opts["augment_factor"])


def _augment_params(opts: dict) -> AugmentParams:
    base = AugmentParams()
    return AugmentParams(**{f.name: getattr(base, f.name) if opts.get(f.name) is None
                            else opts[f.name] for f in fields(AugmentParams)})


def _arch(name: Optional[str]) -> str:
    if name not in ARCHITECTURES:
        raise UsageError(f"unknown architecture {name!r}; choose from {', '.join(ARCHITECTURES)}")
    return name


def _load_checkpoint_and_data(opts: dict):
    _require(opts, "checkpoint", "dataset")
    model, _ = read_checkpoint(_existing(opts["checkpoint"], "checkpoint"))
    data = load_dataset(_existing(opts["dataset"], "dataset"), size=model.size)
    if data.n_herbs != model.n_herbs:
        raise DataError(f"checkpoint predicts {model.n_herbs} herbs, dataset has {data.n_herbs}")
    return model, data


def _parse_thresholds(text) -> list[float]:
    if isinstance(text, list):
        return [float(t) for t in text]
    try:
        if ":" in text:
            start, stop, step = (float(x) for x in text.split(":"))
            if step <= 0:
                raise ValueError
            n = int(np.floor((stop - start) / step + 1e-9)) + 1
            return [round(start + i * step, 10) for i in range(n)]
        return [float(t) for t in text.split(",")]
    except ValueError:
        raise UsageError(f"cannot parse thresholds {text!r}") from None


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# commands

def cmd_gen_synthetic(opts: dict) -> int:
    _require(opts, "out")
    n, count = opts["n_herbs"], opts["count"]
    size = opts["size"] or 64
    if opts["spec"]:
        spec = SignalSpec.load(_existing(opts["spec"], "signal spec"))
    else:
        spec = default_signal_spec(n, seed=opts["seed"], amplitude=opts["amplitude"],
                                   organ_fraction=opts["organ_fraction"], noise=opts["noise"])
    data = gen_synthetic(count, n, size, spec, make_rng(opts["seed"]))
    oracle = decodability_f1(data, spec)
    root = _out_dir(opts, "")
    save_dataset(data, root)
    spec.save(root / "signal_spec.json")
    _write_json(root / "provenance.json", {
        "generator": f"facerx {__version__}", "seed": opts["seed"], "count": count,
        "n_herbs": n, "size": size, "signal_spec": spec.to_json(),
        "pixel_rule_oracle_f1": oracle})
    print(f"wrote {count} samples (S={size}, n={n}) to {root}; pixel-rule oracle f1 {oracle:.4f}")
    return EXIT_OK


def cmd_train(opts: dict) -> int:
    _require(opts, "dataset", "arch")
    arch = _arch(opts["arch"])
    config = _train_config(opts)
    params = _augment_params(opts)
    data = load_dataset(_existing(opts["dataset"], "dataset"), size=opts["size"])
    out = _out_dir(opts, "run")
    model = build_model(arch, data.n_herbs, data.size, derive_rng(config.seed, 100))
    model, history = train(model, data, config, params)
    save_checkpoint(model, out / "model.ckpt")
    data.dictionary.save(out / "dictionary.txt")
    history.save(out / "history.tsv")
    _write_json(out / "config.json", {
        "command": "train", "dataset": str(opts["dataset"]), "arch": arch, "size": data.size,
        "train": config.to_json(), "augment": {f.name: getattr(params, f.name)
                                               for f in fields(AugmentParams)}})
    best = history.records[history.best_epoch - 1]
    print(f"{arch}: {history.epochs_run} epochs, best epoch {history.best_epoch} "
          f"(val loss {best.val_loss:.5f}){', stopped early' if history.stopped_early else ''}")
    print(f"checkpoint: {out / 'model.ckpt'}")
    return EXIT_OK


def cmd_evaluate(opts: dict) -> int:
    model, data = _load_checkpoint_and_data(opts)
    report = evaluate(model, data, opts["threshold"])
    out = _out_dir(opts, "eval")
    (out / "report.tsv").write_text(sweep_table([report]))
    (out / "per_sample.tsv").write_text(per_sample_table(report, data.ids))
    s = report.summary()
    print(f"t={s['threshold']:.2f} n={s['n']} precision {s['precision']:.4f} "
          f"recall {s['recall']:.4f} f1 {s['f1']:.4f}")
    return EXIT_OK


def cmd_sweep(opts: dict) -> int:
    ts = _parse_thresholds(opts["thresholds"])
    model, data = _load_checkpoint_and_data(opts)
    table = sweep_table(threshold_sweep(model, data, ts))
    out = _out_dir(opts, "sweep")
    (out / "sweep.tsv").write_text(table)
    sys.stdout.write(table)
    return EXIT_OK


def cmd_crossval(opts: dict) -> int:
    _require(opts, "dataset")
    archs = opts["arch"] or list(ARCHITECTURES)
    if isinstance(archs, str):
        archs = [archs]
    archs = [_arch(a) for a in archs]
    config = _train_config(opts)
    params = _augment_params(opts)
    data = load_dataset(_existing(opts["dataset"], "dataset"), size=opts["size"])
    out = _out_dir(opts, "crossval")
    rows, folds = [TABLE_HEADER], ["model\tfold\tprecision\trecall\tf1\tepochs\tbest_epoch"]
    for arch in archs:
        name = arch if config.augment_factor == 1.0 else f"{arch}_aug"
        result = cross_validate(
            data, config, lambda n, s, rng, a=arch: build_model(a, n, s, rng), name,
            n_folds=opts["folds"], test_size=opts["test_size"], augment_params=params)
        rows.append(result.row())
        for f in result.folds:
            r = f.report
            folds.append(f"{name}\t{f.fold}\t{r.precision:.6f}\t{r.recall:.6f}\t{r.f1:.6f}\t"
                         f"{f.history.epochs_run}\t{f.history.best_epoch}")
        print(rows[-1], flush=True)
    (out / "crossval.tsv").write_text("\n".join(rows) + "\n")
    (out / "folds.tsv").write_text("\n".join(folds) + "\n")
    _write_json(out / "config.json", {"command": "crossval", "dataset": str(opts["dataset"]),
                                      "archs": archs, "folds": opts["folds"],
                                      "test_size": opts["test_size"],
                                      "train": config.to_json()})
    return EXIT_OK


def cmd_predict(opts: dict) -> int:
    _require(opts, "checkpoint", "image")
    ckpt = _existing(opts["checkpoint"], "checkpoint")
    img_path = _existing(opts["image"], "image")
    model, _ = read_checkpoint(ckpt)
    dict_path = Path(opts["dictionary"]) if opts["dictionary"] else ckpt.parent / "dictionary.txt"
    if dict_path.exists():
        dictionary = HerbDictionary.load(dict_path)
    elif opts["dictionary"]:
        raise DataError(f"dictionary not found: {dict_path}")
    else:
        dictionary = HerbDictionary.generic(model.n_herbs)
    if len(dictionary) != model.n_herbs:
        raise DataError(f"dictionary has {len(dictionary)} herbs, checkpoint predicts "
                        f"{model.n_herbs}")
    try:
        face = read_image(img_path, model.size)
    except (UnidentifiedImageError, OSError) as exc:
        raise DataError(f"cannot read image {img_path}: {exc}") from None
    data = Dataset.from_faces(["query"], face[None], np.zeros((1, model.n_herbs), np.uint8),
                              dictionary)
    probs = model.predict(data.batch([0]))[0]
    chosen = decode_indices(probs, opts["threshold"])
    for i in sorted(chosen, key=lambda i: (-probs[i], i)):
        print(f"{dictionary.names[i]}\t{probs[i]:.4f}")
    if opts["show_crops"]:
        out = _out_dir(opts, "crops")
        organs, regions = segment_face(face)
        for name, crop in zip(ORGANS + REGIONS, list(organs) + list(regions)):
            Image.fromarray(to_uint8(crop)).save(out / f"{name}.png")
        log.info("crops written to %s", out)
    return EXIT_OK


def cmd_augment(opts: dict) -> int:
    _require(opts, "dataset", "out")
    data = load_dataset(_existing(opts["dataset"], "dataset"))
    out = Path(opts["out"])
    if out.resolve() == Path(opts["dataset"]).resolve():
        raise UsageError("--out must differ from --dataset (inputs are never modified)")
    params = _augment_params(opts)
    expanded = expand_dataset(data, opts["factor"], make_rng(opts["seed"]), params)
    save_dataset(expanded, _out_dir(opts, ""))
    print(f"expanded {len(data)} -> {len(expanded)} samples into {out}")
    return EXIT_OK


COMMANDS = {
    "gen-synthetic": cmd_gen_synthetic,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "crossval": cmd_crossval,
    "predict": cmd_predict,
    "augment": cmd_augment,
}

USAGE_ERRORS = (UsageError, ConfigError, TrainingError, AugmentConfigError)
DATA_ERRORS = (DataError, DatasetError, UnknownHerbError, CheckpointError, InputSizeError,
               GeometryError, SyntheticError, FoldPlanError)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        opts = resolve(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    logging.basicConfig(level=logging.INFO if opts.get("verbose") else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    try:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=opts["threads"]):
            return COMMANDS[args.command](opts)
    except USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - last-resort runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
