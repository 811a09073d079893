"""Command-line entry point: ``siamese-eeg <subcommand> [options]``.

Settings come from built-in defaults, overridden by ``--config file.json``,
overridden by command-line flags. Exit codes: 0 success, 2 configuration or
input error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import checkpoint, data, encoder, evaluation
from .errors import NumericError, SiameseError

log = logging.getLogger("siamese_eeg")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class ConfigError(SiameseError):
    pass


@dataclasses.dataclass
class RunConfig:
    dataset: list[str] = dataclasses.field(default_factory=list)
    out: str = "out"
    seed: int = 0
    name: str | None = None
    checkpoint: str | None = None
    train: encoder.TrainConfig = encoder.TrainConfig()
    knn_k: int = 5
    folds: int = 5
    synth: data.SynthConfig = data.SynthConfig()
    preprocess: dict = dataclasses.field(default_factory=lambda: {
        "taps": 513, "low": 2.0, "high": 40.0, "target_rate": data.SAMPLING_RATE,
        "cue_offset": 4.0})
    formats: tuple[str, ...] = ("json", "text")


def _section(cls, base, values: dict, where: str):
    if not isinstance(values, dict):
        raise ConfigError(f"config section {where!r} must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown keys in {where!r}: {sorted(unknown)}")
    fixed = {k: tuple(tuple(r) if isinstance(r, list) else r for r in v) if isinstance(v, list) else v
             for k, v in values.items()}
    return dataclasses.replace(base, **fixed)


def build_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    raw: dict = {}
    if getattr(args, "config", None):
        try:
            raw = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
    seed = args.seed if args.seed is not None else raw.get("seed", cfg.seed)

    train_cfg = dataclasses.replace(cfg.train, seed=seed)
    synth_cfg = dataclasses.replace(cfg.synth, seed=seed)
    if "train" in raw:
        train_cfg = _section(encoder.TrainConfig, train_cfg, raw["train"], "train")
    if "synth" in raw:
        synth_cfg = _section(data.SynthConfig, synth_cfg, raw["synth"], "synth")
    if args.seed is not None:
        train_cfg = dataclasses.replace(train_cfg, seed=args.seed)
        synth_cfg = dataclasses.replace(synth_cfg, seed=args.seed)

    final_relu = None
    if getattr(args, "final_relu", None) is not None:
        final_relu = args.final_relu == "on"
    train_cfg = train_cfg.with_overrides(
        iterations=getattr(args, "iterations", None), margin=getattr(args, "margin", None),
        learning_rate=getattr(args, "lr", None), batch_size=getattr(args, "batch", None),
        final_relu=final_relu)
    synth_cfg = dataclasses.replace(synth_cfg, **{
        k: v for k, v in (("noise_sd", getattr(args, "noise_sd", None)),
                          ("trials_per_class", getattr(args, "trials_per_class", None)),
                          ("subject", getattr(args, "subject", None))) if v is not None})

    dataset = raw.get("dataset", [])
    dataset = [dataset] if isinstance(dataset, str) else list(dataset)
    if getattr(args, "dataset", None):
        dataset = list(args.dataset)
    preprocess = dict(cfg.preprocess)
    preprocess.update(raw.get("preprocess", {}))
    for key in ("taps", "cue_offset"):
        if getattr(args, key, None) is not None:
            preprocess[key] = getattr(args, key)

    def pick(key, default):
        v = getattr(args, key, None)
        return v if v is not None else raw.get(key, default)

    return RunConfig(
        dataset=dataset, out=pick("out", cfg.out), seed=seed, name=pick("name", None),
        checkpoint=pick("checkpoint", None), train=train_cfg, knn_k=pick("k", raw.get("knn_k", 5)),
        folds=pick("folds", 5), synth=synth_cfg, preprocess=preprocess,
        formats=tuple(raw.get("formats", cfg.formats)))


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _need_datasets(cfg: RunConfig, single: bool = False) -> list[Path]:
    if not cfg.dataset:
        raise ConfigError("no dataset given (use --dataset or the config 'dataset' key)")
    paths = [Path(p) for p in cfg.dataset]
    for p in paths:
        if not p.is_file():
            raise ConfigError(f"dataset {p} does not exist")
    if single and len(paths) != 1:
        raise ConfigError("this command takes exactly one dataset")
    return paths


def _train_config_dict(cfg: RunConfig) -> dict:
    return {"train": dataclasses.asdict(cfg.train), "knn_k": cfg.knn_k, "folds": cfg.folds,
            "seed": cfg.seed}


# --- subcommands -----------------------------------------------------------

def cmd_synth(cfg: RunConfig) -> int:
    ts = data.synth_generate(cfg.synth)
    path = _out_dir(cfg) / f"{cfg.synth.subject}.isf"
    data.save_trialset(ts, path)
    print(f"wrote {len(ts)} trials to {path}")
    return EXIT_OK


def cmd_validate(cfg: RunConfig) -> int:
    rows = []
    for path in _need_datasets(cfg):
        ts = data.load_trialset(path, warn=False)
        issues = data.validate_trialset(ts)
        counts = np.bincount(ts.labels, minlength=len(data.CLASS_NAMES))
        rows.append((ts.subject, ts.sampling_rate, ",".join(ts.channel_names), len(ts),
                     " ".join(str(c) for c in counts), issues))
    print(f"{'subject':<16}{'rate':>6}  {'channels':<20}{'trials':>7}  per-class")
    for subject, fs, chans, n, counts, issues in rows:
        print(f"{subject:<16}{fs:>6}  {chans:<20}{n:>7}  {counts}")
        for msg in issues:
            print(f"  warning: {msg}")
    return EXIT_OK


def cmd_preprocess(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    p = cfg.preprocess
    for path in _need_datasets(cfg):
        raw = data.load_trialset(path, n_samples=None, warn=False)
        ts = data.preprocess_trialset(raw, taps=int(p["taps"]), low=float(p["low"]),
                                      high=float(p["high"]), target_rate=int(p["target_rate"]),
                                      cue_offset=p["cue_offset"])
        data.validate_trialset(ts)
        target = out / path.name
        data.save_trialset(ts, target)
        print(f"{path} -> {target} ({len(ts)} trials at {ts.sampling_rate} Hz)")
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    (path,) = _need_datasets(cfg, single=True)
    ts = data.load_trialset(path)
    params, history, state = encoder.train(ts.X, ts.labels, cfg.train, return_state=True)
    out = _out_dir(cfg)
    checkpoint.save_checkpoint(out / "model.smne", params, state)
    with open(out / "loss.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "loss"])
        for i, loss in enumerate(history):
            w.writerow([i, repr(float(loss))])
    print(f"trained {cfg.train.iterations} iterations; checkpoint {out / 'model.smne'}")
    return EXIT_OK


def cmd_embed(cfg: RunConfig) -> int:
    (path,) = _need_datasets(cfg, single=True)
    if not cfg.checkpoint:
        raise ConfigError("embed needs --checkpoint")
    ts = data.load_trialset(path)
    params, _ = checkpoint.load_checkpoint(cfg.checkpoint)
    emb = encoder.embed_array(params, ts.X, cfg.train.final_relu)
    out = _out_dir(cfg) / f"{ts.subject}_embeddings.csv"
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trial", "label"] + [f"e{i}" for i in range(emb.shape[1])])
        for i, (e, lab) in enumerate(zip(emb, ts.labels)):
            w.writerow([i, int(lab)] + [repr(float(v)) for v in e])
    print(f"wrote {len(emb)} embeddings to {out}")
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig) -> int:
    classifier = evaluation.SiameseKnnClassifier(cfg.train, cfg.knn_k)
    subjects = []
    for path in _need_datasets(cfg):
        ts = data.load_trialset(path)
        plan = evaluation.kfold_split(ts, cfg.folds, cfg.seed)
        subjects.append(evaluation.run_cv(ts, plan, classifier))
    report = evaluation.EvalReport(cfg.name or "proposed", _train_config_dict(cfg), subjects)
    out = _out_dir(cfg)
    text = evaluation.format_report_text(report)
    if "json" in cfg.formats:
        (out / "report.json").write_text(report.to_json())
    if "text" in cfg.formats:
        (out / "report.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_compare(cfg: RunConfig, report_paths: list[str]) -> int:
    if len(report_paths) < 2:
        raise ConfigError("compare needs at least 2 report files")
    reports = []
    for p in report_paths:
        try:
            reports.append(evaluation.EvalReport.from_dict(json.loads(Path(p).read_text())))
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ConfigError(f"cannot read report {p}: {exc}") from exc
    stat = evaluation.compare_reports(reports)
    text = stat.to_text()
    if cfg.out:
        out = _out_dir(cfg)
        (out / "compare.json").write_text(stat.to_json())
        (out / "compare.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


# --- argument parsing ------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, help="seed for data, folds, initialisation and pairing")
    p.add_argument("--out", help="output directory")


def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--iterations", type=int)
    p.add_argument("--margin", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int, help="pairs per iteration")
    p.add_argument("--final-relu", choices=("on", "off"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="siamese-eeg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic ISF dataset")
    _common(p)
    p.add_argument("--noise-sd", type=float)
    p.add_argument("--trials-per-class", type=int)
    p.add_argument("--subject")

    for name, help_ in (("validate", "check ISF files and print a summary"),
                        ("preprocess", "band-pass, decimate and segment raw ISF recordings")):
        p = sub.add_parser(name, help=help_)
        _common(p)
        p.add_argument("--dataset", nargs="+")
        if name == "preprocess":
            p.add_argument("--taps", type=int)
            p.add_argument("--cue-offset", type=float)

    p = sub.add_parser("train", help="train the encoder on a whole dataset")
    _common(p)
    p.add_argument("--dataset", nargs="+")
    _train_flags(p)

    p = sub.add_parser("embed", help="write embeddings of a dataset")
    _common(p)
    p.add_argument("--dataset", nargs="+")
    p.add_argument("--checkpoint")
    p.add_argument("--final-relu", choices=("on", "off"))

    p = sub.add_parser("evaluate", help="cross-validate per subject")
    _common(p)
    p.add_argument("--dataset", nargs="+")
    p.add_argument("--name", help="method name shown in comparisons")
    p.add_argument("--k", type=int, help="neighbours for k-NN")
    p.add_argument("--folds", type=int)
    _train_flags(p)

    p = sub.add_parser("compare", help="ANOVA and paired t-tests across evaluation reports")
    _common(p)
    p.add_argument("reports", nargs="+")
    return parser


def _setup_logging() -> None:
    level = os.environ.get("SIAMESE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _dispatch(args) -> int:
    try:
        cfg = build_config(args)
        if args.command == "compare":
            # compare only writes files when an output directory is named explicitly
            cfg.out = args.out or ""
            return cmd_compare(cfg, args.reports)
        return {"synth": cmd_synth, "validate": cmd_validate, "preprocess": cmd_preprocess,
                "train": cmd_train, "embed": cmd_embed, "evaluate": cmd_evaluate}[args.command](cfg)
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (SiameseError, OSError, TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    # report every dataset problem, but leave the caller's filters untouched
    with warnings.catch_warnings():
        if not sys.warnoptions:
            warnings.simplefilter("always", data.DatasetWarning)
        return _dispatch(args)


if __name__ == "__main__":
    sys.exit(main())
