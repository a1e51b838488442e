"""Command-line entry point: ``python -m roomclass <command> [options]``.

Every command reads a YAML config (defaults below, overridden by
``--config`` and then ``--set key.sub=value``), writes its artifacts into
``--out`` together with the fully resolved ``config.yaml``, and keeps
wall-clock timings in a separate ``timing.json`` so reports are
reproducible byte for byte.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from roomclass.acoustics import acoustic_params, read_manifest, write_manifest
from roomclass.errors import DataError, NumericalError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3

COMMANDS = ("synth-dataset", "air-params", "train", "evaluate", "cv", "hours-study", "probe", "attention",
            "gradcheck")

DEFAULTS = {
    "seed": 0,
    "dataset": {
        "manifest": None,
        "test_manifest": None,
        "speech": None,
        "sample_rate": 16000,
        "utterance_length": 5.0,
        "n_u": 1,
        "airs_per_position_per_batch": 2,
    },
    "stft": {"frame_size": 320, "hop": 160, "window": "hanning", "log_floor": 1e-10},
    "features": {"rolloff_fraction": 0.85},
    "model": {
        "arch": "att_crnn",
        "conv_filters": [32, 32, 64],
        "kernel": [3, 3],
        "pool": [2, 2],
        "cnn_dense": 128,
        "td_units": 64,
        "gru_units": 64,
        "head_units": 64,
        "dropout": 0.5,
    },
    "train": {
        "max_epochs": 50,
        "patience": 10,
        "validation_fraction": 0.15,
        "min_delta": 1e-6,
        "lr": 1e-3,
        "beta1": 0.9,
        "beta2": 0.999,
        "eps": 1e-8,
        "val_per_air": 2,
        "test_per_air": 2,
    },
    "checkpoint": None,
    "cv": {"scheme": "by_array"},
    "hours": {"grid": [0.5, 1.0], "seeds": [0]},
    "probe": {"parameter": "drr", "epochs": 200, "batch_size": 16},
    "attention": {"samples_per_air": 1, "random_seeds": [1, 2, 3, 4, 5]},
    "synth": {
        "rooms": 5,
        "arrays": 2,
        "positions": 2,
        "airs_per_position": 5,
        "test_airs_per_position": 2,
        "train_speakers": 8,
        "test_speakers": 4,
        "sentences": 3,
    },
    "gradcheck": {"eps": 1e-5},
}

# keys each command needs before it starts any work
REQUIRED = {
    "synth-dataset": [],
    "air-params": ["dataset.manifest"],
    "train": ["dataset.manifest", "dataset.test_manifest", "dataset.speech"],
    "evaluate": ["checkpoint", "dataset.test_manifest", "dataset.speech"],
    "cv": ["dataset.manifest", "dataset.speech"],
    "hours-study": ["dataset.manifest", "dataset.test_manifest", "dataset.speech"],
    "probe": ["checkpoint", "dataset.manifest", "dataset.speech"],
    "attention": ["checkpoint", "dataset.test_manifest", "dataset.speech"],
    "gradcheck": [],
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="roomclass", description="Room classification from reverberant speech.")
    p.add_argument("command", choices=COMMANDS, metavar="command", help=", ".join(COMMANDS))
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", default="out", help="output directory (default: out)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry, e.g. --set train.max_epochs=5")
    return p


def _merge(base: dict, extra: dict, prefix: str = "") -> None:
    for k, v in extra.items():
        if k not in base:
            raise UsageError(f"unknown config key {prefix}{k}")
        if isinstance(base[k], dict) and isinstance(v, dict):
            _merge(base[k], v, f"{prefix}{k}.")
        else:
            base[k] = v


def resolve_config(config_path=None, overrides=(), seed=None) -> dict:
    """Defaults, then the config file, then ``--set`` overrides, then ``--seed``."""
    cfg = copy.deepcopy(DEFAULTS)
    if config_path:
        try:
            loaded = yaml.safe_load(Path(config_path).read_text()) or {}
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from exc
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a mapping")
        _merge(cfg, loaded)
    for item in overrides:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        node = {}
        cur = node
        parts = key.strip().split(".")
        for p in parts[:-1]:
            cur[p] = {}
            cur = cur[p]
        cur[parts[-1]] = yaml.safe_load(raw)
        _merge(cfg, node)
    if seed is not None:
        cfg["seed"] = seed
    return cfg


def _get(cfg: dict, dotted: str):
    cur = cfg
    for p in dotted.split("."):
        cur = cur[p]
    return cur


def _dataset_config(cfg):
    from roomclass.data import DatasetConfig
    from roomclass.dsp import StftConfig

    d = cfg["dataset"]
    return DatasetConfig(
        n_u=d["n_u"],
        utterance_length=d["utterance_length"],
        sample_rate=d["sample_rate"],
        stft=StftConfig(**cfg["stft"]),
        airs_per_position_per_batch=d["airs_per_position_per_batch"],
        seed=cfg["seed"],
    )


def _train_config(cfg):
    from roomclass.traineval import TrainConfig

    return TrainConfig(**cfg["train"], seed=cfg["seed"])


def _model_kw(cfg) -> dict:
    return {k: (tuple(v) if isinstance(v, list) else v) for k, v in cfg["model"].items() if k != "arch"}


def _corpus(cfg):
    from roomclass.data import SpeechCorpus

    return SpeechCorpus.from_directory(cfg["dataset"]["speech"], cfg["dataset"]["sample_rate"])


def _manifest(cfg, key):
    return read_manifest(cfg["dataset"][key], expected_rate=cfg["dataset"]["sample_rate"])


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


# -- commands -------------------------------------------------------------------


def cmd_synth_dataset(cfg, out: Path) -> dict:
    from roomclass.data import synth_manifest, synth_speech_corpus

    s, fs, seed = cfg["synth"], cfg["dataset"]["sample_rate"], cfg["seed"]
    corpus = synth_speech_corpus(s["train_speakers"], s["test_speakers"], s["sentences"], fs, seed=seed)
    corpus.to_directory(out / "speech")
    train = synth_manifest(s["rooms"], s["arrays"], s["positions"], s["airs_per_position"], fs, seed=seed)
    test = synth_manifest(s["rooms"], s["arrays"], s["positions"], s["test_airs_per_position"], fs, seed=seed + 1)
    test = [dataclasses.replace(r, air_id="test_" + r.air_id) for r in test]
    write_manifest(out / "manifest.csv", train, air_dir="airs")
    write_manifest(out / "test_manifest.csv", test, air_dir="test_airs")
    return {"train_airs": len(train), "test_airs": len(test), "speakers": len(corpus.speakers)}


def cmd_air_params(cfg, out: Path) -> dict:
    records = _manifest(cfg, "manifest")
    rows = []
    for rec in records:
        p = acoustic_params(rec.air)
        row = {"air_id": rec.air_id, "room_id": rec.room_id, "array_id": rec.array_id,
               "position_id": rec.position_id, "t30": p.t30, "t60": p.t60, "drr": p.drr}
        for (lo, hi), t, miss in zip(p.band_edges, p.fdrt, p.fdrt_missing):
            row[f"fdrt_{np.sqrt(lo * hi):.0f}hz"] = None if miss else float(t)
        rows.append(row)
    with (out / "air_params.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else (repr(v) if isinstance(v, float) else v)) for k, v in r.items()})
    _write_json(out / "air_params.json", rows)
    return {"airs": len(rows)}


def cmd_train(cfg, out: Path) -> dict:
    from roomclass.models import save_checkpoint
    from roomclass.traineval import run_experiment

    model, report = run_experiment(cfg["model"]["arch"], _manifest(cfg, "manifest"), _manifest(cfg, "test_manifest"),
                                   _corpus(cfg), _dataset_config(cfg), _train_config(cfg), _model_kw(cfg),
                                   log=lambda s: print(s, flush=True))
    report.write(out, "report")
    save_checkpoint(out / "checkpoint.npz", model, seed=cfg["seed"],
                    history={"train_losses": report.train_losses, "val_losses": report.val_losses,
                             "best_epoch": report.best_epoch, "rooms": report.rooms})
    return {"test_accuracy": report.test_accuracy, "best_epoch": report.best_epoch,
            "wall_clock": report.wall_clock}


def _load_model(cfg):
    from roomclass.models import load_checkpoint

    model, extra = load_checkpoint(cfg["checkpoint"])
    rooms = extra["history"].get("rooms")
    return model, rooms


def _test_set(cfg, key, rooms, per_air):
    from roomclass.data import make_samples
    from roomclass.traineval import experiment_seeds

    records = _manifest(cfg, key)
    missing = {r.room_id for r in records} - set(rooms)
    if missing:
        raise DataError(f"rooms {sorted(missing)} were not seen in training")
    return records, make_samples(records, _corpus(cfg), _dataset_config(cfg),
                                 np.random.default_rng(experiment_seeds(cfg["seed"])[1]), per_air, "test", rooms)


def cmd_evaluate(cfg, out: Path) -> dict:
    from roomclass.traineval import evaluate

    model, rooms = _load_model(cfg)
    if not rooms:
        raise DataError("checkpoint does not record its room labels")
    _, test = _test_set(cfg, "test_manifest", rooms, cfg["train"]["test_per_air"])
    ev = evaluate(model, test.X, test.labels, len(rooms))
    _write_json(out / "evaluation.json", {"accuracy": ev.accuracy, "n": ev.n, "rooms": rooms,
                                          "confusion": ev.confusion.tolist()})
    with (out / "confusion.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["true\\pred", *rooms])
        for room, row in zip(rooms, ev.confusion.tolist()):
            w.writerow([room, *row])
    return {"accuracy": ev.accuracy}


def cmd_cv(cfg, out: Path) -> dict:
    from roomclass.traineval import cross_validate

    reports = []
    cv = cross_validate(cfg["model"]["arch"], _manifest(cfg, "manifest"), _corpus(cfg), cfg["cv"]["scheme"],
                        _dataset_config(cfg), _train_config(cfg), _model_kw(cfg),
                        log=lambda s: print(s, flush=True), fold_reports=reports)
    (out / "cv_report.json").write_text(cv.to_json() + "\n")
    for rep, fold in zip(reports, [f for f in cv.folds if "report" in f]):
        rep.write(out / "folds", f"fold{fold['fold']:02d}")
    with (out / "cv_folds.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["fold", "name", "accuracy", "n_test", "error"])
        for f in cv.folds:
            rep = f.get("report")
            w.writerow([f["fold"], f["name"], repr(rep["test_accuracy"]) if rep else "",
                        rep["n_test"] if rep else "", f.get("error", "")])
    return {"pooled_accuracy": cv.pooled_accuracy, "wall_clock": cv.wall_clock}


def cmd_hours_study(cfg, out: Path) -> dict:
    from roomclass.traineval import hours_study

    rows = hours_study(cfg["model"]["arch"], _manifest(cfg, "manifest"), _manifest(cfg, "test_manifest"),
                       _corpus(cfg), cfg["hours"]["grid"], _dataset_config(cfg), _train_config(cfg),
                       _model_kw(cfg), seeds=cfg["hours"]["seeds"], log=lambda s: print(s, flush=True))
    _write_json(out / "hours_study.json", rows)
    with (out / "hours_study.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    return {"runs": len(rows)}


def cmd_probe(cfg, out: Path) -> dict:
    from roomclass.analysis import linear_probe
    from roomclass.models import build_model

    model, _ = _load_model(cfg)
    p = cfg["probe"]
    airs, corpus, dcfg = _manifest(cfg, "manifest"), _corpus(cfg), _dataset_config(cfg)
    rand = build_model(model.spec, seed=cfg["seed"] + 1)
    rand.normalizer.mean, rand.normalizer.std = model.normalizer.mean, model.normalizer.std
    result = {}
    for name, m in (("trained", model), ("random_init", rand)):
        result[name] = linear_probe(m, airs, corpus, p["parameter"], dcfg, seed=cfg["seed"],
                                    epochs=p["epochs"], batch_size=p["batch_size"]).to_dict()
    _write_json(out / "probe.json", result)
    return {k: v["ccc"] for k, v in result.items()}


def cmd_attention(cfg, out: Path) -> dict:
    from roomclass.analysis import attention_correlation

    model, rooms = _load_model(cfg)
    _, samples = _test_set(cfg, "test_manifest", rooms or sorted({r.room_id for r in _manifest(cfg, "test_manifest")}),
                           cfg["attention"]["samples_per_air"])
    dcfg = _dataset_config(cfg)
    freqs = dcfg.stft.bin_frequencies(dcfg.sample_rate)
    report = attention_correlation(model, samples.X, freqs, cfg["attention"]["random_seeds"],
                                   rolloff_fraction=cfg["features"]["rolloff_fraction"])
    (out / "attention.json").write_text(report.to_json() + "\n")
    report.write_rows(out / "attention_rows.csv")
    return {"trained": report.trained["pooled"], "random_init": report.random_init.get("pooled")}


def cmd_gradcheck(cfg, out: Path) -> dict:
    from roomclass.checks import gradcheck_suite

    rows = gradcheck_suite(seed=cfg["seed"], eps=cfg["gradcheck"]["eps"])
    for r in rows:
        status = "ok" if r["error"] < r["threshold"] else "FAIL"
        print(f"{r['name']:<32} {r['error']:.3e}  (< {r['threshold']:g})  {status}")
    _write_json(out / "gradcheck.json", rows)
    bad = [r["name"] for r in rows if not r["error"] < r["threshold"]]
    if bad:
        raise NumericalError(f"gradient check failed for {', '.join(bad)}")
    return {"checks": len(rows)}


HANDLERS = {
    "synth-dataset": cmd_synth_dataset,
    "air-params": cmd_air_params,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "cv": cmd_cv,
    "hours-study": cmd_hours_study,
    "probe": cmd_probe,
    "attention": cmd_attention,
    "gradcheck": cmd_gradcheck,
}


def run(argv=None) -> int:
    """Parse ``argv``, run one command and return its exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = resolve_config(args.config, args.set, args.seed)
        missing = [k for k in REQUIRED[args.command] if _get(cfg, k) in (None, "")]
        if missing:
            raise UsageError(f"{args.command} needs config keys: {', '.join(missing)}")
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(parser.format_usage(), file=sys.stderr, end="")
        return EXIT_USAGE
    out = Path(args.out)
    resolved = yaml.safe_dump(cfg, sort_keys=True)
    print(resolved, end="")
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.yaml").write_text(resolved)
        started = time.perf_counter()
        summary = HANDLERS[args.command](cfg, out)
        _write_json(out / "timing.json", {"command": args.command, "seconds": time.perf_counter() - started})
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataError, OSError, ValueError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    print(json.dumps({k: v for k, v in summary.items() if k != "wall_clock"}, sort_keys=True))
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
