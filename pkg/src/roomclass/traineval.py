"""Training with early stopping, evaluation, cross-validation and the
accuracy-versus-training-hours study.

Every run is driven by explicit seeds so that two runs with the same inputs
produce identical reports.  Wall-clock time is kept out of the report
payload (see :attr:`RunReport.wall_clock`) so serialized reports can be
compared byte for byte.
"""

from __future__ import annotations

import copy
import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from roomclass.acoustics import fdrt
from roomclass.data import (
    Batch,
    BalancedBatcher,
    DatasetConfig,
    SpeechCorpus,
    make_folds,
    make_samples,
    room_labels,
    validation_split,
)
from roomclass.errors import DataError, NumericalError
from roomclass.models import Model, ModelSpec, build_model, fit_nbc, predict_nbc
from roomclass.nn import AdamState, adam_step

__all__ = [
    "TrainConfig",
    "EarlyStopping",
    "TrainResult",
    "experiment_seeds",
    "EvalResult",
    "RunReport",
    "CvReport",
    "train",
    "evaluate",
    "run_experiment",
    "cross_validate",
    "hours_study",
    "budget_updates",
    "fold_seed",
    "fdrt_features",
    "fdrt_baseline",
    "REFERENCE_ACCURACY",
]

# Published accuracies on the licensed corpora, kept only as footnotes in
# reports; they are not expected to be reproduced on synthetic data.
REFERENCE_ACCURACY = {
    "att_crnn/ace/by_array": 0.904,
}


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 50
    patience: int = 10
    validation_fraction: float = 0.15
    min_delta: float = 1e-6
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    val_per_air: int = 2
    test_per_air: int = 2

    def __post_init__(self):
        if not 0 < self.validation_fraction < 1:
            raise DataError("validation_fraction must be in (0, 1)")
        if self.patience < 1:
            raise DataError("patience must be >= 1")
        if self.max_epochs < 1:
            raise DataError("max_epochs must be >= 1")

    def adam(self) -> AdamState:
        return AdamState(lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps)


class EarlyStopping:
    """Tracks the best validation loss and decides when to stop.

    An epoch improves on the best only if its loss is lower by at least
    ``min_delta``.  Training stops once ``patience`` epochs have passed
    without improvement, i.e. at epoch ``best_epoch + patience``.
    """

    def __init__(self, patience: int = 10, min_delta: float = 1e-6):
        self.patience = patience
        self.min_delta = min_delta
        self.best_loss = math.inf
        self.best_epoch = 0
        self.best_state = None

    def update(self, epoch: int, loss: float, state: dict | None = None) -> bool:
        """Record epoch ``epoch``'s validation loss; return True to stop."""
        if loss < self.best_loss - self.min_delta:
            self.best_loss = loss
            self.best_epoch = epoch
            self.best_state = None if state is None else {k: v.copy() for k, v in state.items()}
            return False
        return epoch - self.best_epoch >= self.patience


@dataclass
class TrainResult:
    model: Model
    adam: AdamState
    train_losses: list[float]
    val_losses: list[float]
    best_epoch: int
    best_val_loss: float
    stopped_epoch: int
    updates_per_epoch: int
    batch_size: int
    train_air_ids: set = field(default_factory=set)

    @property
    def hours_per_epoch(self) -> float:
        return self.updates_per_epoch * self.batch_size * 5.0 / 3600.0


def train(model: Model, batches: Callable[[], Batch] | BalancedBatcher, val: Batch, cfg: TrainConfig,
          updates_per_epoch: int | None = None, log: Callable[[str], None] | None = None) -> TrainResult:
    """Minimize batch cross-entropy with Adam, with early stopping on ``val``.

    ``batches`` is a :class:`BalancedBatcher` or any zero-argument callable
    returning a :class:`Batch`.  The model's input normalization (if it has
    one) is fitted on the first training batch before any update.  On return
    the model holds the parameters of the best validation epoch.
    """
    if isinstance(batches, BalancedBatcher):
        updates_per_epoch = updates_per_epoch or batches.updates_per_epoch
        source = batches.next_batch
    else:
        source = batches
    if not updates_per_epoch or updates_per_epoch < 1:
        raise DataError("updates_per_epoch must be >= 1")
    if len(val) == 0:
        raise DataError("empty validation set")
    rng = np.random.default_rng(cfg.seed)
    adam = cfg.adam()
    stopper = EarlyStopping(cfg.patience, cfg.min_delta)
    train_losses, val_losses, seen = [], [], set()
    pending = source()
    if model.normalizer is not None:
        model.fit_normalization(pending.X)
    batch_size = len(pending)
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        total = 0.0
        for b in range(updates_per_epoch):
            batch = pending if pending is not None else source()
            pending = None
            seen.update(p["air_id"] for p in batch.provenance)
            try:
                total += model.loss_and_grad(batch.X, batch.labels, rng)
                adam_step(model.parameters(), model.gradients(), adam)
            except NumericalError as exc:
                raise NumericalError(f"training diverged at epoch {epoch}, batch {b + 1}: {exc}") from exc
        train_losses.append(total / updates_per_epoch)
        v = model.loss(val.X, val.labels)
        if not np.isfinite(v):
            raise NumericalError(f"non-finite validation loss at epoch {epoch}")
        val_losses.append(v)
        if log:
            log(f"epoch {epoch}: train {train_losses[-1]:.4f} val {v:.4f}")
        if stopper.update(epoch, v, model.get_state()):
            break
    if stopper.best_state is not None:
        model.set_state(stopper.best_state)
    return TrainResult(model, adam, train_losses, val_losses, stopper.best_epoch, stopper.best_loss,
                       epoch, updates_per_epoch, batch_size, seen)


@dataclass
class EvalResult:
    accuracy: float
    confusion: np.ndarray
    n: int


def evaluate(model, X, labels, n_classes: int | None = None) -> EvalResult:
    """Accuracy and confusion matrix (rows true room, columns predicted).

    ``model`` may be a network (anything with ``predict_proba``) or an
    array of already-predicted class indices is accepted via ``X`` when
    ``model`` is None.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise DataError("empty test set")
    if model is None:
        pred = np.asarray(X, dtype=np.int64)
    else:
        pred = np.argmax(model.predict_proba(X), axis=1)
    c = n_classes or int(max(labels.max(), pred.max()) + 1)
    confusion = np.zeros((c, c), dtype=np.int64)
    np.add.at(confusion, (labels, pred), 1)
    return EvalResult(float(np.trace(confusion) / labels.size), confusion, int(labels.size))


@dataclass
class RunReport:
    arch: str
    rooms: list[str]
    train_losses: list[float]
    val_losses: list[float]
    best_epoch: int
    best_val_loss: float
    stopped_epoch: int
    updates_per_epoch: int
    batch_size: int
    training_hours_per_epoch: float
    test_accuracy: float
    confusion: list[list[int]]
    n_test: int
    config: dict
    train_air_ids: list[str] = field(default_factory=list)
    test_air_ids: list[str] = field(default_factory=list)
    wall_clock: float = 0.0

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d.pop("wall_clock")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def write(self, out_dir, stem: str = "report") -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{stem}.json").write_text(self.to_json())
        with (out / f"{stem}_confusion.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["true\\pred", *self.rooms])
            for room, row in zip(self.rooms, self.confusion):
                w.writerow([room, *row])
        with (out / f"{stem}_losses.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss"])
            for i, (a, b) in enumerate(zip(self.train_losses, self.val_losses), 1):
                w.writerow([i, repr(a), repr(b)])


def _config_echo(arch, dcfg: DatasetConfig, tcfg: TrainConfig, model_kw: dict) -> dict:
    d = {"arch": arch, "train": dict(tcfg.__dict__), "model": dict(model_kw)}
    dd = dict(dcfg.__dict__)
    dd["stft"] = dict(dcfg.stft.__dict__)
    d["data"] = dd
    return d


def experiment_seeds(seed: int) -> np.ndarray:
    """Seeds of the four streams used by :func:`run_experiment`: validation
    samples, test samples, training batches and model initialization."""
    return np.random.SeedSequence(seed).generate_state(4)


def run_experiment(arch: str, train_records, test_records, corpus: SpeechCorpus, dcfg: DatasetConfig,
                   tcfg: TrainConfig, model_kw: dict | None = None, rooms: list[str] | None = None,
                   updates_per_epoch: int | None = None, log=None) -> tuple[Model, RunReport]:
    """Train ``arch`` on ``train_records`` and test on ``test_records``.

    A stratified validation set is carved out of the training AIRs and
    rendered once with training speakers; the test set is rendered with
    test speakers only.
    """
    started = time.perf_counter()
    model_kw = dict(model_kw or {})
    train_records, test_records = list(train_records), list(test_records)
    if not train_records or not test_records:
        raise DataError("empty training or test set")
    rooms = rooms or room_labels(train_records + test_records)
    fit_recs, val_recs = validation_split(train_records, tcfg.validation_fraction, seed=tcfg.seed)
    seeds = experiment_seeds(tcfg.seed)
    val = make_samples(val_recs, corpus, dcfg, np.random.default_rng(seeds[0]), tcfg.val_per_air, "train", rooms)
    test = make_samples(test_records, corpus, dcfg, np.random.default_rng(seeds[1]), tcfg.test_per_air, "test", rooms)
    batcher = BalancedBatcher(fit_recs, corpus, DatasetConfig(**{**dcfg.__dict__, "seed": int(seeds[2])}), rooms,
                              updates_per_epoch=updates_per_epoch)
    spec = ModelSpec(arch=arch, input_shape=dcfg.input_shape, n_classes=len(rooms), **model_kw)
    model = build_model(spec, seed=int(seeds[3]))
    result = train(model, batcher, val, tcfg, log=log)
    ev = evaluate(model, test.X, test.labels, len(rooms))
    report = RunReport(
        arch=arch,
        rooms=rooms,
        train_losses=result.train_losses,
        val_losses=result.val_losses,
        best_epoch=result.best_epoch,
        best_val_loss=result.best_val_loss,
        stopped_epoch=result.stopped_epoch,
        updates_per_epoch=result.updates_per_epoch,
        batch_size=result.batch_size,
        training_hours_per_epoch=result.hours_per_epoch,
        test_accuracy=ev.accuracy,
        confusion=ev.confusion.tolist(),
        n_test=ev.n,
        config=_config_echo(arch, dcfg, tcfg, model_kw),
        train_air_ids=sorted(result.train_air_ids | {r.air_id for r in val_recs}),
        test_air_ids=sorted({r.air_id for r in test_records}),
    )
    report.wall_clock = time.perf_counter() - started
    return model, report


def fold_seed(seed: int, fold_index: int) -> int:
    return int(np.random.SeedSequence([seed, fold_index]).generate_state(1)[0])


@dataclass
class CvReport:
    arch: str
    scheme: str
    folds: list[dict]
    pooled_accuracy: float | None
    references: dict = field(default_factory=dict)
    wall_clock: float = 0.0

    def to_dict(self) -> dict:
        return {
            "arch": self.arch,
            "scheme": self.scheme,
            "pooled_accuracy": self.pooled_accuracy,
            "folds": self.folds,
            "references": self.references,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def cross_validate(arch: str, manifest, corpus: SpeechCorpus, scheme: str, dcfg: DatasetConfig,
                   tcfg: TrainConfig, model_kw: dict | None = None, log=None,
                   fold_reports: list | None = None) -> CvReport:
    """One fresh training run per fold, tested on the held-out AIRs.

    Training data for a fold is the union of the other folds (for
    ``by_grid_x`` the middle third belongs to no fold and is never used).
    A failing fold is recorded with its error and the run continues.  The
    pooled accuracy weights each successful fold by its test-sample count.
    If ``fold_reports`` is a list, the per-fold :class:`RunReport` objects
    are appended to it.
    """
    started = time.perf_counter()
    manifest = list(manifest)
    plan = make_folds(manifest, scheme)
    rooms = room_labels(manifest)
    by_id = {r.air_id: r for r in manifest}
    folds, correct, total = [], 0, 0
    for i, (name, held) in enumerate(zip(plan.names, plan.folds)):
        others = set().union(*(f for j, f in enumerate(plan.folds) if j != i))
        train_recs = [by_id[a] for a in sorted(others)]
        test_recs = [by_id[a] for a in sorted(held)]
        fcfg = TrainConfig(**{**tcfg.__dict__, "seed": fold_seed(tcfg.seed, i)})
        entry = {"fold": i, "name": name, "n_train_airs": len(train_recs), "n_test_airs": len(test_recs)}
        try:
            _, rep = run_experiment(arch, train_recs, test_recs, corpus, dcfg, fcfg, model_kw, rooms, log=log)
        except (DataError, NumericalError) as exc:
            entry["error"] = f"{type(exc).__name__}: {exc}"
        else:
            entry["report"] = rep.to_dict()
            correct += int(np.trace(np.asarray(rep.confusion)))
            total += rep.n_test
            if fold_reports is not None:
                fold_reports.append(rep)
        folds.append(entry)
    pooled = correct / total if total else None
    refs = {k: v for k, v in REFERENCE_ACCURACY.items() if k.startswith(arch + "/") and k.endswith("/" + scheme)}
    cv = CvReport(arch, scheme, folds, pooled, refs)
    cv.wall_clock = time.perf_counter() - started
    return cv


def budget_updates(hours: float, batch_size: int, utterance_length: float = 5.0) -> int:
    """Updates per epoch that realise an audio budget of ``hours``."""
    if not hours > 0:
        raise DataError("hour budget must be positive")
    samples = int(round(hours * 3600.0 / utterance_length))
    if samples < batch_size:
        raise DataError(f"budget of {hours} h ({samples} samples) is smaller than one batch of {batch_size}")
    return math.ceil(samples / batch_size)


def hours_study(arch: str, train_records, test_records, corpus: SpeechCorpus, hour_grid, dcfg: DatasetConfig,
                tcfg: TrainConfig, model_kw: dict | None = None, seeds=(0,), log=None) -> list[dict]:
    """Accuracy on a fixed test set for each training-audio budget.

    A budget of ``h`` hours sets the epoch length to the number of balanced
    batches that together hold ``h * 3600 / 5`` five-second samples.  The
    returned rows are sorted by budget, then seed.
    """
    train_records, test_records = list(train_records), list(test_records)
    if {r.air_id for r in train_records} & {r.air_id for r in test_records}:
        raise DataError("fixed test set overlaps the training AIRs")
    rooms = room_labels(train_records + test_records)
    fit_recs, _ = validation_split(train_records, tcfg.validation_fraction, seed=tcfg.seed)
    m_b = len({r.block for r in fit_recs}) * dcfg.airs_per_position_per_batch
    plan = [(float(h), budget_updates(float(h), m_b, dcfg.utterance_length)) for h in hour_grid]
    rows = []
    for h, updates in sorted(plan):
        for s in seeds:
            rcfg = TrainConfig(**{**tcfg.__dict__, "seed": int(s)})
            _, rep = run_experiment(arch, train_records, test_records, corpus, dcfg, rcfg, model_kw, rooms,
                                    updates_per_epoch=updates, log=log)
            rows.append({"hours": h, "seed": int(s), "updates_per_epoch": updates, "batch_size": m_b,
                         "accuracy": rep.test_accuracy, "best_epoch": rep.best_epoch})
    return rows


# -- FDRT baselines -----------------------------------------------------------


def fdrt_features(records) -> np.ndarray:
    """Octave-band reverberation times per AIR; bands an AIR cannot support
    are filled with that band's mean over the other AIRs."""
    feats, miss = [], []
    for rec in records:
        t, m = fdrt(rec.air)
        feats.append(t)
        miss.append(m)
    F = np.asarray(feats, dtype=np.float64)
    M = np.asarray(miss, dtype=bool)
    for j in range(F.shape[1]):
        ok = ~M[:, j] & np.isfinite(F[:, j])
        if not ok.any():
            raise DataError(f"FDRT band {j} missing for every AIR")
        F[~ok, j] = F[ok, j].mean()
    return F


def fdrt_baseline(train_records, test_records, kind: str = "nbc", rooms: list[str] | None = None,
                  tcfg: TrainConfig | None = None) -> EvalResult:
    """Room classification from FDRT 'roomprints' with a Gaussian NBC or a
    small feed-forward network."""
    train_records, test_records = list(train_records), list(test_records)
    rooms = rooms or room_labels(train_records + test_records)
    Xtr, Xte = fdrt_features(train_records), fdrt_features(test_records)
    ytr = np.array([rooms.index(r.room_id) for r in train_records])
    yte = np.array([rooms.index(r.room_id) for r in test_records])
    if kind == "nbc":
        return evaluate(None, predict_nbc(fit_nbc(Xtr, ytr), Xte), yte, len(rooms))
    if kind != "ff":
        raise DataError(f"unknown baseline {kind!r}")
    tcfg = tcfg or TrainConfig(max_epochs=200, patience=20, lr=1e-2)
    rng = np.random.default_rng(tcfg.seed)
    order = rng.permutation(len(ytr))
    n_val = max(1, int(round(tcfg.validation_fraction * len(ytr))))
    val_idx, fit_idx = order[:n_val], order[n_val:]
    model = build_model(ModelSpec("ff_baseline", (Xtr.shape[1],), len(rooms)), seed=tcfg.seed)
    batch = Batch(Xtr[fit_idx], ytr[fit_idx], [{"air_id": train_records[i].air_id} for i in fit_idx])
    val = Batch(Xtr[val_idx], ytr[val_idx], [])
    train(model, lambda: batch, val, tcfg, updates_per_epoch=1)
    return evaluate(model, Xte, yte, len(rooms))
