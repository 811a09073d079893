"""Stratified k-fold cross-validation, evaluation reports and run comparison."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import encoder, knn
from .data import CLASS_NAMES, TrialSet
from .errors import RejectedInputError
from .metrics import N_CLASSES, average_confusion, confusion_matrix, metrics
from .stats import AnovaResult, bonferroni, one_way_anova, paired_ttest

log = logging.getLogger(__name__)

REPORT_FORMAT = "siamese-eeg-report/1"


@dataclass
class FoldPlan:
    k: int
    folds: list[np.ndarray]
    seed: int

    def test_indices(self, fold: int) -> np.ndarray:
        return self.folds[fold]

    def train_indices(self, fold: int) -> np.ndarray:
        return np.sort(np.concatenate([f for i, f in enumerate(self.folds) if i != fold]))

    @property
    def n_indices(self) -> int:
        return sum(len(f) for f in self.folds)


def kfold_split(labels, k: int = 5, seed: int = 0) -> FoldPlan:
    """Class-stratified partition of trial indices into ``k`` folds.

    Each class is shuffled and dealt round-robin; the starting fold rotates
    from class to class so fold sizes stay balanced.
    """
    if isinstance(labels, TrialSet):
        labels = labels.labels
    labels = np.asarray(labels, dtype=np.int64)
    if k < 2:
        raise RejectedInputError("need at least 2 folds")
    rng = np.random.default_rng(seed)
    buckets: list[list[int]] = [[] for _ in range(k)]
    offset = 0
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        if len(members) < k:
            raise RejectedInputError(f"class {c} has {len(members)} trials, fewer than k={k}")
        members = rng.permutation(members)
        for j, idx in enumerate(members):
            buckets[(offset + j) % k].append(int(idx))
        offset = (offset + len(members)) % k
    return FoldPlan(k, [np.array(sorted(b), dtype=np.int64) for b in buckets], seed)


# classifier(train_X, train_y, test_X, fold) -> (predictions, info dict)
Classifier = Callable[[np.ndarray, np.ndarray, np.ndarray, int], tuple[np.ndarray, dict]]


@dataclass(frozen=True)
class SiameseKnnClassifier:
    """Train the encoder on the training fold, then k-NN over its embeddings."""

    train_config: encoder.TrainConfig = encoder.TrainConfig()
    k: int = knn.DEFAULT_K

    def __call__(self, train_x, train_y, test_x, fold):
        cfg = self.train_config.with_overrides(seed=self.train_config.seed + fold)
        params, history = encoder.train(train_x, train_y, cfg)
        ref = encoder.embed_array(params, train_x, cfg.final_relu)
        query = encoder.embed_array(params, test_x, cfg.final_relu)
        index = knn.EmbeddingIndex(ref, train_y, self.k)
        info = {"initial_loss": float(history[0]) if len(history) else None,
                "final_loss": float(history[-1]) if len(history) else None}
        return knn.knn_predict_batch(index, query), info


@dataclass
class SubjectResult:
    subject: str
    fold_accuracies: list[float]
    fold_confusions: list[list[list[int]]]
    confusion: list[list[int]]
    metrics: dict
    mean_accuracy: float
    sd_accuracy: float
    fold_info: list[dict] = field(default_factory=list)


@dataclass
class EvalReport:
    name: str
    config: dict
    subjects: list[SubjectResult]

    @property
    def subject_means(self) -> list[float]:
        return [s.mean_accuracy for s in self.subjects]

    def fold_units(self) -> list[tuple[str, int]]:
        return [(s.subject, i) for s in self.subjects for i in range(len(s.fold_accuracies))]

    def fold_accuracies(self) -> list[float]:
        return [a for s in self.subjects for a in s.fold_accuracies]

    def summary(self) -> dict:
        means = self.subject_means
        return {
            "mean_accuracy": float(np.mean(means)),
            "sd_accuracy": float(np.std(means, ddof=1)) if len(means) > 1 else 0.0,
            "averaged_confusion": average_confusion(
                [np.array(s.confusion) for s in self.subjects]).tolist(),
        }

    def to_dict(self) -> dict:
        return {"format": REPORT_FORMAT, "name": self.name, "config": self.config,
                "subjects": [asdict(s) for s in self.subjects], "summary": self.summary()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        if d.get("format") != REPORT_FORMAT:
            raise RejectedInputError(f"not an evaluation report (format {d.get('format')!r})")
        return cls(d["name"], d["config"], [SubjectResult(**s) for s in d["subjects"]])


def _sample_sd(values) -> float:
    return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0


def run_cv(trialset: TrialSet, plan: FoldPlan, classifier: Classifier | None = None,
           n_classes: int = N_CLASSES) -> SubjectResult:
    """Cross-validate one subject; folds run in order so results are reproducible."""
    labels = trialset.labels
    if plan.n_indices != len(labels) or (
            len(labels) and np.unique(np.concatenate(plan.folds)).size != len(labels)):
        raise RejectedInputError("fold plan does not partition this trial set")
    classifier = classifier or SiameseKnnClassifier()
    X = trialset.X
    accs, cms, infos = [], [], []
    for f in range(plan.k):
        tr, te = plan.train_indices(f), plan.test_indices(f)
        pred, info = classifier(X[tr], labels[tr], X[te], f)
        cm = confusion_matrix(labels[te], pred, n_classes)
        accs.append(float(np.trace(cm) / cm.sum()))
        cms.append(cm.tolist())
        infos.append(info)
        log.info("%s fold %d/%d accuracy %.4f", trialset.subject, f + 1, plan.k, accs[-1])
    total = np.sum(cms, axis=0)
    return SubjectResult(trialset.subject, accs, cms, total.tolist(), metrics(total).to_dict(),
                         float(np.mean(accs)), _sample_sd(accs), infos)


# --- text rendering --------------------------------------------------------

def _pct(mean: float, sd: float) -> str:
    return f"{100 * mean:.2f} ± {100 * sd:.2f}"


def format_report_text(report: EvalReport) -> str:
    lines = [f"Classification accuracy ({report.name})", "",
             f"{'Subject':<16}Accuracy (%)"]
    for s in report.subjects:
        lines.append(f"{s.subject:<16}{_pct(s.mean_accuracy, s.sd_accuracy)}")
    summ = report.summary()
    lines.append(f"{'Average ± Std.':<16}{_pct(summ['mean_accuracy'], summ['sd_accuracy'])}")

    names = CLASS_NAMES[:len(summ["averaged_confusion"])]
    lines += ["", "Averaged confusion matrix (rows = true, columns = predicted, row-normalized)",
              " " * 10 + "".join(f"{n:>10}" for n in names)]
    for n, row in zip(names, summ["averaged_confusion"]):
        lines.append(f"{n:<10}" + "".join(f"{v:>10.3f}" for v in row))

    lines += ["", "Recall and F1-score per class",
              f"{'Subject':<16}" + "".join(f"{n + ' R':>12}{n + ' F1':>12}" for n in names)]
    recalls, f1s = [], []
    for s in report.subjects:
        r, f = s.metrics["recall"], s.metrics["f1"]
        recalls.append(r)
        f1s.append(f)
        lines.append(f"{s.subject:<16}" + "".join(f"{a:>12.3f}{b:>12.3f}" for a, b in zip(r, f)))
    for label, fn in (("Average", np.mean), ("Std.", lambda x, axis: np.std(x, axis=axis, ddof=1))):
        if label == "Std." and len(recalls) < 2:
            continue
        r, f = fn(np.array(recalls), axis=0), fn(np.array(f1s), axis=0)
        lines.append(f"{label:<16}" + "".join(f"{a:>12.3f}{b:>12.3f}" for a, b in zip(r, f)))
    return "\n".join(lines) + "\n"


# --- comparing runs --------------------------------------------------------

@dataclass
class ComparisonRow:
    method: str
    mean_accuracy: float
    sd_accuracy: float
    t: float | None
    p: float | None
    significant: bool | None


@dataclass
class StatReport:
    anova: AnovaResult
    rows: list[ComparisonRow]
    alpha: float
    adjusted_alpha: float

    def to_dict(self) -> dict:
        return {"anova": asdict(self.anova), "rows": [asdict(r) for r in self.rows],
                "alpha": self.alpha, "adjusted_alpha": self.adjusted_alpha}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        lines = [f"One-way ANOVA: {self.anova}",
                 f"Post-hoc paired t-tests, Bonferroni alpha = {self.alpha} / {len(self.rows) - 1}"
                 f" = {self.adjusted_alpha:.4g}", "",
                 f"{'Method':<28}{'Accuracy (%)':<18}{'t-value':>10}{'p-value':>12}"]
        for r in self.rows:
            acc = _pct(r.mean_accuracy, r.sd_accuracy)
            if r.t is None:
                lines.append(f"{r.method:<28}{acc:<18}{'-':>10}{'-':>12}")
            else:
                p = "<0.001" if r.p < 0.001 else f"{r.p:.3f}"
                mark = " *" if r.significant else ""
                lines.append(f"{r.method:<28}{acc:<18}{r.t:>10.2f}{p:>12}{mark}")
        return "\n".join(lines) + "\n"


def compare_reports(reports: list[EvalReport], alpha: float = 0.05) -> StatReport:
    """ANOVA across runs plus paired t-tests of every run against the first.

    Runs are paired on (subject, fold) units, which must match across reports.
    """
    if len(reports) < 2:
        raise RejectedInputError("comparison needs at least 2 reports")
    units = reports[0].fold_units()
    for r in reports[1:]:
        if r.fold_units() != units:
            raise RejectedInputError(f"report {r.name!r} covers different subjects/folds")
    samples = [np.array(r.fold_accuracies()) for r in reports]
    anova = one_way_anova(samples)
    tests = [paired_ttest(s, samples[0]) for s in samples[1:]]
    flags = bonferroni([t.p for t in tests], alpha)
    rows = [ComparisonRow(reports[0].name, float(samples[0].mean()), _sample_sd(samples[0]),
                          None, None, None)]
    for r, s, t, flag in zip(reports[1:], samples[1:], tests, flags):
        rows.append(ComparisonRow(r.name, float(s.mean()), _sample_sd(s), t.t, t.p, flag))
    return StatReport(anova, rows, alpha, alpha / len(tests))

