"""Incremental-wrapper (stepwise forward) feature selection.

Each step trains a fresh classifier on every candidate subset formed by
appending one unchosen feature, keeps the best scorer, and stops once no
candidate improves the objective by at least ``min_improvement``. Scores
use a record-stratified holdout so one patient's beats never sit on both
sides of the split.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .classifiers import (canonical_class_order, lda_fit, qda_fit, gd_predict,
                          mlp_init, mlp_predict, mlp_train, one_hot)
from .errors import DataError, NumericError
from .evaluation import detection_metrics
from .features import FeatureMatrix, standardize


@dataclass(frozen=True)
class WrapperConfig:
    classifier_kind: str = "lda"          # lda | qda | mlp
    objective: str = "mean_sveb_veb_f"    # or sveb_f | veb_f
    max_features: int | None = None
    min_improvement: float = 0.001
    seed: int = 0
    class_scheme: str = "aami5"
    # Reduced in-loop budget for the MLP; the final subset is retrained
    # at full budget by the caller.
    mlp_max_epochs: int = 30
    mlp_patience: int = 5
    mlp_eta: float = 0.1
    mlp_init_variance: float = 0.2


@dataclass(frozen=True)
class SelectionStep:
    feature: str
    score: float
    sveb_f: float | None
    veb_f: float | None


@dataclass(frozen=True)
class SelectionTrace:
    steps: tuple[SelectionStep, ...]
    final_subset: tuple[str, ...]
    stop_reason: str

    def save(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            fh.write("ecgbeats-trace v1\n")
            fh.write(f"stop_reason {self.stop_reason}\n")
            fh.write("final_subset " + " ".join(self.final_subset) + "\n")
            fh.write("step\tfeature\tscore\tsveb_f\tveb_f\n")
            for i, s in enumerate(self.steps):
                sv = "--" if s.sveb_f is None else f"{s.sveb_f:.17g}"
                vb = "--" if s.veb_f is None else f"{s.veb_f:.17g}"
                fh.write(f"{i}\t{s.feature}\t{s.score:.17g}\t{sv}\t{vb}\n")

    @classmethod
    def load(cls, path) -> "SelectionTrace":
        with open(path, encoding="ascii") as fh:
            lines = fh.read().splitlines()
        if not lines or lines[0] != "ecgbeats-trace v1":
            raise DataError(f"{path}: not a selection trace file")
        stop_reason = lines[1].partition(" ")[2]
        subset = tuple(lines[2].split()[1:])
        steps = []
        for ln in lines[4:]:
            if not ln:
                continue
            _, feat, score, sv, vb = ln.split("\t")
            steps.append(SelectionStep(
                feat, float(score),
                None if sv == "--" else float(sv),
                None if vb == "--" else float(vb)))
        return cls(tuple(steps), subset, stop_reason)


def record_holdout_masks(matrix: FeatureMatrix, fraction: float = 0.25, seed: int = 0):
    """Boolean (train, valid) masks holding out whole records.

    Falls back to a beat-level split when the matrix holds a single
    record, since a record split is then impossible.
    """
    rids = np.asarray(matrix.record_ids)
    unique = sorted(set(matrix.record_ids))
    rng = np.random.default_rng(seed)
    if len(unique) >= 2:
        perm = rng.permutation(len(unique))
        n_hold = max(1, int(round(fraction * len(unique))))
        n_hold = min(n_hold, len(unique) - 1)
        held = {unique[i] for i in perm[:n_hold]}
        valid = np.isin(rids, sorted(held))
    else:
        idx = rng.permutation(len(matrix))
        n_hold = max(1, int(round(fraction * len(matrix))))
        valid = np.zeros(len(matrix), dtype=bool)
        valid[idx[:n_hold]] = True
    return ~valid, valid


def _fit_predict(kind, X_train, y_train, X_valid, config: WrapperConfig):
    if kind == "lda":
        model = lda_fit(X_train, y_train)
        _, pred = gd_predict(model, X_valid)
        return pred
    if kind == "qda":
        model = qda_fit(X_train, y_train)
        _, pred = gd_predict(model, X_valid)
        return pred
    if kind == "mlp":
        Xs, Xv, _, _ = standardize(X_train, X_valid)
        classes = canonical_class_order(y_train)
        net = mlp_init(Xs.shape[1], len(classes), "sum/2", seed=config.seed,
                       init_variance=config.mlp_init_variance,
                       learning_rate=config.mlp_eta, classes=classes)
        trained, _ = mlp_train(net, (Xs, one_hot(y_train, classes)),
                               max_epochs=config.mlp_max_epochs,
                               patience=config.mlp_patience)
        _, pred = mlp_predict(trained, Xv)
        return pred
    raise DataError(f"unknown classifier kind {kind!r}")


def evaluate_subset(matrix: FeatureMatrix, subset, train_mask, valid_mask,
                    config: WrapperConfig = WrapperConfig()):
    """Train on the subset's columns, score on the holdout.

    Returns ``(score, sveb_metrics, veb_metrics)``. Deterministic for a
    fixed config seed. Undefined F-measures score as 0 so the objective
    stays total.
    """
    subset = list(subset)
    if not subset:
        raise DataError("cannot evaluate an empty feature subset")
    labels = matrix.effective_labels(config.class_scheme)
    y = np.asarray(labels)
    y_train = list(y[train_mask])
    if len(set(y_train)) < 2:
        raise DataError("training split is single-class; cannot fit")
    X = matrix.select(subset)
    pred = _fit_predict(config.classifier_kind, X[train_mask], y_train,
                        X[valid_mask], config)
    y_valid = list(y[valid_mask])
    sveb = detection_metrics(y_valid, pred, "SVEB")
    veb = detection_metrics(y_valid, pred, "VEB")
    score = _objective(config.objective, sveb, veb)
    return score, sveb, veb


def _objective(name, sveb, veb):
    sf = sveb.f_measure if sveb.f_measure is not None else 0.0
    vf = veb.f_measure if veb.f_measure is not None else 0.0
    if name == "mean_sveb_veb_f":
        return 0.5 * (sf + vf)
    if name == "sveb_f":
        return sf
    if name == "veb_f":
        return vf
    raise DataError(f"unknown objective {name!r}")


def forward_select(matrix: FeatureMatrix, config: WrapperConfig = WrapperConfig(),
                   validation=0.25) -> SelectionTrace:
    """Greedy forward search over the matrix's feature registry.

    ``validation`` is either a record-holdout fraction or an explicit
    ``(train_mask, valid_mask)`` pair. Ties between candidates break
    toward the earlier registry position, so iteration order is
    irrelevant. Candidates whose training fails numerically (for
    instance a constant column making a covariance singular) are skipped.
    """
    if isinstance(validation, tuple):
        train_mask, valid_mask = validation
    else:
        train_mask, valid_mask = record_holdout_masks(matrix, validation, config.seed)

    labels = matrix.effective_labels(config.class_scheme)
    if len(set(np.asarray(labels)[train_mask])) < 2:
        raise DataError("training split is single-class; selection is meaningless")

    registry = list(matrix.feature_names)
    max_features = config.max_features or len(registry)
    chosen: list[str] = []
    steps: list[SelectionStep] = []
    current_score = -np.inf
    stop_reason = "exhausted all features"

    while len(chosen) < max_features:
        best = None   # (score, registry_index, feature, sveb, veb)
        for idx, feat in enumerate(registry):
            if feat in chosen:
                continue
            try:
                score, sveb, veb = evaluate_subset(
                    matrix, chosen + [feat], train_mask, valid_mask, config)
            except NumericError:
                continue
            if best is None or score > best[0] or (score == best[0] and idx < best[1]):
                best = (score, idx, feat, sveb, veb)
        if best is None:
            stop_reason = "no candidate could be trained"
            break
        score, _, feat, sveb, veb = best
        if chosen and score - current_score < config.min_improvement:
            stop_reason = (f"best improvement {score - current_score:.6g} "
                           f"below {config.min_improvement:g}")
            break
        chosen.append(feat)
        current_score = score
        steps.append(SelectionStep(feat, score, sveb.f_measure, veb.f_measure))
        if len(chosen) >= max_features:
            stop_reason = f"reached max_features = {max_features}"

    return SelectionTrace(tuple(steps), tuple(chosen), stop_reason)
