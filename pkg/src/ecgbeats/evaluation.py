"""Binary detection metrics and comparison reports.

Metrics follow the AAMI binary-consolidation convention: one target class
(SVEB or VEB) against the union of all others, including Q. Undefined
ratios (zero denominators) are reported as an explicit sentinel (None),
never as 0, 100, or NaN, so empty-class test sets cannot inflate scores.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class ConfusionMatrix:
    classes: tuple[str, ...]
    counts: np.ndarray              # (k, k), rows = predicted, cols = true

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class BinaryMetrics:
    tp: int
    fn: int
    fp: int
    tn: int
    se: float | None                # 100 * tp / (tp + fn)
    sp: float | None                # 100 * tn / (tn + fp)
    ppv: float | None               # 100 * tp / (tp + fp)
    fpr: float | None               # 100 * fp / (tn + fp)
    f_measure: float | None         # 2 * se * ppv / (se + ppv)


@dataclass(frozen=True)
class RunAggregate:
    n: int
    mean: dict[str, float | None]
    stderr: dict[str, float | None]   # sample sd / sqrt(n); None when n < 2


def confusion(true_labels, predicted_labels, class_order) -> ConfusionMatrix:
    """k-by-k counts with rows indexed by prediction, columns by truth."""
    true_labels = list(true_labels)
    predicted_labels = list(predicted_labels)
    if len(true_labels) != len(predicted_labels):
        raise DataError("label sequences differ in length")
    classes = tuple(class_order)
    index = {c: i for i, c in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(true_labels, predicted_labels):
        if t not in index or p not in index:
            raise DataError(f"label outside class order: true={t!r} pred={p!r}")
        counts[index[p], index[t]] += 1
    return ConfusionMatrix(classes, counts)


def binary_consolidate(cm: ConfusionMatrix, target: str):
    """(tp, fn, fp, tn) for one class against the union of the others."""
    if target not in cm.classes:
        raise DataError(f"target {target!r} not in class order {cm.classes}")
    k = cm.classes.index(target)
    tp = int(cm.counts[k, k])
    fn = int(cm.counts[:, k].sum()) - tp
    fp = int(cm.counts[k, :].sum()) - tp
    tn = cm.total - tp - fn - fp
    return tp, fn, fp, tn


def compute_metrics(tp: int, fn: int, fp: int, tn: int) -> BinaryMetrics:
    """All five ratios as percentages; zero denominators give None."""
    if min(tp, fn, fp, tn) < 0:
        raise DataError("confusion counts must be non-negative")
    se = 100.0 * tp / (tp + fn) if tp + fn else None
    sp = 100.0 * tn / (tn + fp) if tn + fp else None
    ppv = 100.0 * tp / (tp + fp) if tp + fp else None
    fpr = 100.0 * fp / (tn + fp) if tn + fp else None
    if se is None or ppv is None or se + ppv == 0:
        f = None
    else:
        f = 2.0 * se * ppv / (se + ppv)
    return BinaryMetrics(tp, fn, fp, tn, se, sp, ppv, fpr, f)


def binary_metrics(true_labels, predicted_labels, class_order, target: str) -> BinaryMetrics:
    """Confusion + consolidation + ratios in one step."""
    cm = confusion(true_labels, predicted_labels, class_order)
    return compute_metrics(*binary_consolidate(cm, target))


def detection_metrics(true_labels, predicted_labels, target: str) -> BinaryMetrics:
    """Target-vs-rest metrics where the target may span classes (S1+S2)."""
    from .classifiers import consolidate_to_binary_labels
    t = consolidate_to_binary_labels(list(true_labels), target)
    p = consolidate_to_binary_labels(list(predicted_labels), target)
    if t.size != p.size:
        raise DataError("label sequences differ in length")
    tp = int(np.sum(t & p))
    fn = int(np.sum(t & ~p))
    fp = int(np.sum(~t & p))
    tn = int(np.sum(~t & ~p))
    return compute_metrics(tp, fn, fp, tn)


_METRIC_KEYS = ("se", "sp", "ppv", "fpr", "f_measure")


def aggregate_runs(metrics_list) -> RunAggregate:
    """Mean and standard error of each metric over repeated runs.

    Runs where a metric is undefined are left out of that metric's
    aggregate; a metric undefined in every run stays None.
    """
    metrics_list = list(metrics_list)
    if not metrics_list:
        raise DataError("no runs to aggregate")
    mean, stderr = {}, {}
    for key in _METRIC_KEYS:
        vals = [getattr(m, key) for m in metrics_list if getattr(m, key) is not None]
        if not vals:
            mean[key], stderr[key] = None, None
            continue
        arr = np.asarray(vals, dtype=np.float64)
        mean[key] = float(arr.mean())
        stderr[key] = float(arr.std(ddof=1) / np.sqrt(arr.size)) if arr.size >= 2 else None
    return RunAggregate(len(metrics_list), mean, stderr)


# ---------------------------------------------------------------------------
# Comparison table
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MethodResult:
    """One table row: SVEB and VEB metric triples with optional stderr."""

    method: str
    sveb: dict[str, float | None]          # keys se, ppv, f_measure
    veb: dict[str, float | None]
    sveb_se: dict[str, float | None] | None = None
    veb_se: dict[str, float | None] | None = None
    note: str = ""


# Published binary-detection results used as fixed comparison rows.
# These are quoted from the cited studies, not reproduced by this package.
LITERATURE_BASELINES = (
    MethodResult("Chazal et al 2004",
                 {"se": 75.9, "ppv": 38.5, "f_measure": 51.08},
                 {"se": 77.7, "ppv": 81.9, "f_measure": 79.74},
                 note="weighted LDA on 26 RR/morphology features (IEEE TBME 51)"),
    MethodResult("Chazal et al 2006",
                 {"se": 87.7, "ppv": 47.0, "f_measure": 61.20},
                 {"se": 94.3, "ppv": 96.2, "f_measure": 95.24},
                 note="patient-adapted LDA (IEEE TBME 53)"),
    MethodResult("Alvarado et al 2012",
                 {"se": 86.19, "ppv": 56.68, "f_measure": 68.38},
                 {"se": 92.43, "ppv": 94.82, "f_measure": 93.60},
                 note="integrate-and-fire pulse features at ~115 Hz"),
    MethodResult("Ince et al 2009",
                 {"se": 63.5, "ppv": 53.7, "f_measure": 58.19},
                 {"se": 84.6, "ppv": 87.4, "f_measure": 85.97},
                 note="wavelet+PCA features, particle-swarm ANN"),
    MethodResult("Wiens et al 2010",
                 {"se": 92.0, "ppv": 99.5, "f_measure": 95.60},
                 {"se": 99.6, "ppv": 99.3, "f_measure": 99.44},
                 note="active learning SVM, 67-dim features"),
)


def _cell(value, se) -> str:
    if value is None:
        return "--"
    text = f"{value:.2f}"
    if se is not None:
        text += f" ({se:.2f})"
    return text


def format_table(results) -> str:
    """Render rows of MethodResult as an aligned text table."""
    header = ["Method", "SVEB Se", "SVEB PPV", "SVEB F", "VEB Se", "VEB PPV", "VEB F"]
    rows = [header]
    for r in results:
        sveb_se = r.sveb_se or {}
        veb_se = r.veb_se or {}
        rows.append([r.method] +
                    [_cell(r.sveb.get(k), sveb_se.get(k)) for k in ("se", "ppv", "f_measure")] +
                    [_cell(r.veb.get(k), veb_se.get(k)) for k in ("se", "ppv", "f_measure")])
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    buf = io.StringIO()
    for i, row in enumerate(rows):
        buf.write("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() + "\n")
        if i == 0:
            buf.write("  ".join("-" * w for w in widths) + "\n")
    return buf.getvalue()


def results_to_text(results) -> str:
    """Machine-readable columnar form of the same rows (tab separated)."""
    buf = io.StringIO()
    cols = ("method", "target", "se", "ppv", "f_measure",
            "se_stderr", "ppv_stderr", "f_stderr", "note")
    buf.write("\t".join(cols) + "\n")
    for r in results:
        for target, vals, errs in (("SVEB", r.sveb, r.sveb_se), ("VEB", r.veb, r.veb_se)):
            errs = errs or {}
            row = [r.method, target]
            for k in ("se", "ppv", "f_measure"):
                v = vals.get(k)
                row.append("--" if v is None else f"{v:.17g}")
            for k in ("se", "ppv", "f_measure"):
                e = errs.get(k)
                row.append("--" if e is None else f"{e:.17g}")
            row.append(r.note)
            buf.write("\t".join(row) + "\n")
    return buf.getvalue()


def results_from_text(text: str):
    """Parse ``results_to_text`` output back into MethodResult rows."""
    lines = [ln for ln in text.splitlines() if ln]
    if not lines or not lines[0].startswith("method\t"):
        raise DataError("not a results file")
    by_method: dict[str, dict] = {}
    order = []
    for ln in lines[1:]:
        parts = ln.split("\t")
        method, target = parts[0], parts[1]
        vals = {k: (None if parts[2 + i] == "--" else float(parts[2 + i]))
                for i, k in enumerate(("se", "ppv", "f_measure"))}
        errs = {k: (None if parts[5 + i] == "--" else float(parts[5 + i]))
                for i, k in enumerate(("se", "ppv", "f_measure"))}
        note = parts[8] if len(parts) > 8 else ""
        if method not in by_method:
            by_method[method] = {"note": note}
            order.append(method)
        by_method[method][target] = (vals, errs if any(v is not None for v in errs.values()) else None)
    out = []
    for method in order:
        entry = by_method[method]
        sveb, sveb_se = entry.get("SVEB", ({}, None))
        veb, veb_se = entry.get("VEB", ({}, None))
        out.append(MethodResult(method, sveb, veb, sveb_se, veb_se, entry["note"]))
    return out
