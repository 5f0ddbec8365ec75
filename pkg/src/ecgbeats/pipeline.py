"""End-to-end orchestration: ingest -> preprocess -> extract -> select ->
train -> evaluate, with content-digest caching and a one-command
reproduction of the comparison table.

Every stage artifact is keyed by a digest of its inputs plus the config
fields it actually depends on, so a seed change invalidates only
seed-dependent stages. Artifacts are plain text and written atomically
(temp then rename); reruns with an unchanged config are byte-identical.
"""

from __future__ import annotations

import hashlib
import os
import shutil
import tempfile
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import __version__
from .classifiers import (EnsembleModel, canonical_class_order, ensemble_train,
                          gd_predict, lda_fit, mlp_init, mlp_predict, mlp_train,
                          moe_fit, moe_predict, one_hot, predict, qda_fit)
from .errors import DataError
from .evaluation import (LITERATURE_BASELINES, MethodResult, aggregate_runs,
                         detection_metrics, format_table, results_to_text)
from .features import (FeatureMatrix, SUBSET_11, SUBSET_4, assign_sveb_subclasses,
                       extract_features, standardize)
from .mitdb import map_to_aami, read_record, split_dataset
from .preprocess import preprocess_record
from .selection import (SelectionTrace, WrapperConfig, forward_select,
                        record_holdout_masks)


@dataclass(frozen=True)
class PipelineConfig:
    """All knobs with defaults set to the reproduction configuration."""

    data_dir: str = "data/mitdb"
    cache_dir: str = "cache"
    seed: int = 0
    paper_subsets: bool = False
    quick: bool = False
    class_scheme: str = "aami5"
    holdout_fraction: float = 0.25
    # wrapper
    wrapper_min_improvement: float = 0.001
    wrapper_max_features: int = 0          # 0 = no cap
    # MLP training
    mlp_max_epochs: int = 200
    mlp_patience: int = 10
    ensemble_size: int = 20
    grid_etas: tuple[float, ...] = (0.1, 0.2, 0.3)
    grid_variances: tuple[float, ...] = (0.1, 0.2, 0.3)
    grid_hidden: tuple[str, ...] = ("sum/2", "sum/3")

    def resolved(self) -> "PipelineConfig":
        if not self.quick:
            return self
        return replace(self, mlp_max_epochs=30, mlp_patience=5,
                       grid_etas=(0.1,), grid_variances=(0.2,),
                       grid_hidden=("sum/2",), wrapper_max_features=4)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        values = {}
        with open(path, encoding="ascii") as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise DataError(f"{path}:{lineno}: expected 'key = value'")
                key, _, val = line.partition("=")
                values[key.strip()] = val.strip()
        kwargs = {}
        for f in fields(cls):
            if f.name not in values:
                continue
            raw = values.pop(f.name)
            if f.type in ("int", int):
                kwargs[f.name] = int(raw)
            elif f.type in ("float", float):
                kwargs[f.name] = float(raw)
            elif f.type in ("bool", bool):
                kwargs[f.name] = raw.lower() in ("1", "true", "yes")
            elif f.type.startswith("tuple[float"):
                kwargs[f.name] = tuple(float(x) for x in raw.split(",") if x)
            elif f.type.startswith("tuple[str"):
                kwargs[f.name] = tuple(x.strip() for x in raw.split(",") if x.strip())
            else:
                kwargs[f.name] = raw
        if values:
            raise DataError(f"{path}: unknown config keys {sorted(values)}")
        return cls(**kwargs)


# ---------------------------------------------------------------------------
# Cache
# ---------------------------------------------------------------------------

def _canonical(obj) -> str:
    if isinstance(obj, dict):
        inner = ",".join(f"{k}:{_canonical(v)}" for k, v in sorted(obj.items()))
        return "{" + inner + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(_canonical(v) for v in obj) + "]"
    if isinstance(obj, float):
        return f"{obj:.17g}"
    return repr(obj)


def digest_of(obj) -> str:
    return hashlib.sha256(_canonical(obj).encode()).hexdigest()[:24]


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:24]


class Cache:
    """Digest-addressed artifact store with atomic writes."""

    def __init__(self, root):
        self.root = str(root)

    def get_or_build(self, stage: str, key, ext: str, builder):
        """Return the artifact path for ``key``, building it if absent.

        ``builder(tmp_path)`` must write the artifact at ``tmp_path``;
        the temp file (or directory) is renamed into place afterwards.
        """
        digest = digest_of(key)
        stage_dir = os.path.join(self.root, stage)
        os.makedirs(stage_dir, exist_ok=True)
        final = os.path.join(stage_dir, f"{digest}{ext}")
        if os.path.exists(final):
            return final
        tmp = tempfile.mktemp(prefix=f".{digest}-", dir=stage_dir)
        builder(tmp)
        if not os.path.exists(tmp):
            raise DataError(f"stage {stage} builder produced nothing")
        os.replace(tmp, final)
        with open(final + ".manifest", "w", encoding="ascii") as fh:
            fh.write(f"stage = {stage}\ndigest = {digest}\n")
            fh.write(f"version = ecgbeats {__version__}\n")
            fh.write(f"key = {_canonical(key)}\n")
        return final


# ---------------------------------------------------------------------------
# Stage: preprocess
# ---------------------------------------------------------------------------

def write_preprocessed(dirname, record_id, signal_mv, annotations) -> None:
    """Spec'd columnar artifacts: signal file plus annotation sidecar."""
    os.makedirs(dirname, exist_ok=True)
    with open(os.path.join(dirname, f"{record_id}.signal.tsv"), "w",
              encoding="ascii") as fh:
        fh.write("sample_index\tmillivolts\n")
        for i, v in enumerate(signal_mv):
            fh.write(f"{i}\t{v:.17g}\n")
    with open(os.path.join(dirname, f"{record_id}.annotations.tsv"), "w",
              encoding="ascii") as fh:
        fh.write("sample_index\tmit_code\taami_class\n")
        for ev in annotations:
            aami = map_to_aami(ev.mit_code) or "-"
            fh.write(f"{ev.sample_index}\t{ev.mit_code}\t{aami}\n")


def read_preprocessed(dirname, record_id):
    from .mitdb import AnnotationEvent, ANNOTATION_CODES
    sig_path = os.path.join(dirname, f"{record_id}.signal.tsv")
    ann_path = os.path.join(dirname, f"{record_id}.annotations.tsv")
    with open(sig_path, encoding="ascii") as fh:
        next(fh)
        signal = np.asarray([float(ln.split("\t")[1]) for ln in fh])
    anns = []
    with open(ann_path, encoding="ascii") as fh:
        next(fh)
        for ln in fh:
            idx, code, _ = ln.rstrip("\n").split("\t")
            code = int(code)
            symbol, _, is_beat = ANNOTATION_CODES[code]
            anns.append(AnnotationEvent(int(idx), code, symbol, is_beat))
    return signal, tuple(anns)


def _record_input_digests(config, record_id):
    out = {}
    for ext in (".hea", ".dat", ".atr"):
        path = os.path.join(config.data_dir, record_id + ext)
        if not os.path.exists(path):
            raise DataError(f"missing data file {path}; populate --data-dir first")
        out[ext] = file_digest(path)
    return out


def stage_preprocess(config: PipelineConfig, cache: Cache, record_id: str) -> str:
    key = {"stage": "preprocess", "record": record_id,
           "inputs": _record_input_digests(config, record_id)}

    def build(tmp):
        record = read_record(config.data_dir, record_id)
        signal, anns = preprocess_record(record)
        write_preprocessed(tmp, record_id, signal, anns)

    return cache.get_or_build("preprocess", key, ".d", build)


# ---------------------------------------------------------------------------
# Stage: extract
# ---------------------------------------------------------------------------

def _split_records(config: PipelineConfig, split: str):
    ids = sorted(r for r in os.listdir(config.data_dir) if r.endswith(".hea")) \
        if os.path.isdir(config.data_dir) else []
    ids = [r[:-4] for r in ids]
    if not ids:
        raise DataError(f"no records found under {config.data_dir}")
    ds = split_dataset(ids)
    records = ds.ds1 if split == "ds1" else ds.ds2 if split == "ds2" else None
    if records is None:
        raise DataError(f"unknown split {split!r} (expected ds1 or ds2)")
    if not records:
        raise DataError(f"no {split} records present under {config.data_dir}")
    if config.quick:
        records = records[:3]
    return records


def stage_extract(config: PipelineConfig, cache: Cache, split: str) -> str:
    records = _split_records(config, split)
    labels_available = split == "ds1"
    pre_paths = {rid: stage_preprocess(config, cache, rid) for rid in records}
    key = {"stage": "extract", "split": split, "labels": labels_available,
           "seed": config.seed,
           "inputs": {rid: os.path.basename(p) for rid, p in pre_paths.items()}}

    def build(tmp):
        mats = []
        for rid in records:
            signal, anns = read_preprocessed(pre_paths[rid], rid)
            mats.append(extract_features(signal, anns, rid,
                                         labels_available=labels_available))
        matrix = FeatureMatrix.concatenate(mats)
        assign_sveb_subclasses(matrix, seed=config.seed)
        matrix.save(tmp)

    return cache.get_or_build("extract", key, ".tsv", build)


# ---------------------------------------------------------------------------
# Stage: select
# ---------------------------------------------------------------------------

def _wrapper_config(config: PipelineConfig, kind: str) -> WrapperConfig:
    return WrapperConfig(
        classifier_kind=kind,
        max_features=config.wrapper_max_features or None,
        min_improvement=config.wrapper_min_improvement,
        seed=config.seed,
        class_scheme=config.class_scheme,
        mlp_max_epochs=min(30, config.mlp_max_epochs),
    )


def stage_select(config: PipelineConfig, cache: Cache, kind: str) -> str:
    extract_path = stage_extract(config, cache, "ds1")
    key = {"stage": "select", "kind": kind, "seed": config.seed,
           "min_improvement": config.wrapper_min_improvement,
           "max_features": config.wrapper_max_features,
           "holdout": config.holdout_fraction,
           "scheme": config.class_scheme,
           "input": os.path.basename(extract_path)}

    def build(tmp):
        matrix = FeatureMatrix.load(extract_path)
        trace = forward_select(matrix, _wrapper_config(config, kind),
                               validation=config.holdout_fraction)
        trace.save(tmp)

    return cache.get_or_build("select", key, ".trace", build)


# ---------------------------------------------------------------------------
# Stage: train
# ---------------------------------------------------------------------------

def _grid_search_mlp(config, matrix, subset, train_mask, valid_mask):
    """Pick (hidden_rule, eta, init_variance) by the holdout objective."""
    labels = matrix.effective_labels(config.class_scheme)
    y = np.asarray(labels)
    classes = canonical_class_order(y[train_mask])
    X = matrix.select(subset)
    Xs, Xv, _, _ = standardize(X[train_mask], X[valid_mask])
    Yt = one_hot(list(y[train_mask]), classes)
    best = None
    for hidden in config.grid_hidden:
        for eta in config.grid_etas:
            for iv in config.grid_variances:
                net = mlp_init(Xs.shape[1], len(classes), hidden,
                               seed=config.seed, init_variance=iv,
                               learning_rate=eta, classes=classes)
                trained, _ = mlp_train(net, (Xs, Yt), None, eta,
                                       max_epochs=min(40, config.mlp_max_epochs),
                                       patience=config.mlp_patience)
                _, pred = mlp_predict(trained, Xv)
                sveb = detection_metrics(list(y[valid_mask]), pred, "SVEB")
                veb = detection_metrics(list(y[valid_mask]), pred, "VEB")
                score = 0.5 * ((sveb.f_measure or 0.0) + (veb.f_measure or 0.0))
                cell = (score, hidden, eta, iv)
                if best is None or score > best[0]:
                    best = cell
    return best[1], best[2], best[3]


def train_model(config: PipelineConfig, matrix: FeatureMatrix, kind: str, subset):
    """Train one model kind on a feature matrix (DS1 by convention)."""
    subset = tuple(subset)
    labels = matrix.effective_labels(config.class_scheme)
    y = np.asarray(labels)
    X = matrix.select(subset)

    if kind == "lda":
        return lda_fit(X, list(y), feature_names=subset)
    if kind == "qda":
        return qda_fit(X, list(y), feature_names=subset)
    if kind == "moe":
        return moe_fit(X, list(y), feature_names=subset)

    train_mask, valid_mask = record_holdout_masks(matrix, config.holdout_fraction,
                                                  config.seed)
    if kind in ("mlp", "ensemble"):
        hidden, eta, iv = _grid_search_mlp(config, matrix, subset,
                                           train_mask, valid_mask)
        classes = canonical_class_order(y[train_mask])
        Xs, Xv, mean, sd = standardize(X[train_mask], X[valid_mask])
        Yt = one_hot(list(y[train_mask]), classes)
        Yv = one_hot(list(y[valid_mask]), classes)
        if kind == "mlp":
            net = mlp_init(Xs.shape[1], len(classes), hidden, seed=config.seed,
                           init_variance=iv, learning_rate=eta, classes=classes,
                           feature_names=subset)
            trained, _ = mlp_train(net, (Xs, Yt), (Xv, Yv), eta,
                                   config.mlp_max_epochs, config.mlp_patience)
            return _Standardized(trained, mean, sd)
        seeds = [config.seed + 1000 * i for i in range(config.ensemble_size)]
        ensemble = ensemble_train((Xs, Yt), (Xv, Yv), classes, seeds, hidden,
                                  iv, eta, config.mlp_max_epochs,
                                  config.mlp_patience, feature_names=subset)
        return _Standardized(ensemble, mean, sd)
    raise DataError(f"unknown model kind {kind!r}")


@dataclass(frozen=True)
class _Standardized:
    """An MLP-family model bundled with its input standardization."""

    model: object
    mean: np.ndarray
    sd: np.ndarray

    @property
    def classes(self):
        return self.model.classes

    @property
    def feature_names(self):
        return self.model.feature_names

    def transform(self, X):
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.sd


def model_predict(model, X):
    if isinstance(model, _Standardized):
        return predict(model.model, model.transform(X))
    return predict(model, X)


def save_any_model(model, path):
    from .classifiers import save_model
    if isinstance(model, _Standardized):
        with open(path, "w", encoding="ascii") as fh:
            fh.write("ecgbeats-standardized v1\n")
            fh.write(" ".join(f"{v:.17g}" for v in model.mean) + "\n")
            fh.write(" ".join(f"{v:.17g}" for v in model.sd) + "\n")
        tmp = path + ".inner"
        save_model(model.model, tmp)
        with open(tmp, encoding="ascii") as fh, open(path, "a", encoding="ascii") as out:
            out.write(fh.read())
        os.remove(tmp)
    else:
        save_model(model, path)


def load_any_model(path):
    from .classifiers import load_model
    with open(path, encoding="ascii") as fh:
        first = fh.readline().rstrip("\n")
        if first != "ecgbeats-standardized v1":
            return load_model(path)
        mean = np.asarray([float(v) for v in fh.readline().split()])
        sd = np.asarray([float(v) for v in fh.readline().split()])
        rest = fh.read()
    tmp = path + ".inner"
    with open(tmp, "w", encoding="ascii") as fh:
        fh.write(rest)
    try:
        inner = load_model(tmp)
    finally:
        os.remove(tmp)
    return _Standardized(inner, mean, sd)


def stage_train(config: PipelineConfig, cache: Cache, kind: str, subset) -> str:
    extract_path = stage_extract(config, cache, "ds1")
    key = {"stage": "train", "kind": kind, "subset": tuple(subset),
           "seed": config.seed, "scheme": config.class_scheme,
           "epochs": config.mlp_max_epochs, "patience": config.mlp_patience,
           "ensemble": config.ensemble_size,
           "grid": (config.grid_hidden, config.grid_etas, config.grid_variances),
           "holdout": config.holdout_fraction,
           "input": os.path.basename(extract_path)}

    def build(tmp):
        matrix = FeatureMatrix.load(extract_path)
        model = train_model(config, matrix, kind, subset)
        save_any_model(model, tmp)

    return cache.get_or_build("train", key, ".model", build)


# ---------------------------------------------------------------------------
# Stage: evaluate / reproduce
# ---------------------------------------------------------------------------

def evaluate_model(config: PipelineConfig, model, matrix: FeatureMatrix):
    """SVEB/VEB metrics on a matrix; ensembles add per-member aggregates."""
    y_true = matrix.effective_labels(config.class_scheme)
    X = matrix.select(model.feature_names)
    _, pred = model_predict(model, X)
    result = {
        "sveb": detection_metrics(y_true, pred, "SVEB"),
        "veb": detection_metrics(y_true, pred, "VEB"),
    }
    inner = model.model if isinstance(model, _Standardized) else model
    if isinstance(inner, EnsembleModel):
        Xt = model.transform(X) if isinstance(model, _Standardized) else X
        member_metrics = {"sveb": [], "veb": []}
        for member in inner.members:
            _, mp = mlp_predict(member, Xt)
            member_metrics["sveb"].append(detection_metrics(y_true, mp, "SVEB"))
            member_metrics["veb"].append(detection_metrics(y_true, mp, "VEB"))
        result["sveb_runs"] = aggregate_runs(member_metrics["sveb"])
        result["veb_runs"] = aggregate_runs(member_metrics["veb"])
    return result


def _method_result(name, evaluation, note="") -> MethodResult:
    if "sveb_runs" in evaluation:
        sv, vb = evaluation["sveb_runs"], evaluation["veb_runs"]
        pick = lambda agg, k: agg.mean.get(k)
        pick_se = lambda agg, k: agg.stderr.get(k)
        return MethodResult(
            name,
            {k: pick(sv, k) for k in ("se", "ppv", "f_measure")},
            {k: pick(vb, k) for k in ("se", "ppv", "f_measure")},
            {k: pick_se(sv, k) for k in ("se", "ppv", "f_measure")},
            {k: pick_se(vb, k) for k in ("se", "ppv", "f_measure")},
            note=note)
    sv, vb = evaluation["sveb"], evaluation["veb"]
    as_dict = lambda m: {"se": m.se, "ppv": m.ppv, "f_measure": m.f_measure}
    return MethodResult(name, as_dict(sv), as_dict(vb), note=note)


def reproduce(config: PipelineConfig, out_path: str | None = None):
    """Train on DS1, evaluate on DS2, and emit the comparison table.

    With ``paper_subsets`` the 11- and 4-feature subsets are fixed to the
    published lists; otherwise this implementation's wrapper picks them
    (LDA drives the 11-style subset, the MLP drives the 4-style subset).
    Returns ``(report_text, results)`` and writes report + results +
    manifest next to ``out_path`` when given.
    """
    config = config.resolved()
    cache = Cache(config.cache_dir)

    if config.paper_subsets:
        subset_lda, subset_ann = SUBSET_11, SUBSET_4
        sel_note = "published subsets"
    else:
        lda_trace = SelectionTrace.load(stage_select(config, cache, "lda"))
        ann_trace = SelectionTrace.load(stage_select(config, cache, "mlp"))
        subset_lda = lda_trace.final_subset or SUBSET_11
        subset_ann = ann_trace.final_subset or SUBSET_4
        sel_note = "wrapper-selected subsets"

    ds2_path = stage_extract(config, cache, "ds2")
    ds2 = FeatureMatrix.load(ds2_path)

    rows = list(LITERATURE_BASELINES)
    stage_digests = {"extract_ds2": os.path.basename(ds2_path)}
    for kind, subset, label in (
            ("lda", subset_lda, f"LDA ({len(subset_lda)} features)"),
            ("moe", subset_ann, f"MoE LDA+QDA ({len(subset_ann)} features)"),
            ("ensemble", subset_ann, f"MLP ensemble ({len(subset_ann)} features)")):
        model_path = stage_train(config, cache, kind, subset)
        stage_digests[f"train_{kind}"] = os.path.basename(model_path)
        model = load_any_model(model_path)
        evaluation = evaluate_model(config, model, ds2)
        rows.append(_method_result(label, evaluation, note=sel_note))

    report = format_table(rows)
    results_text = results_to_text(rows)
    if out_path:
        _atomic_write(out_path, report)
        _atomic_write(out_path + ".results.tsv", results_text)
        manifest = ["[config]", config.to_text(), "[stages]"]
        manifest += [f"{k} = {v}" for k, v in sorted(stage_digests.items())]
        manifest += [f"version = ecgbeats {__version__}", ""]
        _atomic_write(out_path + ".manifest", "\n".join(manifest))
    return report, rows


def _atomic_write(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory)
    with os.fdopen(fd, "w", encoding="ascii") as fh:
        fh.write(text)
    os.replace(tmp, path)


def run_stage(stage: str, config: PipelineConfig, **kwargs) -> str:
    """Uniform entry point used by the command line."""
    config = config.resolved()
    cache = Cache(config.cache_dir)
    if stage == "preprocess":
        return stage_preprocess(config, cache, kwargs["record_id"])
    if stage == "extract":
        return stage_extract(config, cache, kwargs["split"])
    if stage == "select":
        return stage_select(config, cache, kwargs["kind"])
    if stage == "train":
        return stage_train(config, cache, kwargs["kind"], kwargs["subset"])
    raise DataError(f"unknown stage {stage!r}")
