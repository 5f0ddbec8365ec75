"""Beat classifiers: Gaussian discriminants, an MLP, ensembles, and MoE.

Every predictor returns a per-class posterior (or output activation)
matrix plus argmax labels; argmax ties break toward the canonical class
order N < S < V < F < Q (and N < S1 < S2 < V for the four-class scheme).
Trained models are immutable; training returns new objects.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DataError, NumericError

CLASS_ORDER_5 = ("N", "S", "V", "F", "Q")
CLASS_ORDER_4 = ("N", "S1", "S2", "V")

_CLASS_PRIORITY = {"N": 0, "S": 1, "S1": 2, "S2": 3, "V": 4, "F": 5, "Q": 6}

SVEB_POSITIVE = frozenset({"S", "S1", "S2"})
VEB_POSITIVE = frozenset({"V"})
_KNOWN_TOKENS = frozenset({"N", "S", "V", "F", "Q", "S1", "S2"})


def canonical_class_order(labels) -> tuple[str, ...]:
    present = sorted(set(labels), key=lambda c: (_CLASS_PRIORITY.get(c, 99), c))
    return tuple(present)


def one_hot(labels, classes) -> np.ndarray:
    index = {c: k for k, c in enumerate(classes)}
    out = np.zeros((len(labels), len(classes)))
    for i, lab in enumerate(labels):
        out[i, index[lab]] = 1.0
    return out


# ---------------------------------------------------------------------------
# Gaussian discriminants
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianDiscriminantModel:
    kind: str                        # "lda" | "qda"
    classes: tuple[str, ...]
    means: np.ndarray                # (k, p)
    covariances: np.ndarray          # (k, p, p); identical copies for LDA
    priors: np.ndarray               # (k,), sums to 1
    feature_names: tuple[str, ...] = ()


def _regularize(cov: np.ndarray, strength: float) -> np.ndarray:
    p = cov.shape[0]
    lam = strength * np.trace(cov) / p
    return cov + lam * np.eye(p)


def _check_classes(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = list(y)
    if X.ndim != 2 or X.shape[0] != len(y):
        raise DataError("features and labels must align")
    classes = canonical_class_order(y)
    if len(classes) < 2:
        raise DataError("need at least 2 classes to fit a discriminant")
    return X, y, classes


def lda_fit(X, y, class_weights=None, feature_names=()) -> GaussianDiscriminantModel:
    """Fit shared-covariance discriminant analysis.

    The pooled covariance is the class-size-weighted average of the
    per-class scatters, ridged by 1e-6 * trace/p on the diagonal. Priors
    follow class counts unless ``class_weights`` (mapping class -> weight)
    is given, in which case priors follow the weights.
    """
    X, y, classes = _check_classes(X, y)
    n, p = X.shape
    means = np.zeros((len(classes), p))
    pooled = np.zeros((p, p))
    counts = np.zeros(len(classes))
    yarr = np.asarray(y)
    for k, c in enumerate(classes):
        sub = X[yarr == c]
        if sub.shape[0] < 2:
            raise DataError(f"class {c} has fewer than 2 samples")
        counts[k] = sub.shape[0]
        means[k] = sub.mean(axis=0)
        centered = sub - means[k]
        pooled += centered.T @ centered
    pooled /= n
    pooled = _regularize(pooled, 1e-6)
    _cholesky_or_raise(pooled, "pooled covariance")

    priors = _priors(classes, counts, class_weights)
    cov = np.repeat(pooled[None, :, :], len(classes), axis=0)
    return GaussianDiscriminantModel("lda", classes, means, cov, priors,
                                     tuple(feature_names))


def qda_fit(X, y, class_weights=None, feature_names=()) -> GaussianDiscriminantModel:
    """Fit per-class-covariance discriminant analysis.

    Classes with at most p samples get a much stronger ridge (1e-2 vs 1e-6
    times trace/p) since their scatter is rank deficient.
    """
    X, y, classes = _check_classes(X, y)
    p = X.shape[1]
    means = np.zeros((len(classes), p))
    covs = np.zeros((len(classes), p, p))
    counts = np.zeros(len(classes))
    yarr = np.asarray(y)
    for k, c in enumerate(classes):
        sub = X[yarr == c]
        if sub.shape[0] < 2:
            raise DataError(f"class {c} has fewer than 2 samples")
        counts[k] = sub.shape[0]
        means[k] = sub.mean(axis=0)
        centered = sub - means[k]
        cov = centered.T @ centered / sub.shape[0]
        strength = 1e-6 if sub.shape[0] > p else 1e-2
        covs[k] = _regularize(cov, strength)
        _cholesky_or_raise(covs[k], f"class {c} covariance")

    priors = _priors(classes, counts, class_weights)
    return GaussianDiscriminantModel("qda", classes, means, covs, priors,
                                     tuple(feature_names))


def _priors(classes, counts, class_weights):
    if class_weights is None:
        priors = counts / counts.sum()
    else:
        w = np.asarray([float(class_weights[c]) for c in classes])
        if np.any(w <= 0):
            raise DataError("class weights must be positive")
        priors = w / w.sum()
    return priors


def _cholesky_or_raise(cov, what):
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise NumericError(f"{what} is singular after regularization") from None


def gd_predict(model: GaussianDiscriminantModel, X):
    """Posterior matrix and argmax labels for a discriminant model.

    Log-densities plus log-priors are normalized with max subtraction, so
    each posterior row sums to 1 to within 1e-9.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    k, p = model.means.shape
    if X.shape[1] != p:
        raise DataError(f"expected {p} features, got {X.shape[1]}")
    log_post = np.empty((X.shape[0], k))
    for c in range(k):
        chol = _cholesky_or_raise(model.covariances[c], "model covariance")
        diff = X - model.means[c]
        sol = solve_triangular(chol, diff.T, lower=True)
        quad = np.sum(sol * sol, axis=0)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        log_post[:, c] = -0.5 * (quad + logdet + p * math.log(2 * math.pi)) \
            + math.log(model.priors[c])
    log_post -= log_post.max(axis=1, keepdims=True)
    post = np.exp(log_post)
    post /= post.sum(axis=1, keepdims=True)
    labels = np.asarray(model.classes)[post.argmax(axis=1)]
    return post, labels


# ---------------------------------------------------------------------------
# Multilayer perceptron
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MlpModel:
    classes: tuple[str, ...]
    w1: np.ndarray                   # (hidden, inputs)
    b1: np.ndarray
    w2: np.ndarray                   # (outputs, hidden)
    b2: np.ndarray
    seed: int
    init_variance: float
    learning_rate: float
    feature_names: tuple[str, ...] = ()

    @property
    def topology(self):
        return (self.w1.shape[1], self.w1.shape[0], self.w2.shape[0])


def hidden_units(n_inputs: int, n_outputs: int, rule) -> int:
    """Hidden-layer size: (inputs + outputs) / 2 or / 3, rounded up."""
    if isinstance(rule, int):
        if rule < 1:
            raise ValueError("hidden size must be >= 1")
        return rule
    if rule == "sum/2":
        return math.ceil((n_inputs + n_outputs) / 2)
    if rule == "sum/3":
        return math.ceil((n_inputs + n_outputs) / 3)
    raise ValueError(f"unknown hidden rule {rule!r}")


def mlp_init(n_inputs: int, n_outputs: int, hidden_rule="sum/2", seed: int = 0,
             init_variance: float = 0.2, learning_rate: float = 0.1,
             classes=(), feature_names=()) -> MlpModel:
    """Fresh network with Uniform(-a, a) weights, a = sqrt(3 * variance)."""
    if not 0.1 <= init_variance <= 0.5:
        raise ValueError("init_variance must lie in [0.1, 0.5]")
    if n_inputs < 1 or n_outputs < 1:
        raise ValueError("need at least one input and one output")
    h = hidden_units(n_inputs, n_outputs, hidden_rule)
    a = math.sqrt(3.0 * init_variance)
    rng = np.random.default_rng(seed)
    w1 = rng.uniform(-a, a, size=(h, n_inputs))
    w2 = rng.uniform(-a, a, size=(n_outputs, h))
    classes = tuple(classes) if classes else tuple(str(i) for i in range(n_outputs))
    return MlpModel(classes, w1, np.zeros(h), w2, np.zeros(n_outputs),
                    seed, init_variance, learning_rate, tuple(feature_names))


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))


def mlp_forward(model: MlpModel, X):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    hidden = _sigmoid(X @ model.w1.T + model.b1)
    return _sigmoid(hidden @ model.w2.T + model.b2)


def mlp_loss(model: MlpModel, X, Y) -> float:
    """Sum-of-squares error 0.5 * sum (y - o)^2 over the whole batch."""
    out = mlp_forward(model, X)
    return float(0.5 * np.sum((Y - out) ** 2))


def mlp_gradients(model: MlpModel, X, Y):
    """Analytic batch gradients of ``mlp_loss`` w.r.t. all parameters."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    hidden = _sigmoid(X @ model.w1.T + model.b1)
    out = _sigmoid(hidden @ model.w2.T + model.b2)
    delta_out = (out - Y) * out * (1.0 - out)
    g_w2 = delta_out.T @ hidden
    g_b2 = delta_out.sum(axis=0)
    delta_h = (delta_out @ model.w2) * hidden * (1.0 - hidden)
    g_w1 = delta_h.T @ X
    g_b1 = delta_h.sum(axis=0)
    return g_w1, g_b1, g_w2, g_b2


def mlp_predict(model: MlpModel, X):
    out = mlp_forward(model, X)
    labels = np.asarray(model.classes)[out.argmax(axis=1)]
    return out, labels


def mlp_train(model: MlpModel, train, valid=None, eta: float | None = None,
              max_epochs: int = 200, patience: int = 10):
    """Per-sample backpropagation with early stopping.

    Samples are revisited in a fresh permutation drawn from (seed, epoch),
    so training is reproducible yet shuffled. Stops when the validation
    loss has not improved for ``patience`` epochs or at ``max_epochs``,
    returning the best-validation snapshot and the loss curve as a list of
    (train_loss, valid_loss) pairs.
    """
    X, Y = (np.asarray(a, dtype=np.float64) for a in train)
    Xv, Yv = (X, Y) if valid is None else (np.asarray(a, dtype=np.float64) for a in valid)
    eta = model.learning_rate if eta is None else float(eta)
    if eta < 0:
        raise ValueError("learning rate must be >= 0")

    w1, b1 = model.w1.copy(), model.b1.copy()
    w2, b2 = model.w2.copy(), model.b2.copy()
    n = X.shape[0]
    curve = []
    best_loss, best_epoch = np.inf, -1
    best = (w1.copy(), b1.copy(), w2.copy(), b2.copy())

    for epoch in range(max_epochs):
        order = np.random.default_rng((model.seed, epoch)).permutation(n)
        for i in order:
            x = X[i]
            h = _sigmoid(w1 @ x + b1)
            o = _sigmoid(w2 @ h + b2)
            delta_o = (o - Y[i]) * o * (1.0 - o)
            delta_h = (w2.T @ delta_o) * h * (1.0 - h)
            w2 -= eta * np.outer(delta_o, h)
            b2 -= eta * delta_o
            w1 -= eta * np.outer(delta_h, x)
            b1 -= eta * delta_h

        snap = replace(model, w1=w1, b1=b1, w2=w2, b2=b2, learning_rate=eta)
        train_loss = mlp_loss(snap, X, Y) / n
        valid_loss = mlp_loss(snap, Xv, Yv) / Xv.shape[0]
        if not (np.isfinite(train_loss) and np.isfinite(valid_loss)):
            raise NumericError(f"non-finite loss at epoch {epoch}")
        curve.append((train_loss, valid_loss))
        if valid_loss < best_loss:
            best_loss, best_epoch = valid_loss, epoch
            best = (w1.copy(), b1.copy(), w2.copy(), b2.copy())
        elif epoch - best_epoch >= patience:
            break

    trained = replace(model, w1=best[0], b1=best[1], w2=best[2], b2=best[3],
                      learning_rate=eta)
    return trained, curve


# ---------------------------------------------------------------------------
# MLP ensemble
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EnsembleModel:
    members: tuple[MlpModel, ...]

    @property
    def classes(self):
        return self.members[0].classes

    @property
    def feature_names(self):
        return self.members[0].feature_names


def ensemble_train(train, valid, classes, seeds, hidden_rule="sum/2",
                   init_variance: float = 0.2, eta: float = 0.1,
                   max_epochs: int = 200, patience: int = 10,
                   feature_names=()) -> EnsembleModel:
    """Train one MLP per seed at a shared topology and hyperparameters."""
    seeds = list(seeds)
    if len(set(seeds)) != len(seeds):
        raise DataError("ensemble seeds must be distinct")
    X, _ = train
    members = []
    for i, seed in enumerate(seeds):
        model = mlp_init(np.asarray(X).shape[1], len(classes), hidden_rule,
                         seed=seed, init_variance=init_variance,
                         learning_rate=eta, classes=classes,
                         feature_names=feature_names)
        try:
            trained, _ = mlp_train(model, train, valid, eta, max_epochs, patience)
        except NumericError as exc:
            raise NumericError(f"ensemble member {i} (seed {seed}) failed: {exc}") from exc
        members.append(trained)
    return EnsembleModel(tuple(members))


def ensemble_predict(ensemble: EnsembleModel, X):
    """Mean of member output vectors, then argmax."""
    outputs = np.mean([mlp_forward(m, X) for m in ensemble.members], axis=0)
    labels = np.asarray(ensemble.classes)[outputs.argmax(axis=1)]
    return outputs, labels


# ---------------------------------------------------------------------------
# Mixture of experts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MoeModel:
    lda: GaussianDiscriminantModel
    qda: GaussianDiscriminantModel
    rule: str = "average"            # "average" | "best"
    best_member: str = "lda"         # used only by rule="best"

    @property
    def classes(self):
        return self.lda.classes

    @property
    def feature_names(self):
        return self.lda.feature_names


def moe_fit(X, y, class_weights=None, feature_names=(), rule="average") -> MoeModel:
    lda = lda_fit(X, y, class_weights, feature_names)
    qda = qda_fit(X, y, class_weights, feature_names)
    return MoeModel(lda, qda, rule)


def moe_predict(moe: MoeModel, X):
    """Elementwise mean of the two posterior vectors (or the best member's)."""
    if moe.lda.classes != moe.qda.classes:
        raise DataError("mixture members disagree on the class set")
    post_l, _ = gd_predict(moe.lda, X)
    post_q, _ = gd_predict(moe.qda, X)
    if moe.rule == "average":
        post = 0.5 * (post_l + post_q)
    elif moe.rule == "best":
        post = post_l if moe.best_member == "lda" else post_q
    else:
        raise ValueError(f"unknown mixture rule {moe.rule!r}")
    labels = np.asarray(moe.classes)[post.argmax(axis=1)]
    return post, labels


# ---------------------------------------------------------------------------
# Binary consolidation
# ---------------------------------------------------------------------------

def consolidate_to_binary_labels(predictions, target: str) -> np.ndarray:
    """Collapse 4/5-class predictions to target-vs-rest booleans.

    SVEB-positive means predicted S (or S1/S2 in the four-class scheme);
    VEB-positive means predicted V. Everything else is negative.
    """
    target = target.upper()
    if target == "SVEB":
        positive = SVEB_POSITIVE
    elif target == "VEB":
        positive = VEB_POSITIVE
    else:
        raise DataError(f"unknown consolidation target {target!r}")
    out = np.empty(len(predictions), dtype=bool)
    for i, lab in enumerate(predictions):
        if lab not in _KNOWN_TOKENS:
            raise DataError(f"unknown class token {lab!r}")
        out[i] = lab in positive
    return out


# ---------------------------------------------------------------------------
# Persistence: versioned structured text
# ---------------------------------------------------------------------------

_FORMAT_LINE = "ecgbeats-model v1"


def save_model(model, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(_FORMAT_LINE + "\n")
        _write_model(fh, model)


def load_model(path):
    with open(path, encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != _FORMAT_LINE:
        raise DataError(f"{path}: not an ecgbeats model file")
    model, _ = _read_model(lines, 1)
    return model


def _write_array(fh, name, arr):
    arr = np.asarray(arr, dtype=np.float64)
    dims = " ".join(str(d) for d in arr.shape)
    fh.write(f"@array {name} {dims}\n")
    flat = arr.ravel()
    for start in range(0, flat.size, 8):
        fh.write(" ".join(f"{v:.17g}" for v in flat[start:start + 8]) + "\n")


def _write_model(fh, model):
    if isinstance(model, GaussianDiscriminantModel):
        fh.write(f"kind {model.kind}\n")
        fh.write("classes " + " ".join(model.classes) + "\n")
        if model.feature_names:
            fh.write("features " + " ".join(model.feature_names) + "\n")
        _write_array(fh, "priors", model.priors)
        _write_array(fh, "means", model.means)
        _write_array(fh, "covariances", model.covariances)
    elif isinstance(model, MlpModel):
        fh.write("kind mlp\n")
        fh.write("classes " + " ".join(model.classes) + "\n")
        if model.feature_names:
            fh.write("features " + " ".join(model.feature_names) + "\n")
        fh.write(f"seed {model.seed}\n")
        fh.write(f"init_variance {model.init_variance:.17g}\n")
        fh.write(f"learning_rate {model.learning_rate:.17g}\n")
        for name in ("w1", "b1", "w2", "b2"):
            _write_array(fh, name, getattr(model, name))
    elif isinstance(model, EnsembleModel):
        fh.write("kind ensemble\n")
        fh.write(f"members {len(model.members)}\n")
        for member in model.members:
            fh.write("@member\n")
            _write_model(fh, member)
    elif isinstance(model, MoeModel):
        fh.write("kind moe\n")
        fh.write(f"rule {model.rule}\n")
        fh.write(f"best_member {model.best_member}\n")
        for member in (model.lda, model.qda):
            fh.write("@member\n")
            _write_model(fh, member)
    else:
        raise DataError(f"cannot persist model of type {type(model).__name__}")
    fh.write("@end\n")


def _read_model(lines, pos):
    fields = {}
    arrays = {}
    members = []
    while pos < len(lines):
        line = lines[pos]
        pos += 1
        if line == "@end":
            break
        if line == "@member":
            member, pos = _read_model(lines, pos)
            members.append(member)
            continue
        if line.startswith("@array "):
            parts = line.split()
            name, dims = parts[1], tuple(int(d) for d in parts[2:])
            count = int(np.prod(dims)) if dims else 1
            vals = []
            while len(vals) < count:
                vals.extend(float(v) for v in lines[pos].split())
                pos += 1
            arrays[name] = np.asarray(vals).reshape(dims)
            continue
        key, _, value = line.partition(" ")
        fields[key] = value

    kind = fields.get("kind", "")
    classes = tuple(fields.get("classes", "").split())
    feats = tuple(fields.get("features", "").split())
    if kind in ("lda", "qda"):
        model = GaussianDiscriminantModel(kind, classes, arrays["means"],
                                          arrays["covariances"], arrays["priors"], feats)
    elif kind == "mlp":
        model = MlpModel(classes, arrays["w1"], arrays["b1"], arrays["w2"],
                         arrays["b2"], int(fields["seed"]),
                         float(fields["init_variance"]),
                         float(fields["learning_rate"]), feats)
    elif kind == "ensemble":
        model = EnsembleModel(tuple(members))
    elif kind == "moe":
        model = MoeModel(members[0], members[1], fields.get("rule", "average"),
                         fields.get("best_member", "lda"))
    else:
        raise DataError(f"unknown model kind {kind!r}")
    return model, pos


def predict(model, X):
    """Dispatch prediction over any persisted model kind."""
    if isinstance(model, GaussianDiscriminantModel):
        return gd_predict(model, X)
    if isinstance(model, MlpModel):
        return mlp_predict(model, X)
    if isinstance(model, EnsembleModel):
        return ensemble_predict(model, X)
    if isinstance(model, MoeModel):
        return moe_predict(model, X)
    raise DataError(f"cannot predict with {type(model).__name__}")
