"""Probabilistic traversability prediction and risk inference.

Classify-then-regress stack: a multinomial logistic classifier turns
appearance features into a per-cell categorical distribution over terrain
classes, and one exact Gaussian process per class regresses traversability
on slope. Per cell the two fuse into a Gaussian mixture

    P(lambda | cell) = sum_c  P(class = c | colors) * N(mu_c(psi), var_c(psi))

whose risk metrics (mean, lower quantile, lower-tail CVaR) convert the
distribution into the deterministic values planners consume.
"""

from __future__ import annotations

import io
import itertools
import math
import struct
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.special import ndtr

from .errors import ConfigError, DataError, NumericError, TrainingError
from .terrain import GridMap, N_COLOR_FEATURES, color_features

# ---------------------------------------------------------------------------
# Terrain classifier
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TerrainClassifier:
    """Multinomial logistic model over standardized color features."""

    feature_mean: np.ndarray   # (F,)
    feature_scale: np.ndarray  # (F,)
    weights: np.ndarray        # (F + 1, C), bias in the last row

    @property
    def n_features(self) -> int:
        return self.feature_mean.shape[0]

    @property
    def n_classes(self) -> int:
        return self.weights.shape[1]

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        """Per-row softmax class probabilities, rows summing to one."""
        f = np.asarray(features, dtype=float)
        if f.ndim != 2 or f.shape[1] != self.n_features:
            raise DataError(
                f"feature dimension mismatch: got {f.shape}, expected (*, {self.n_features})"
            )
        z = (f - self.feature_mean) / self.feature_scale
        logits = z @ self.weights[:-1] + self.weights[-1]
        return _softmax(logits)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def train_classifier(features: np.ndarray, labels: np.ndarray, *,
                     iterations: int = 300, learning_rate: float = 1.0,
                     l2: float = 1e-4) -> TerrainClassifier:
    """Fit the classifier by full-batch gradient maximum likelihood.

    Training is deterministic: weights start at zero and take a fixed number
    of gradient steps, so retraining on an identical table reproduces the
    model bit for bit.
    """
    x = np.asarray(features, dtype=float)
    y = np.asarray(labels)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise TrainingError("features and labels must align row-wise")
    if x.shape[0] < 100:
        raise TrainingError(f"need at least 100 records, got {x.shape[0]}")
    classes = np.unique(y)
    if classes.size < 2:
        raise TrainingError("training table contains a single class")
    n_classes = int(y.max()) + 1

    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale = np.where(scale < 1e-12, 1.0, scale)
    z = (x - mean) / scale
    zb = np.concatenate([z, np.ones((z.shape[0], 1))], axis=1)

    onehot = np.zeros((y.shape[0], n_classes))
    onehot[np.arange(y.shape[0]), y] = 1.0

    w = np.zeros((zb.shape[1], n_classes))
    inv_n = 1.0 / zb.shape[0]
    for _ in range(iterations):
        p = _softmax(zb @ w)
        grad = zb.T @ (p - onehot) * inv_n
        grad[:-1] += l2 * w[:-1]
        w -= learning_rate * grad
    return TerrainClassifier(feature_mean=mean, feature_scale=scale, weights=w)


@dataclass(frozen=True)
class CategoricalField:
    """Per-cell class probabilities; every cell sums to one."""

    probs: np.ndarray  # (H, W, C)

    def __post_init__(self):
        p = np.ascontiguousarray(self.probs, dtype=float)
        sums = p.sum(axis=-1)
        if np.abs(sums - 1.0).max() > 1e-6:
            raise DataError("categorical probabilities must sum to 1 per cell")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def n_classes(self) -> int:
        return self.probs.shape[-1]


def predict_class_proba(classifier: TerrainClassifier, gmap: GridMap) -> CategoricalField:
    """Pixel-wise class distribution for a whole map."""
    feats = color_features(gmap.colors).reshape(-1, N_COLOR_FEATURES)
    probs = classifier.predict_proba(feats)
    return CategoricalField(probs.reshape(gmap.height, gmap.width, -1))


# ---------------------------------------------------------------------------
# Exact Gaussian process regression (RBF kernel, zero prior mean)
# ---------------------------------------------------------------------------

DEFAULT_LENGTHSCALES = (0.05, 0.1, 0.2, 0.4)
DEFAULT_SIGNAL_VARIANCES = (0.01, 0.05, 0.1)
DEFAULT_NOISE_VARIANCES = (1e-4, 1e-3, 1e-2)

_JITTERS = (0.0, 1e-10, 1e-8, 1e-6)


@dataclass(frozen=True)
class GPHyperGrid:
    lengthscales: tuple[float, ...] = DEFAULT_LENGTHSCALES
    signal_variances: tuple[float, ...] = DEFAULT_SIGNAL_VARIANCES
    noise_variances: tuple[float, ...] = DEFAULT_NOISE_VARIANCES

    def combos(self):
        """Candidate (lengthscale, signal_variance, noise_variance) triples
        in fixed grid order; ties in the search keep the earliest index."""
        return itertools.product(self.lengthscales, self.signal_variances,
                                 self.noise_variances)


@dataclass(frozen=True)
class GPModel:
    inputs: np.ndarray   # (n,)
    targets: np.ndarray  # (n,)
    signal_variance: float
    lengthscale: float
    noise_variance: float
    chol: np.ndarray     # (n, n) lower factor of K + noise * I
    alpha: np.ndarray    # (n,) solve of targets


def _rbf(a: np.ndarray, b: np.ndarray, signal_variance: float, lengthscale: float) -> np.ndarray:
    d = a[:, None] - b[None, :]
    return signal_variance * np.exp(-0.5 * (d / lengthscale) ** 2)


def _chol_with_jitter(k: np.ndarray) -> np.ndarray:
    for jitter in _JITTERS:
        try:
            return cholesky(k + jitter * np.eye(k.shape[0]), lower=True)
        except np.linalg.LinAlgError:
            continue
    raise NumericError("kernel matrix is not positive definite after jitter escalation")


def _build_gp(x: np.ndarray, y: np.ndarray, lengthscale: float,
              signal_variance: float, noise_variance: float) -> GPModel:
    k = _rbf(x, x, signal_variance, lengthscale) + noise_variance * np.eye(x.shape[0])
    chol = _chol_with_jitter(k)
    alpha = cho_solve((chol, True), y)
    return GPModel(inputs=x, targets=y, signal_variance=signal_variance,
                   lengthscale=lengthscale, noise_variance=noise_variance,
                   chol=chol, alpha=alpha)


def fit_gp(inputs, targets, grid: GPHyperGrid | None = None) -> GPModel:
    """Select hyperparameters by exact log marginal likelihood over the grid.

    The search is an exhaustive scan in declared grid order with a strict
    improvement test, so ties resolve to the smallest grid index and the fit
    is fully deterministic.
    """
    x = np.asarray(inputs, dtype=float).ravel()
    y = np.asarray(targets, dtype=float).ravel()
    if x.shape[0] != y.shape[0]:
        raise DataError("inputs and targets must have equal length")
    if x.shape[0] < 8:
        raise DataError(f"need at least 8 training pairs, got {x.shape[0]}")
    grid = grid or GPHyperGrid()
    combos = list(grid.combos())
    if not combos:
        raise ConfigError("hyperparameter grid is empty")

    n = x.shape[0]
    d2 = (x[:, None] - x[None, :]) ** 2
    const = 0.5 * n * math.log(2.0 * math.pi)
    best_lml = -np.inf
    best = None
    for ls, sv, nv in combos:
        k = sv * np.exp(-0.5 * d2 / (ls * ls)) + nv * np.eye(n)
        chol = _chol_with_jitter(k)
        alpha = cho_solve((chol, True), y)
        lml = -0.5 * float(y @ alpha) - float(np.log(np.diag(chol)).sum()) - const
        if lml > best_lml:
            best_lml = lml
            best = (ls, sv, nv)
    ls, sv, nv = best
    return _build_gp(x, y, ls, sv, nv)


def gp_posterior(model: GPModel, query) -> tuple[np.ndarray, np.ndarray]:
    """Exact posterior mean and (noise-free) variance at query inputs.

    mean = k_*^T alpha and var = k_** - k_*^T (K + noise I)^{-1} k_*,
    evaluated through the stored Cholesky factor; variances clamp at zero.
    """
    q = np.atleast_1d(np.asarray(query, dtype=float))
    ks = _rbf(q, model.inputs, model.signal_variance, model.lengthscale)
    mean = ks @ model.alpha
    v = solve_triangular(model.chol, ks.T, lower=True)
    var = model.signal_variance - np.einsum("ij,ij->j", v, v)
    return mean, np.maximum(var, 0.0)


# ---------------------------------------------------------------------------
# Mixture field and risk metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TravField:
    """Predicted traversability distribution per cell: categorical weights
    over classes and class-conditional Gaussian posteriors at the cell's
    slope. Weights are cached per cell; the slope is a cell property, so the
    class posteriors are too."""

    weights: CategoricalField
    means: np.ndarray      # (H, W, C)
    variances: np.ndarray  # (H, W, C)

    def __post_init__(self):
        m = np.ascontiguousarray(self.means, dtype=float)
        v = np.ascontiguousarray(self.variances, dtype=float)
        if m.shape != self.weights.probs.shape or v.shape != m.shape:
            raise DataError("weights, means and variances must share one (H, W, C) shape")
        if v.min() < 0.0:
            raise DataError("variances must be nonnegative")
        m.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "variances", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.means.shape[:2]


@dataclass(frozen=True)
class RiskConfig:
    """How to collapse a per-cell mixture into one deterministic value."""

    metric: str = "cvar"
    alpha: float = 0.9
    mode: str = "mixture"

    def __post_init__(self):
        if self.metric not in ("mean", "cvar", "quantile"):
            raise ConfigError(f"unknown risk metric {self.metric!r}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.mode not in ("mixture", "most_likely_class"):
            raise ConfigError(f"unknown risk mode {self.mode!r}")


def build_trav_field(classifier: TerrainClassifier, gp_models, gmap: GridMap) -> TravField:
    """Predict the full per-cell mixture field for a map."""
    weights = predict_class_proba(classifier, gmap)
    if len(gp_models) != weights.n_classes:
        raise DataError(
            f"need one GP per class: got {len(gp_models)} models for "
            f"{weights.n_classes} classes"
        )
    psi = gmap.slope.ravel()
    means = np.empty((psi.size, len(gp_models)))
    variances = np.empty_like(means)
    for c, model in enumerate(gp_models):
        mu, var = gp_posterior(model, psi)
        means[:, c] = mu
        variances[:, c] = var
    shape = (gmap.height, gmap.width, len(gp_models))
    return TravField(weights=weights, means=means.reshape(shape),
                     variances=variances.reshape(shape))


def mixture_moments(weights, means, variances) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance of component-wise Gaussian mixtures.

    Component axis is the last one; broadcasting applies elsewhere.
    """
    w = np.asarray(weights, dtype=float)
    mu = np.asarray(means, dtype=float)
    var = np.asarray(variances, dtype=float)
    m = (w * mu).sum(axis=-1)
    second = (w * (var + mu * mu)).sum(axis=-1)
    return m, np.maximum(second - m * m, 0.0)


_SIGMA_TRUNCATION = 8.0
_QUANTILE_TOL = 1e-8
_CVAR_NODES = 2048
_POINT_MASS_EPS = 1e-7

_leggauss_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _leggauss(n: int) -> tuple[np.ndarray, np.ndarray]:
    if n not in _leggauss_cache:
        _leggauss_cache[n] = np.polynomial.legendre.leggauss(n)
    return _leggauss_cache[n]


def _mixture_cdf(x: np.ndarray, w: np.ndarray, mu: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """CDF of mixtures at x (shape (...,)); components on the last axis.
    Zero-variance components contribute unit steps at their means."""
    xe = x[..., None]
    cont = sigma > 0.0
    z = np.where(cont, (xe - mu) / np.where(cont, sigma, 1.0), 0.0)
    cdf = np.where(cont, ndtr(z), (xe >= mu).astype(float))
    return (w * cdf).sum(axis=-1)


def mixture_quantile(weights, means, variances, p: float, *,
                     tol: float = _QUANTILE_TOL) -> np.ndarray:
    """Inverse mixture CDF at probability p by bisection.

    The bracket spans all component means +/- 8 sigma; the upper end of the
    final bracket is returned so that point masses sitting exactly at the
    quantile stay inside the tail.
    """
    w = np.atleast_2d(np.asarray(weights, dtype=float))
    mu = np.atleast_2d(np.asarray(means, dtype=float))
    sigma = np.sqrt(np.atleast_2d(np.asarray(variances, dtype=float)))
    squeeze = np.asarray(weights).ndim == 1

    spread = _SIGMA_TRUNCATION * sigma
    active = w > 0.0
    lo = np.where(active, mu - spread, np.inf).min(axis=-1)
    hi = np.where(active, mu + spread, -np.inf).max(axis=-1)
    for _ in range(200):
        gap = hi - lo
        if gap.max() <= tol:
            break
        mid = 0.5 * (lo + hi)
        below = _mixture_cdf(mid, w, mu, sigma) >= p
        hi = np.where(below, mid, hi)
        lo = np.where(below, lo, mid)
    return hi[0] if squeeze and hi.size == 1 else hi


def mixture_cvar(weights, means, variances, alpha: float, *,
                 n_nodes: int = _CVAR_NODES, chunk: int = 128) -> np.ndarray:
    """Lower-tail CVaR at level alpha: E[x | x <= quantile(1 - alpha)].

    Low traversability is the hazardous direction, so the pessimistic tail
    is the lower one. Continuous components integrate by Gauss-Legendre
    quadrature over their truncated support up to the quantile; point
    masses at or below the quantile enter exactly. Both the tail mass and
    the partial expectation come from the same quadrature so the ratio is
    self-consistent.
    """
    w = np.atleast_2d(np.asarray(weights, dtype=float))
    mu = np.atleast_2d(np.asarray(means, dtype=float))
    var = np.atleast_2d(np.asarray(variances, dtype=float))
    squeeze = np.asarray(weights).ndim == 1
    sigma = np.sqrt(var)
    q = np.atleast_1d(mixture_quantile(w, mu, var, 1.0 - alpha))

    nodes, node_wts = _leggauss(n_nodes)
    n = w.shape[0]
    out = np.empty(n)
    for lo_i in range(0, n, chunk):
        sl = slice(lo_i, min(lo_i + chunk, n))
        wc, muc, sc, qc = w[sl], mu[sl], sigma[sl], q[sl]
        cont = sc > 0.0
        point = ~cont & (muc <= qc[:, None] + _POINT_MASS_EPS)
        num = (wc * muc * point).sum(axis=-1)
        mass = (wc * point).sum(axis=-1)

        a = muc - _SIGMA_TRUNCATION * sc
        b = np.minimum(qc[:, None], muc + _SIGMA_TRUNCATION * sc)
        half = np.where(cont & (b > a), 0.5 * (b - a), 0.0)
        mid = 0.5 * (a + b)
        # x has shape (cells, components, nodes)
        x = mid[..., None] + half[..., None] * nodes
        safe_s = np.where(cont, sc, 1.0)[..., None]
        pdf = np.exp(-0.5 * ((x - muc[..., None]) / safe_s) ** 2) / (safe_s * math.sqrt(2.0 * math.pi))
        pdf = pdf * half[..., None]
        comp_mass = (pdf * node_wts).sum(axis=-1)
        comp_num = (pdf * x * node_wts).sum(axis=-1)
        num = num + (wc * comp_num).sum(axis=-1)
        mass = mass + (wc * comp_mass).sum(axis=-1)
        out[sl] = np.where(mass > 1e-12, num / np.where(mass > 1e-12, mass, 1.0), qc)
    return out[0] if squeeze and out.size == 1 else out


def _collapse_most_likely(w, mu, var):
    """Keep only the argmax-weight component per cell (ties: lowest id)."""
    idx = np.argmax(w, axis=-1)[..., None]
    one = np.ones(idx.shape)
    return one, np.take_along_axis(mu, idx, axis=-1), np.take_along_axis(var, idx, axis=-1)


def _risk_values(w, mu, var, cfg: RiskConfig) -> np.ndarray:
    if cfg.mode == "most_likely_class":
        w, mu, var = _collapse_most_likely(w, mu, var)
    if cfg.metric == "mean":
        return mixture_moments(w, mu, var)[0]
    if cfg.metric == "quantile":
        return mixture_quantile(w, mu, var, 1.0 - cfg.alpha)
    return mixture_cvar(w, mu, var, cfg.alpha)


def risk_value(field: TravField, cell: tuple[int, int], cfg: RiskConfig) -> float:
    """Deterministic traversability estimate for one cell (col, row)."""
    ix, iy = cell
    w = field.weights.probs[iy, ix]
    if w.sum() <= 0.0:
        raise DataError("cell has zero total mixture weight")
    mu = field.means[iy, ix]
    var = field.variances[iy, ix]
    return float(np.atleast_1d(_risk_values(w[None], mu[None], var[None], cfg))[0])


def risk_raster(field: TravField, cfg: RiskConfig) -> np.ndarray:
    """Risk metric evaluated on every cell; returns an (H, W) raster."""
    h, w_cells = field.shape
    c = field.weights.n_classes
    w = field.weights.probs.reshape(-1, c)
    mu = field.means.reshape(-1, c)
    var = field.variances.reshape(-1, c)
    if w.sum(axis=-1).min() <= 0.0:
        raise DataError("a cell has zero total mixture weight")
    return np.asarray(_risk_values(w, mu, var, cfg)).reshape(h, w_cells)


# ---------------------------------------------------------------------------
# Model bundle and archive
# ---------------------------------------------------------------------------

TRAV_MAGIC = b"BENCHNAV-TRAV v1\n"


@dataclass(frozen=True)
class Models:
    classifier: TerrainClassifier
    gps: tuple[GPModel, ...]


def train_models(training, *, iterations: int = 300, learning_rate: float = 1.0,
                 l2: float = 1e-4, grid: GPHyperGrid | None = None) -> Models:
    """Fit the classifier and one GP per terrain class from a training set."""
    classifier = train_classifier(training.features, training.labels,
                                  iterations=iterations,
                                  learning_rate=learning_rate, l2=l2)
    gps = tuple(fit_gp(psi, lam, grid) for psi, lam in training.gp_pairs)
    return Models(classifier=classifier, gps=gps)


def _write_f64(buf, arr):
    a = np.ascontiguousarray(arr, dtype="<f8")
    buf.write(struct.pack("<I", a.size))
    buf.write(a.tobytes())


def _read_f64(buf, shape=None):
    (n,) = struct.unpack("<I", buf.read(4))
    a = np.frombuffer(buf.read(8 * n), dtype="<f8").astype(float)
    return a.reshape(shape) if shape is not None else a


def models_to_bytes(models: Models) -> bytes:
    buf = io.BytesIO()
    buf.write(TRAV_MAGIC)
    clf = models.classifier
    buf.write(struct.pack("<II", clf.n_classes, clf.n_features))
    _write_f64(buf, clf.feature_mean)
    _write_f64(buf, clf.feature_scale)
    _write_f64(buf, clf.weights)
    buf.write(struct.pack("<I", len(models.gps)))
    for gp in models.gps:
        _write_f64(buf, gp.inputs)
        _write_f64(buf, gp.targets)
        buf.write(struct.pack("<ddd", gp.signal_variance, gp.lengthscale,
                              gp.noise_variance))
    return buf.getvalue()


def models_from_bytes(data: bytes) -> Models:
    buf = io.BytesIO(data)
    magic = buf.read(len(TRAV_MAGIC))
    if magic != TRAV_MAGIC:
        raise DataError("not a traversability model archive (bad magic)")
    n_classes, n_features = struct.unpack("<II", buf.read(8))
    mean = _read_f64(buf)
    scale = _read_f64(buf)
    weights = _read_f64(buf, (n_features + 1, n_classes))
    if mean.shape != (n_features,) or scale.shape != (n_features,):
        raise DataError("corrupt classifier block in model archive")
    classifier = TerrainClassifier(feature_mean=mean, feature_scale=scale,
                                   weights=weights)
    (n_gps,) = struct.unpack("<I", buf.read(4))
    gps = []
    for _ in range(n_gps):
        inputs = _read_f64(buf)
        targets = _read_f64(buf)
        sv, ls, nv = struct.unpack("<ddd", buf.read(24))
        gps.append(_build_gp(inputs, targets, ls, sv, nv))
    return Models(classifier=classifier, gps=tuple(gps))


def save_models(path, models: Models) -> None:
    with open(path, "wb") as fh:
        fh.write(models_to_bytes(models))


def load_models(path) -> Models:
    with open(path, "rb") as fh:
        return models_from_bytes(fh.read())
