"""Scalar and distributional evaluation scores.

Reference-based: half-distance between unit embeddings (``d_prism``), plus
classical PSNR / SSIM / cosine similarity.  Reference-free: unbiased MMD
with a median-heuristic RBF kernel and the Gaussian Frechet distance with a
PSD matrix square root.  Statistics helpers cover rank AUC, Pearson
correlation, and a logistic-regression linear probe.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d
from scipy.stats import rankdata

from .core_io import ContractError, DataError, EmbeddingSet, FeatureVector

PSNR_CAP_DB = 99.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _as_vector(x: FeatureVector | np.ndarray) -> np.ndarray:
    return np.asarray(getattr(x, "values", x), dtype=np.float64).reshape(-1)


def _unit_vector(x: FeatureVector | np.ndarray, tol: float = 1e-5) -> np.ndarray:
    arr = _as_vector(x)
    nrm = float(np.linalg.norm(arr))
    if abs(nrm - 1.0) > tol:
        raise ContractError(f"expected a unit vector, got norm {nrm:.8f}")
    return arr


def _rows(x: EmbeddingSet | np.ndarray) -> np.ndarray:
    arr = np.asarray(getattr(x, "rows", x), dtype=np.float64)
    if arr.ndim != 2:
        raise ContractError(f"expected an (N, D) set, got shape {arr.shape}")
    return arr


# ---------------------------------------------------------------------------
# Reference-based embedding distance


def d_prism(f1: FeatureVector | np.ndarray, f2: FeatureVector | np.ndarray) -> float:
    """Half the Euclidean distance between two unit embeddings, in [0, 1]."""
    a = _unit_vector(f1)
    b = _unit_vector(f2)
    if a.size != b.size:
        raise ContractError(f"dim mismatch: {a.size} vs {b.size}")
    return min(1.0, 0.5 * float(np.linalg.norm(a - b)))


def d_prism_rows(a: EmbeddingSet | np.ndarray, b: EmbeddingSet | np.ndarray) -> np.ndarray:
    """Row-aligned d_prism over two equally sized embedding sets."""
    x = _rows(a)
    y = _rows(b)
    if x.shape != y.shape:
        raise ContractError(f"shape mismatch: {x.shape} vs {y.shape}")
    norms_x = np.linalg.norm(x, axis=1)
    norms_y = np.linalg.norm(y, axis=1)
    if np.any(np.abs(norms_x - 1.0) > 1e-3) or np.any(np.abs(norms_y - 1.0) > 1e-3):
        raise ContractError("rows must be unit-norm embeddings")
    return np.minimum(1.0, 0.5 * np.linalg.norm(x - y, axis=1))


# ---------------------------------------------------------------------------
# MMD with RBF kernel


@dataclass(frozen=True)
class KernelConfig:
    """RBF kernel bandwidth plus the pair cap for the median heuristic."""

    bandwidth: float
    pair_subsample_cap: int = 10000

    def __post_init__(self) -> None:
        if not self.bandwidth > 0:
            raise DataError("bandwidth must be positive")
        if self.pair_subsample_cap < 1:
            raise DataError("pair_subsample_cap must be >= 1")


def _pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aa = np.sum(a * a, axis=1)
    bb = np.sum(b * b, axis=1)
    sq = aa[:, None] + bb[None, :] - 2.0 * (a @ b.T)
    return np.maximum(sq, 0.0)


def median_bandwidth(
    x: EmbeddingSet | np.ndarray,
    y: EmbeddingSet | np.ndarray,
    pair_subsample_cap: int = 10000,
    seed: int = 0,
) -> float:
    """Median pairwise Euclidean distance over the pooled union of X and Y.

    Self-pairs are excluded.  When the number of distinct pairs exceeds the
    cap, a seeded uniform subsample of pairs is used instead.
    """
    pooled = np.vstack([_rows(x), _rows(y)])
    n = pooled.shape[0]
    if n < 2:
        raise ContractError("median heuristic needs at least two points")
    n_pairs = n * (n - 1) // 2
    if n_pairs <= pair_subsample_cap:
        sq = _pairwise_sq_dists(pooled, pooled)
        iu = np.triu_indices(n, k=1)
        dists = np.sqrt(sq[iu])
    else:
        rng = np.random.default_rng(seed)
        i = rng.integers(0, n, size=pair_subsample_cap)
        j = rng.integers(0, n - 1, size=pair_subsample_cap)
        j = np.where(j >= i, j + 1, j)  # uniform over off-diagonal pairs
        dists = np.linalg.norm(pooled[i] - pooled[j], axis=1)
    sigma = float(np.median(dists))
    if sigma <= 0.0:
        raise DataError("zero bandwidth: all pooled points are identical")
    return sigma


def mmd_unbiased(
    x: EmbeddingSet | np.ndarray,
    y: EmbeddingSet | np.ndarray,
    kernel: KernelConfig,
    clamp: bool = False,
) -> float:
    """Unbiased squared-MMD estimate with k(a,b)=exp(-||a-b||^2 / (2 sigma^2)).

    Self-pairs are excluded from the within-set terms, so the raw estimate
    may be negative; pass ``clamp=True`` to floor it at zero.
    """
    xa = _rows(x)
    ya = _rows(y)
    m, n = xa.shape[0], ya.shape[0]
    if m < 2 or n < 2:
        raise ContractError(f"each set needs >= 2 rows, got {m} and {n}")
    if xa.shape[1] != ya.shape[1]:
        raise ContractError(f"dim mismatch: {xa.shape[1]} vs {ya.shape[1]}")
    c = -0.5 / (kernel.bandwidth**2)
    k_xx = np.exp(c * _pairwise_sq_dists(xa, xa))
    k_yy = np.exp(c * _pairwise_sq_dists(ya, ya))
    k_xy = np.exp(c * _pairwise_sq_dists(xa, ya))
    term_x = (k_xx.sum() - np.trace(k_xx)) / (m * (m - 1))
    term_y = (k_yy.sum() - np.trace(k_yy)) / (n * (n - 1))
    value = float(term_x + term_y - 2.0 * k_xy.mean())
    return max(value, 0.0) if clamp else value


def mmd_prism(
    gen: EmbeddingSet | np.ndarray,
    anchor: EmbeddingSet | np.ndarray,
    bandwidth: float | None = None,
    clamp: bool = False,
    pair_subsample_cap: int = 10000,
    seed: int = 0,
) -> float:
    """Distributional score between generated and anchor unit embeddings.

    Bandwidth comes from the median heuristic over the pooled sets unless an
    override is given.  Returns the raw unbiased squared-MMD estimate, which
    can be negative; use ``clamp`` to report a floored value.
    """
    g = _rows(gen)
    a = _rows(anchor)
    for arr, name in ((g, "gen"), (a, "anchor")):
        norms = np.linalg.norm(arr, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-3):
            raise ContractError(f"{name} rows must be unit-norm embeddings")
    sigma = bandwidth if bandwidth is not None else median_bandwidth(
        g, a, pair_subsample_cap=pair_subsample_cap, seed=seed
    )
    return mmd_unbiased(g, a, KernelConfig(sigma, pair_subsample_cap), clamp=clamp)


# ---------------------------------------------------------------------------
# Gaussian Frechet distance


@dataclass(frozen=True)
class GaussianStats:
    """Sample mean and unbiased covariance of one embedding set."""

    mean: np.ndarray
    covariance: np.ndarray
    count: int

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        cov = np.asarray(self.covariance, dtype=np.float64)
        if cov.shape != (mean.size, mean.size):
            raise DataError(f"covariance shape {cov.shape} != ({mean.size}, {mean.size})")
        if self.count < 2:
            raise DataError("gaussian stats need >= 2 samples")
        tol = 1e-8 * max(1.0, float(np.abs(cov).max()) if cov.size else 1.0)
        if cov.size and float(np.abs(cov - cov.T).max()) > tol:
            raise DataError("covariance is not symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self) -> int:
        return int(self.mean.size)


def gaussian_stats(x: EmbeddingSet | np.ndarray) -> GaussianStats:
    """Sample mean and unbiased (N-1) covariance, symmetrized exactly."""
    arr = _rows(x)
    n = arr.shape[0]
    if n < 2:
        raise ContractError(f"need >= 2 rows for covariance, got {n}")
    mean = arr.mean(axis=0)
    centered = arr - mean
    cov = centered.T @ centered / (n - 1)
    cov = 0.5 * (cov + cov.T)
    return GaussianStats(mean=mean, covariance=cov, count=n)


def sqrtm_psd(a: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    Negative eigenvalues (numerical noise) are clamped to zero, so the
    result squares to the nearest-PSD version of the input.
    """
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ContractError(f"expected a square matrix, got shape {arr.shape}")
    tol = 1e-8 * max(1.0, float(np.abs(arr).max()))
    if float(np.abs(arr - arr.T).max()) > tol:
        raise ContractError("matrix is not symmetric")
    sym = 0.5 * (arr + arr.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    roots = np.sqrt(np.maximum(eigvals, 0.0))
    out = (eigvecs * roots) @ eigvecs.T
    return 0.5 * (out + out.T)


def frechet_distance(g1: GaussianStats, g2: GaussianStats) -> float:
    """Squared Wasserstein-2 distance between two Gaussian fits.

    The cross term is evaluated in symmetric form as
    tr(sqrt(S1^{1/2} S2 S1^{1/2})) to stay inside PSD territory; tiny
    negative totals from round-off are clamped to zero.
    """
    if g1.dim != g2.dim:
        raise ContractError(f"dim mismatch: {g1.dim} vs {g2.dim}")
    mean_term = float(np.sum((g1.mean - g2.mean) ** 2))
    s1_root = sqrtm_psd(g1.covariance)
    inner = s1_root @ g2.covariance @ s1_root
    cross = float(np.trace(sqrtm_psd(0.5 * (inner + inner.T))))
    total = mean_term + float(np.trace(g1.covariance) + np.trace(g2.covariance)) - 2.0 * cross
    if total < 0.0:
        if total < -1e-8:
            raise ArithmeticError(f"frechet distance came out negative: {total}")
        total = 0.0
    return total


def joint_concat(
    src: EmbeddingSet,
    tgt: EmbeddingSet,
    angles_deg: np.ndarray | list[float] | None = None,
) -> EmbeddingSet:
    """Row-wise concatenation of triplet-aligned source and target sets.

    Optionally appends a relative-viewpoint-angle column (degrees) as the
    last feature, for concatenation-plus-angle probes.
    """
    if src.count != tgt.count:
        raise ContractError(f"count mismatch: {src.count} vs {tgt.count}")
    parts = [src.rows, tgt.rows]
    if angles_deg is not None:
        ang = np.asarray(angles_deg, dtype=np.float32).reshape(-1, 1)
        if ang.shape[0] != src.count:
            raise ContractError(f"angle count {ang.shape[0]} != row count {src.count}")
        parts.append(ang)
    return EmbeddingSet(np.hstack(parts), role=src.role)


# ---------------------------------------------------------------------------
# Image quality


def _check_image_pair(a: np.ndarray, b: np.ndarray, data_range: float):
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape:
        raise ContractError(f"image shape mismatch: {x.shape} vs {y.shape}")
    for img in (x, y):
        if not np.all(np.isfinite(img)):
            raise DataError("image contains non-finite values")
        if img.min() < -1e-6 or img.max() > data_range + 1e-6:
            raise ContractError(f"image values outside [0, {data_range}]")
    return x, y


def psnr(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB, capped at 99 for (near-)identical."""
    x, y = _check_image_pair(a, b, data_range)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(data_range**2 / mse))


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    half = (size - 1) // 2
    coords = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    """Mean local structural similarity with an 11x11 Gaussian window.

    Statistics use the normalized window weights; only fully valid windows
    contribute, and channels are averaged.
    """
    x, y = _check_image_pair(a, b, data_range)
    if x.ndim == 2:
        x = x[:, :, None]
        y = y[:, :, None]
    if x.ndim != 3:
        raise ContractError(f"expected (H, W) or (H, W, C) image, got shape {x.shape}")
    if min(x.shape[0], x.shape[1]) < SSIM_WINDOW:
        raise ContractError(
            f"image too small for SSIM: min dimension {min(x.shape[:2])} < {SSIM_WINDOW}"
        )
    win = _gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    channel_means = []
    for ch in range(x.shape[2]):
        xc = x[:, :, ch]
        yc = y[:, :, ch]
        mu_x = convolve2d(xc, win, mode="valid")
        mu_y = convolve2d(yc, win, mode="valid")
        var_x = convolve2d(xc * xc, win, mode="valid") - mu_x**2
        var_y = convolve2d(yc * yc, win, mode="valid") - mu_y**2
        cov_xy = convolve2d(xc * yc, win, mode="valid") - mu_x * mu_y
        num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov_xy + c2)
        den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
        channel_means.append(float(np.mean(num / den)))
    return float(np.mean(channel_means))


def cosine_score(e1: FeatureVector | np.ndarray, e2: FeatureVector | np.ndarray) -> float:
    """Cosine similarity between two nonzero vectors, in [-1, 1]."""
    a = _as_vector(e1)
    b = _as_vector(e2)
    if a.size != b.size:
        raise ContractError(f"dim mismatch: {a.size} vs {b.size}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na < 1e-12 or nb < 1e-12:
        raise ContractError("cosine score is undefined for zero vectors")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


# ---------------------------------------------------------------------------
# Statistics


def _as_binary_labels(labels) -> np.ndarray:
    out = []
    for lab in labels:
        if isinstance(lab, str):
            if lab in ("pos", "positive", "1"):
                out.append(True)
            elif lab in ("neg", "negative", "0"):
                out.append(False)
            else:
                raise ContractError(f"unknown label {lab!r}")
        else:
            out.append(bool(lab))
    return np.asarray(out, dtype=bool)


def auc(scores, labels) -> float:
    """Rank AUC (Mann-Whitney statistic); tied scores contribute 0.5."""
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    lab = _as_binary_labels(labels)
    if s.size != lab.size:
        raise ContractError(f"length mismatch: {s.size} scores, {lab.size} labels")
    n_pos = int(lab.sum())
    n_neg = int(lab.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ContractError("AUC needs at least one positive and one negative")
    ranks = rankdata(s, method="average")
    u = float(ranks[lab].sum()) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def pearson(x, y) -> float:
    """Sample Pearson correlation, in [-1, 1]."""
    xa = np.asarray(x, dtype=np.float64).reshape(-1)
    ya = np.asarray(y, dtype=np.float64).reshape(-1)
    if xa.size != ya.size:
        raise ContractError(f"length mismatch: {xa.size} vs {ya.size}")
    if xa.size < 2:
        raise ContractError("pearson needs >= 2 points")
    xc = xa - xa.mean()
    yc = ya - ya.mean()
    sx = float(np.sum(xc * xc))
    sy = float(np.sum(yc * yc))
    if sx <= 0.0 or sy <= 0.0:
        raise ContractError("pearson is undefined for zero-variance input")
    return float(np.clip(np.sum(xc * yc) / np.sqrt(sx * sy), -1.0, 1.0))


@dataclass
class ProbeResult:
    weights: np.ndarray
    bias: float
    auc: float


def linear_probe(
    features: EmbeddingSet | np.ndarray,
    labels,
    seed: int = 0,
    holdout_fraction: float = 0.0,
    learning_rate: float = 0.1,
    iterations: int = 500,
    l2_penalty: float = 1e-4,
) -> ProbeResult:
    """Logistic regression by full-batch gradient descent, scored by AUC.

    Features are standardized on the training portion.  With
    ``holdout_fraction`` > 0 a seeded split is made and the AUC is computed
    on the held-out part; otherwise it is in-sample.
    """
    x = _rows(features)
    lab = _as_binary_labels(labels)
    if x.shape[0] != lab.size:
        raise ContractError(f"row/label mismatch: {x.shape[0]} vs {lab.size}")
    if lab.all() or not lab.any():
        raise ContractError("probe needs both classes present")
    rng = np.random.default_rng(seed)
    idx = rng.permutation(x.shape[0])
    if holdout_fraction > 0.0:
        n_hold = max(1, int(round(holdout_fraction * x.shape[0])))
        if n_hold >= x.shape[0]:
            raise ContractError("holdout fraction leaves no training rows")
        hold, train = idx[:n_hold], idx[n_hold:]
        if lab[train].all() or not lab[train].any():
            raise ContractError("holdout split left a single-class training set")
    else:
        hold, train = idx, idx

    mu = x[train].mean(axis=0)
    sd = x[train].std(axis=0)
    sd = np.where(sd < 1e-8, 1.0, sd)
    xt = (x[train] - mu) / sd
    yt = lab[train].astype(np.float64)

    w = np.zeros(x.shape[1])
    b = 0.0
    n = xt.shape[0]
    for _ in range(iterations):
        z = xt @ w + b
        p = 1.0 / (1.0 + np.exp(-z))
        err = p - yt
        grad_w = xt.T @ err / n + 2.0 * l2_penalty * w
        grad_b = float(err.mean())
        w -= learning_rate * grad_w
        b -= learning_rate * grad_b

    xe = (x[hold] - mu) / sd
    scores = xe @ w + b
    return ProbeResult(weights=w, bias=b, auc=auc(scores, lab[hold]))
