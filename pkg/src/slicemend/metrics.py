"""Generation-quality kernels over precomputed feature vectors.

Fréchet distance and Gaussian KL are computed on Gaussian moment fits.
Rank-deficient covariances get a diagonal regularizer of 1e-6 x mean
diagonal; well-conditioned inputs are computed plainly (a blanket
regularizer would shift the analytic reference cases by ~1e-6, far
beyond their 1e-9 tolerance). The magnitude actually applied is
reported alongside results, zero when none was needed.

The matrix square root inside the Fréchet distance goes through a
symmetric eigendecomposition: with A = sqrt(cov_a) (itself symmetric
PSD), the product cov_a @ cov_b is similar to the symmetric matrix
A @ cov_b @ A, so Tr((cov_a cov_b)^(1/2)) equals the sum of square
roots of that symmetric matrix's eigenvalues. Eigenvalues above
-1e-8 x spectral radius are clamped to zero; anything more negative is
a hard numeric error.

The KL value is the closed form for Gaussian fits; output metadata
labels the estimator accordingly, since other divergence estimators
over the same features would give different numbers.

Feature files (FVEC1): little-endian magic "FVEC1", u32 count, u32
dimension, then count x dimension float32 values, row-major.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

from .errors import DomainError, NumericError

REGULARIZATION_SCALE = 1e-6
EIGENVALUE_CLAMP_RELATIVE = 1e-8

FVEC_MAGIC = b"FVEC1"
_FVEC_HEADER = struct.Struct("<5sII")


@dataclass(frozen=True)
class FeatureSet:
    vectors: np.ndarray
    source_tag: str = ""

    def __post_init__(self):
        arr = np.asarray(self.vectors, dtype=np.float64)
        if arr.ndim != 2:
            raise DomainError(f"feature set must be 2-D, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise DomainError("feature set contains non-finite values")
        object.__setattr__(self, "vectors", arr)

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True)
class GaussianSummary:
    mean: np.ndarray
    covariance: np.ndarray
    regularization: float


def moment_summary(features: FeatureSet, reg_scale: float = REGULARIZATION_SCALE) -> GaussianSummary:
    """Sample mean and covariance, regularized only if rank-deficient."""
    if features.n < 2:
        raise DomainError("covariance estimation needs at least 2 vectors")
    mean = features.vectors.mean(axis=0)
    cov = np.cov(features.vectors, rowvar=False)
    cov = np.atleast_2d(cov)
    cov = (cov + cov.T) / 2.0
    reg = 0.0
    mean_diag = float(np.mean(np.diag(cov)))
    eigvals = scipy.linalg.eigvalsh(cov)
    if mean_diag <= 0.0 or eigvals[0] <= 1e-12 * max(mean_diag, 1e-300):
        reg = reg_scale * (mean_diag if mean_diag > 0 else 1.0)
        cov = cov + reg * np.eye(cov.shape[0])
    return GaussianSummary(mean=mean, covariance=cov, regularization=reg)


def _check_pair(a: FeatureSet, b: FeatureSet):
    if a.dim != b.dim:
        raise DomainError(f"dimension mismatch: {a.dim} vs {b.dim}")


def _clamped_eigvals(values: np.ndarray, context: str) -> np.ndarray:
    radius = float(np.max(np.abs(values))) if values.size else 0.0
    floor = -EIGENVALUE_CLAMP_RELATIVE * radius
    if np.any(values < floor):
        worst = float(values.min())
        raise NumericError(
            f"{context}: eigenvalue {worst:.3e} below clamp floor {floor:.3e}"
        )
    return np.clip(values, 0.0, None)


def frechet_distance(a: FeatureSet, b: FeatureSet) -> float:
    """||mu_a - mu_b||^2 + Tr(cov_a + cov_b - 2 (cov_a cov_b)^(1/2))."""
    _check_pair(a, b)
    ga = moment_summary(a)
    gb = moment_summary(b)

    vals_a, vecs_a = scipy.linalg.eigh(ga.covariance)
    vals_a = _clamped_eigvals(vals_a, "frechet sqrt(cov_a)")
    root_a = (vecs_a * np.sqrt(vals_a)) @ vecs_a.T

    inner = root_a @ gb.covariance @ root_a
    inner = (inner + inner.T) / 2.0
    vals_m = scipy.linalg.eigvalsh(inner)
    vals_m = _clamped_eigvals(vals_m, "frechet product sqrt")
    trace_sqrt = float(np.sqrt(vals_m).sum())

    diff = ga.mean - gb.mean
    value = float(diff @ diff + np.trace(ga.covariance) + np.trace(gb.covariance) - 2.0 * trace_sqrt)
    if value < -1e-6:
        raise NumericError(f"frechet distance collapsed to {value:.3e} < 0")
    return max(value, 0.0)


def gaussian_kl(a: FeatureSet, b: FeatureSet) -> float:
    """Closed-form KL(N_a || N_b) over regularized moment fits."""
    _check_pair(a, b)
    ga = moment_summary(a)
    gb = moment_summary(b)
    dim = a.dim
    try:
        chol_b = scipy.linalg.cho_factor(gb.covariance, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise NumericError(f"covariance of second set is singular: {exc}") from exc
    solve_b = scipy.linalg.cho_solve(chol_b, np.eye(dim))
    trace_term = float(np.trace(solve_b @ ga.covariance))
    diff = gb.mean - ga.mean
    quad = float(diff @ solve_b @ diff)
    logdet_b = 2.0 * float(np.sum(np.log(np.diag(chol_b[0]))))
    sign_a, logdet_a = np.linalg.slogdet(ga.covariance)
    if sign_a <= 0:
        raise NumericError("covariance of first set is not positive definite")
    value = 0.5 * (trace_term + quad - dim + logdet_b - float(logdet_a))
    if value < -1e-9:
        raise NumericError(f"gaussian KL collapsed to {value:.3e} < 0")
    return max(value, 0.0)


def mean_pairwise_diversity(distances: np.ndarray) -> float:
    """Mean of the strict upper triangle of a symmetric, zero-diagonal
    distance matrix (e.g. perceptual distances supplied externally)."""
    d = np.asarray(distances, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise DomainError(f"distance matrix must be square, got shape {d.shape}")
    n = d.shape[0]
    if n < 2:
        raise DomainError("diversity needs at least 2 items (one pair)")
    if not np.isfinite(d).all():
        raise DomainError("distance matrix contains non-finite values")
    if np.max(np.abs(d - d.T)) > 1e-9:
        raise DomainError("distance matrix is not symmetric within 1e-9")
    if np.max(np.abs(np.diag(d))) > 1e-9:
        raise DomainError("distance matrix diagonal is not zero")
    iu = np.triu_indices(n, k=1)
    return float(d[iu].mean())


def mean_consistency(pairs) -> float:
    """Mean cosine similarity over (u, v) embedding pairs."""
    if not pairs:
        raise DomainError("consistency needs at least one pair")
    sims = []
    for u, v in pairs:
        u = np.asarray(u, dtype=np.float64).ravel()
        v = np.asarray(v, dtype=np.float64).ravel()
        if u.shape != v.shape:
            raise DomainError(f"pair dimension mismatch: {u.shape} vs {v.shape}")
        nu = np.linalg.norm(u)
        nv = np.linalg.norm(v)
        if nu == 0.0 or nv == 0.0:
            raise DomainError("zero-norm vector in consistency pair")
        sims.append(float(u @ v / (nu * nv)))
    return float(np.mean(sims))


def write_fvec(path: str | Path, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(np.asarray(array, dtype="<f4"))
    if arr.ndim != 2:
        raise DomainError(f"FVEC arrays are 2-D, got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(_FVEC_HEADER.pack(FVEC_MAGIC, arr.shape[0], arr.shape[1]))
        fh.write(arr.tobytes())


def read_fvec(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(_FVEC_HEADER.size)
        if len(header) != _FVEC_HEADER.size:
            raise DomainError(f"{path}: truncated FVEC header")
        magic, n, dim = _FVEC_HEADER.unpack(header)
        if magic != FVEC_MAGIC:
            raise DomainError(f"{path}: bad magic {magic!r}, expected {FVEC_MAGIC!r}")
        body = fh.read(4 * n * dim)
        if len(body) != 4 * n * dim:
            raise DomainError(f"{path}: truncated FVEC body")
        extra = fh.read(1)
        if extra:
            raise DomainError(f"{path}: trailing bytes after {n}x{dim} floats")
    return np.frombuffer(body, dtype="<f4").reshape(n, dim).astype(np.float64)


def metrics_report(
    real: FeatureSet,
    generated: FeatureSet,
    distances: np.ndarray | None = None,
    pairs=None,
) -> dict:
    """All available metrics plus estimator metadata for the CLI."""
    ga = moment_summary(real)
    gb = moment_summary(generated)
    report = {
        "frechet_distance": frechet_distance(real, generated),
        "gaussian_kl": gaussian_kl(real, generated),
        "mean_pairwise_diversity": (
            mean_pairwise_diversity(distances) if distances is not None else None
        ),
        "mean_consistency": mean_consistency(pairs) if pairs is not None else None,
        "metadata": {
            "kl_estimator": "gaussian_closed_form",
            "regularization_scale": REGULARIZATION_SCALE,
            "regularization_real": ga.regularization,
            "regularization_generated": gb.regularization,
            "n_real": real.n,
            "n_generated": generated.n,
            "dim": real.dim,
        },
    }
    return report
