"""Deterministic numerical primitives: seeded sampling, orthogonal-group
utilities, PSD solves, eigenvalue estimation and log-log curve fitting.

All randomness flows through :class:`Rng`, a thin wrapper over numpy's
counter-based Philox generator, so every sample sequence is reproducible
bit-for-bit across runs and platforms given (seed, stream).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    # Standard splitmix64 finalizer; used only for deriving substream ids.
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


@dataclass(frozen=True)
class Rng:
    """Counter-based random stream identified by (seed, stream).

    Same (seed, stream) always replays the identical sequence; distinct
    streams are statistically independent (Philox keyed on both words).
    """

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed & _MASK64, self.stream & _MASK64], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def derive(self, k: int) -> "Rng":
        """Child stream k; children of distinct (stream, k) never collide in practice."""
        return Rng(self.seed, _splitmix64(_splitmix64(self.stream) ^ (k & _MASK64)))


def gaussian(rng: Rng, shape: Sequence[int]) -> np.ndarray:
    """I.i.d. standard normal tensor of the given shape (float64)."""
    shape = tuple(int(s) for s in shape)
    if len(shape) == 0:
        raise ValueError("gaussian: shape must have at least one dimension")
    if any(s <= 0 for s in shape):
        raise ValueError(f"gaussian: shape entries must be positive, got {shape}")
    return rng.generator().standard_normal(shape, dtype=np.float64)


def uniform_unit_variance(rng: Rng, shape: Sequence[int]) -> np.ndarray:
    """I.i.d. uniform on [-sqrt(3), sqrt(3)]: zero mean, unit variance."""
    shape = tuple(int(s) for s in shape)
    if len(shape) == 0 or any(s <= 0 for s in shape):
        raise ValueError(f"uniform_unit_variance: bad shape {shape}")
    r = np.sqrt(3.0)
    return rng.generator().uniform(-r, r, size=shape).astype(np.float64, copy=False)


def haar_orthogonal(rng: Rng, dim: int) -> np.ndarray:
    """Haar-distributed orthogonal matrix via sign-corrected QR.

    Plain QR of a Gaussian matrix is not Haar (the R-factor sign convention
    biases it); absorbing the sign of diag(R) into the columns of Q fixes
    the distribution.
    """
    if dim < 1:
        raise ValueError("haar_orthogonal: dim must be >= 1")
    g = gaussian(rng, (dim, dim))
    q, r = np.linalg.qr(g)
    d = np.diagonal(r)
    signs = np.where(d >= 0.0, 1.0, -1.0)
    return q * signs[np.newaxis, :]


def random_permutation(rng: Rng, dim: int) -> np.ndarray:
    """Uniformly random permutation of [0, dim) (Fisher-Yates)."""
    if dim < 1:
        raise ValueError("random_permutation: dim must be >= 1")
    return rng.generator().permutation(dim)


def skew3(params: np.ndarray) -> np.ndarray:
    """3x3 skew-symmetric matrix from its 3 free parameters (a, b, c).

    Layout: [[0, -c, b], [c, 0, -a], [-b, a, 0]], so exp(-t * skew3([0,0,c]))
    rotates the xy-plane by angle t*c.
    """
    a, b, c = (float(v) for v in np.asarray(params, dtype=np.float64))
    return np.array([[0.0, -c, b], [c, 0.0, -a], [-b, a, 0.0]])


def skew_exp(a_mat: np.ndarray, t: float) -> np.ndarray:
    """exp(-t*A) for a 3x3 skew-symmetric A, via the closed Rodrigues form.

    Result is orthogonal with determinant +1 to machine precision.
    """
    a_mat = np.asarray(a_mat, dtype=np.float64)
    if a_mat.shape != (3, 3):
        raise ValueError("skew_exp: A must be 3x3")
    if np.max(np.abs(a_mat + a_mat.T)) != 0.0:
        raise ValueError("skew_exp: A must be exactly skew-symmetric")
    s = -t * a_mat
    theta = np.sqrt(s[2, 1] ** 2 + s[0, 2] ** 2 + s[1, 0] ** 2)
    if theta < 1e-4:
        # Taylor forms keep full precision where sin/cos would cancel.
        c1 = 1.0 - theta**2 / 6.0 + theta**4 / 120.0
        c2 = 0.5 - theta**2 / 24.0 + theta**4 / 720.0
    else:
        c1 = np.sin(theta) / theta
        c2 = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + c1 * s + c2 * (s @ s)


class SolveError(RuntimeError):
    """Raised when a PSD solve cannot meet its residual contract."""


# Jitter ladder relative to trace(G)/dim; kernel Grams from deep recursions
# are routinely near-singular, so the ladder escalates by decades.
JITTER_LADDER = tuple(10.0**e for e in range(-12, -3))
PSD_RESIDUAL_TOL = 1e-10


def psd_solve(g_mat: np.ndarray, b_mat: np.ndarray) -> tuple[np.ndarray, float]:
    """Solve (G + eps*I) X = B with the smallest ladder jitter that works.

    A rung is accepted only if Cholesky succeeds *and* the max-norm relative
    residual is within ``PSD_RESIDUAL_TOL`` (after at most two refinement
    sweeps); otherwise the jitter escalates.  Returns (X, eps_used).
    """
    g_mat = np.asarray(g_mat, dtype=np.float64)
    b = np.asarray(b_mat, dtype=np.float64)
    if g_mat.ndim != 2 or g_mat.shape[0] != g_mat.shape[1]:
        raise ValueError("psd_solve: G must be square")
    if b.shape[0] != g_mat.shape[0]:
        raise ValueError("psd_solve: B row count must match G dimension")
    dim = g_mat.shape[0]
    scale = float(np.trace(g_mat)) / dim
    b_norm = np.max(np.abs(b))
    if b_norm == 0.0:
        return np.zeros_like(b), JITTER_LADDER[0] * scale
    eps = 0.0
    for rung in JITTER_LADDER:
        eps = rung * scale
        g_eps = g_mat + eps * np.eye(dim)
        try:
            cho = scipy.linalg.cho_factor(g_eps, lower=True, check_finite=False)
        except scipy.linalg.LinAlgError:
            continue
        x = scipy.linalg.cho_solve(cho, b, check_finite=False)
        for _ in range(3):
            resid = g_eps @ x - b
            if np.max(np.abs(resid)) / b_norm <= PSD_RESIDUAL_TOL:
                return x, eps
            x = x - scipy.linalg.cho_solve(cho, resid, check_finite=False)
    raise SolveError(
        f"psd_solve: no ladder rung met the residual bound for dim={dim} "
        f"(final eps={eps:.3e})"
    )


class PowerIterationError(RuntimeError):
    def __init__(self, msg: str, last_estimate: float):
        super().__init__(msg)
        self.last_estimate = last_estimate


def top_eigenvalue(g_mat: np.ndarray, tol: float = 1e-6, max_iter: int = 10_000) -> float:
    """Largest eigenvalue of a symmetric PSD matrix by power iteration.

    Deterministic seeded start vector; converged when the residual
    ||G v - lam v|| <= tol * lam, which certifies |lam - lam_max| <= tol*lam
    for PSD G (power iterates approach the top eigenvector).
    """
    g_mat = np.asarray(g_mat, dtype=np.float64)
    dim = g_mat.shape[0]
    if np.all(g_mat == 0.0):
        raise ValueError("top_eigenvalue: matrix is zero")
    v = gaussian(Rng(0x7051, 0xE16), (dim,))
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = g_mat @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            # Start vector fell in the kernel; nudge deterministically.
            v = v + 1.0 / dim
            v /= np.linalg.norm(v)
            continue
        lam = float(v @ w)
        if np.linalg.norm(w - lam * v) <= tol * abs(lam):
            return lam
        v = w / norm
    raise PowerIterationError(
        f"top_eigenvalue: no convergence after {max_iter} iterations", lam
    )


@dataclass
class SegmentFit:
    """One straight-line fit in (log m, log v) space."""

    exponent: float  # negated slope, so decay v ~ m^-exponent gives exponent > 0
    intercept: float
    residual: float  # mean squared log-space error
    m_lo: float
    m_hi: float


@dataclass
class ScalingFit:
    """Piecewise power-law fit of a positive metric against sample count."""

    segments: list[SegmentFit] = field(default_factory=list)
    breakpoint: float | None = None  # largest sample count in the first segment
    split_index: int | None = None

    @property
    def exponent(self) -> float:
        return self.segments[0].exponent

    @property
    def exponents(self) -> tuple[float, ...]:
        return tuple(s.exponent for s in self.segments)

    @property
    def total_residual(self) -> float:
        return float(sum(s.residual for s in self.segments))

    @property
    def exponent_gain(self) -> float:
        """Second-segment exponent minus first (0 for single-segment fits)."""
        if len(self.segments) < 2:
            return 0.0
        return self.segments[1].exponent - self.segments[0].exponent


def _line_fit(logm: np.ndarray, logv: np.ndarray) -> tuple[float, float, float]:
    slope, intercept = np.polyfit(logm, logv, 1)
    resid = float(np.mean((logv - (slope * logm + intercept)) ** 2))
    return float(slope), float(intercept), resid


def fit_power_law(
    points: Sequence[tuple[float, float]],
    segments: int = 1,
    split_index: int | None = None,
) -> ScalingFit:
    """Least-squares power-law fit(s) in log-log space.

    ``segments=2`` scans every admissible breakpoint (>= 2 points per side)
    for the minimum total residual; pass ``split_index`` to fix the split
    instead (first ``split_index`` points form segment one), which reproduces
    a fixed first-k/last-k fitting protocol exactly.
    """
    pts = sorted((float(m), float(v)) for m, v in points)
    if any(m <= 0 or v <= 0 for m, v in pts):
        raise ValueError("fit_power_law: sample counts and values must be positive")
    if segments not in (1, 2):
        raise ValueError("fit_power_law: segments must be 1 or 2")
    if len(pts) < 2 * segments:
        raise ValueError(
            f"fit_power_law: need >= {2 * segments} points for {segments} segment(s)"
        )
    logm = np.log(np.array([m for m, _ in pts]))
    logv = np.log(np.array([v for _, v in pts]))

    def seg(lo: int, hi: int) -> SegmentFit:
        slope, intercept, resid = _line_fit(logm[lo:hi], logv[lo:hi])
        return SegmentFit(-slope, intercept, resid, pts[lo][0], pts[hi - 1][0])

    if segments == 1:
        return ScalingFit(segments=[seg(0, len(pts))])

    if split_index is not None:
        if not 2 <= split_index <= len(pts) - 2:
            raise ValueError("fit_power_law: split_index leaves a side too short")
        candidates = [split_index]
    else:
        candidates = list(range(2, len(pts) - 1))
    best: ScalingFit | None = None
    best_resid = np.inf
    for k in candidates:
        fit = ScalingFit(
            segments=[seg(0, k), seg(k, len(pts))],
            breakpoint=pts[k - 1][0],
            split_index=k,
        )
        # Total of per-side SSE, not mean, so the scan is size-fair.
        sse = fit.segments[0].residual * k + fit.segments[1].residual * (len(pts) - k)
        if sse < best_resid:
            best_resid = sse
            best = fit
    assert best is not None
    return best
