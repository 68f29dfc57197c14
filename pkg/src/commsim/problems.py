"""Objective families for the simulator and their derived constants.

Three problem families are provided:

* :class:`QuadraticEnsemble`: n per-worker quadratics with symmetric (not
  necessarily PSD) matrices. The benchmark generator draws them as scalar
  multiples of one shared base matrix, which the ensemble exploits for
  fast batched gradients.
* :class:`MatrixFactorizationProblem`: the two-layer linear autoencoder
  objective on synthetic sample rows, with an identity-reconstruction
  regularizer.
* :class:`ChainProblem`: the classical nonconvex chain construction used
  as a hard test instance; exposes the raw chain function and the
  progress measure alongside a smoothness-scaled wrapper.

All evaluation operations are pure; ensembles are immutable after
construction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

SYMMETRY_TOL = 1e-12

# Recorded constants of the chain construction.
CHAIN_DELTA0 = 12.0
CHAIN_SMOOTHNESS = 152.0
CHAIN_GRAD_INF = 23.0


class ProblemError(ValueError):
    """Invalid problem parameters or shapes."""


class SpectralNormError(RuntimeError):
    """Power iteration failed to converge; carries the last residual gap."""

    def __init__(self, message, gap):
        super().__init__(f"{message} (last residual gap {gap:.3e})")
        self.gap = gap


def spectral_norm(matrix: np.ndarray, tol: float = 1e-10,
                  max_iters: int = 10_000) -> float:
    """Largest absolute eigenvalue of a symmetric matrix.

    Krylov-accelerated power iteration: repeated matrix powers of a fixed
    seeded start vector build an orthonormal basis (full
    reorthogonalization), and the extreme eigenvalue of the projected
    tridiagonal matrix is tracked until both its residual bound and its
    change between checks fall under ``tol``. The basis is exact once it
    spans the whole space, so for dimensions below ``max_iters`` the
    iteration cannot stall; sign-ambiguous spectra need no special
    handling because both spectrum ends are captured.
    """
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ProblemError("matrix must be square")
    if not np.all(np.isfinite(matrix)):
        raise ProblemError("matrix must be finite")
    if np.max(np.abs(matrix - matrix.T)) > SYMMETRY_TOL * max(1.0, np.max(np.abs(matrix))):
        raise ProblemError("matrix must be symmetric")
    d = matrix.shape[0]
    if d == 1:
        return abs(float(matrix[0, 0]))
    if np.max(np.abs(matrix)) == 0.0:
        return 0.0

    rng = np.random.default_rng(0x5EC7)  # fixed stream keeps results deterministic
    steps = min(d, max_iters)
    basis = np.empty((steps, d))
    diag = np.empty(steps)
    offdiag = np.empty(steps)
    v = rng.standard_normal(d)
    basis[0] = v / np.linalg.norm(v)
    resid_tol = math.sqrt(tol)
    check_at = 16
    previous = None
    theta = 0.0
    resid = np.inf
    k = 0
    while k < steps:
        w = matrix @ basis[k]
        diag[k] = float(basis[k] @ w)
        w -= basis[: k + 1].T @ (basis[: k + 1] @ w)
        w -= basis[: k + 1].T @ (basis[: k + 1] @ w)  # second pass for stability
        beta = float(np.linalg.norm(w))
        offdiag[k] = beta
        exhausted = beta <= 1e-14 * max(abs(diag[k]), 1.0)
        k += 1
        if k >= check_at or exhausted or k == steps:
            theta, resid = _extreme_ritz(diag[:k], offdiag[:k])
            small_resid = resid <= resid_tol * max(abs(theta), 1e-300)
            stable = (previous is not None
                      and abs(theta - previous) <= tol * max(abs(theta), 1e-300))
            if exhausted or k == d or (small_resid and stable):
                return abs(theta)
            previous = theta
            check_at = min(2 * check_at, steps)
        if k < steps:
            basis[k] = w / beta
    raise SpectralNormError("power iteration did not converge", resid)


def _extreme_ritz(diag, offdiag):
    """Largest-|.| eigenvalue of the projected tridiagonal matrix and the
    residual bound of its Ritz pair."""
    k = diag.size
    t = np.diag(diag)
    if k > 1:
        idx = np.arange(k - 1)
        t[idx, idx + 1] = offdiag[:-1]
        t[idx + 1, idx] = offdiag[:-1]
    evals, evecs = np.linalg.eigh(t)
    pick = int(np.argmax(np.abs(evals)))
    resid = float(offdiag[k - 1] * abs(evecs[-1, pick]))
    return float(evals[pick]), resid


@dataclass(frozen=True)
class ProblemConstants:
    """Smoothness and similarity constants of a quadratic ensemble.

    ``l_smooth`` is the spectral norm of the mean matrix; ``l_workers``
    the per-worker norms; ``l_hetero`` and ``l_avg`` are the two
    coefficients of the averaged-gradient-difference bound (the first
    multiplies the mean squared per-worker shift, the second the squared
    mean shift); ``hessian_spread`` lists the per-worker deviations from
    the mean matrix.
    """

    l_smooth: float
    l_workers: np.ndarray
    l_max: float
    l_rms: float
    l_hetero: float
    l_avg: float
    hessian_spread: np.ndarray
    sampled: bool = False  # True when the values are sampled lower estimates


class QuadraticEnsemble:
    """n worker quadratics f_i(x) = x'A_i x / 2 + b_i'x + c_i.

    Holds either dense per-worker matrices or a factored form
    A_i = coeffs[i] * base with one shared symmetric base, which the
    generator produces and the gradient paths exploit.
    """

    def __init__(self, b, c, dense=None, base=None, coeffs=None):
        self.b = np.asarray(b, dtype=float)
        self.c = np.asarray(c, dtype=float)
        if self.b.ndim != 2:
            raise ProblemError("b must be an (n, d) array")
        self.n, self.dim = self.b.shape
        if self.c.shape != (self.n,):
            raise ProblemError("c must have one entry per worker")
        if (dense is None) == (base is None):
            raise ProblemError("provide exactly one of dense or (base, coeffs)")
        if dense is not None:
            dense = np.asarray(dense, dtype=float)
            if dense.shape != (self.n, self.dim, self.dim):
                raise ProblemError("dense matrices must be (n, d, d)")
            for i in range(self.n):
                _check_symmetric(dense[i])
            self._dense = dense
            self._base = None
            self._coeffs = None
            self._mean = dense.mean(axis=0)
        else:
            base = np.asarray(base, dtype=float)
            coeffs = np.asarray(coeffs, dtype=float)
            if base.shape != (self.dim, self.dim):
                raise ProblemError("base must be (d, d)")
            if coeffs.shape != (self.n,):
                raise ProblemError("coeffs must have one entry per worker")
            _check_symmetric(base)
            self._dense = None
            self._base = base
            self._coeffs = coeffs
            self._mean_coeff = float(coeffs.mean())
            self._mean = self._mean_coeff * base
            self._base_identity = bool(np.array_equal(base, np.eye(self.dim)))
        self.b_mean = self.b.mean(axis=0)
        self.c_mean = float(self.c.mean())

    @classmethod
    def from_dense(cls, matrices, b, c):
        return cls(b=b, c=c, dense=matrices)

    @classmethod
    def from_scaled(cls, base, coeffs, b, c):
        return cls(b=b, c=c, base=base, coeffs=coeffs)

    @property
    def factored(self) -> bool:
        return self._base is not None

    @property
    def mean_matrix(self) -> np.ndarray:
        return self._mean

    def matrix(self, i: int) -> np.ndarray:
        if self._dense is not None:
            return self._dense[i]
        return self._coeffs[i] * self._base

    def worker_value(self, i: int, x: np.ndarray) -> float:
        ax = self.matrix(i) @ x if not self.factored else self._coeffs[i] * (self._base @ x)
        return 0.5 * float(x @ ax) + float(self.b[i] @ x) + float(self.c[i])

    def worker_grad(self, i: int, x: np.ndarray) -> np.ndarray:
        if self.factored:
            return self._coeffs[i] * (self._base @ x) + self.b[i]
        return self._dense[i] @ x + self.b[i]

    def worker_grads(self, points: np.ndarray) -> np.ndarray:
        """Per-worker gradients, worker i evaluated at points[i]."""
        points = np.asarray(points, dtype=float)
        if self.factored:
            if self._base_identity:
                return self._coeffs[:, None] * points + self.b
            return self._coeffs[:, None] * (points @ self._base.T) + self.b
        out = np.empty_like(points)
        for i in range(self.n):
            out[i] = self._dense[i] @ points[i] + self.b[i]
        return out

    def worker_grads_at_point(self, x: np.ndarray) -> np.ndarray:
        """All worker gradients evaluated at one shared point."""
        if self.factored:
            bx = x if self._base_identity else self._base @ x
            return self._coeffs[:, None] * bx[None, :] + self.b
        out = np.empty((self.n, self.dim))
        for i in range(self.n):
            out[i] = self._dense[i] @ x + self.b[i]
        return out

    def mean_grad_at(self, points: np.ndarray) -> np.ndarray:
        """Average of worker gradients with worker i at points[i]."""
        if self.factored:
            weighted = (self._coeffs @ points) / self.n
            if self._base_identity:
                return weighted + self.b_mean
            return self._base @ weighted + self.b_mean
        return self.worker_grads(points).mean(axis=0)

    def _mean_times(self, x: np.ndarray) -> np.ndarray:
        if self.factored and self._base_identity:
            return self._mean_coeff * x
        return self._mean @ x

    def full_value(self, x: np.ndarray) -> float:
        return 0.5 * float(x @ self._mean_times(x)) + float(self.b_mean @ x) + self.c_mean

    def full_grad(self, x: np.ndarray) -> np.ndarray:
        return self._mean_times(x) + self.b_mean

    def full_value_and_grad(self, x: np.ndarray):
        ax = self._mean_times(x)
        value = 0.5 * float(x @ ax) + float(self.b_mean @ x) + self.c_mean
        return value, ax + self.b_mean

    def default_x0(self) -> np.ndarray:
        return np.zeros(self.dim)


def _check_symmetric(m):
    scale = max(1.0, float(np.max(np.abs(m))))
    if np.max(np.abs(m - m.T)) > SYMMETRY_TOL * scale:
        raise ProblemError("worker matrix is not symmetric")


def tridiagonal_base(dim: int) -> np.ndarray:
    """The scaled second-difference matrix used by the benchmark generator."""
    base = np.zeros((dim, dim))
    np.fill_diagonal(base, 2.0)
    idx = np.arange(dim - 1)
    base[idx, idx + 1] = -1.0
    base[idx + 1, idx] = -1.0
    return 0.25 * base


def tridiagonal_norm(dim: int) -> float:
    """Closed-form spectral norm of :func:`tridiagonal_base`."""
    return (1.0 + math.cos(math.pi / (dim + 1))) / 2.0


def _truncated_normal(sigma, bound, size, rng):
    if sigma == 0.0:
        return np.zeros(size)
    out = rng.normal(0.0, sigma, size)
    # Rejection keeps the distribution exact at the stated bounds.
    bad = np.abs(out) > bound
    while np.any(bad):
        out[bad] = rng.normal(0.0, sigma, int(bad.sum()))
        bad = np.abs(out) > bound
    return out


def generate_het_quadratic(n: int, d: int, v: float, sigma: float, v0: float,
                           rng: np.random.Generator, base: str = "tridiag",
                           b_scale: float = 1.0) -> QuadraticEnsemble:
    """Heterogeneous quadratic benchmark ensemble.

    A_i = (v + xi_i) * X with xi_i drawn from a centered normal with
    standard deviation ``sigma`` truncated to [-v0, v0]; the base X is the
    scaled tridiagonal second-difference matrix (or the identity). Linear
    terms are standard normal scaled by ``b_scale``; constant terms are
    zero.
    """
    if d < 2:
        raise ProblemError("d must be at least 2")
    if n < 1:
        raise ProblemError("n must be positive")
    if sigma < 0 or v0 < 0:
        raise ProblemError("sigma and v0 must be nonnegative")
    if base == "tridiag":
        base_matrix = tridiagonal_base(d)
    elif base == "identity":
        base_matrix = np.eye(d)
    else:
        raise ProblemError(f"unknown base kind {base!r}")
    xi = _truncated_normal(sigma, v0, n, rng)
    coeffs = v + xi
    b = rng.standard_normal((n, d)) * b_scale
    return QuadraticEnsemble.from_scaled(base_matrix, coeffs, b, np.zeros(n))


def quad_grad(ens: QuadraticEnsemble, i: int, x: np.ndarray) -> np.ndarray:
    """Gradient of worker i's quadratic at x."""
    return ens.worker_grad(i, np.asarray(x, dtype=float))


def quad_constants(ens: QuadraticEnsemble, tol: float = 1e-10) -> ProblemConstants:
    """Smoothness/similarity constants of a quadratic ensemble.

    Uses the tighter homogeneous values (zero heterogeneity coefficient,
    mean-matrix norm as the averaged-shift coefficient) when all worker
    matrices coincide.
    """
    mean = ens.mean_matrix
    if ens.factored:
        base_norm = spectral_norm(ens._base, tol)
        coeffs = ens._coeffs
        l_workers = np.abs(coeffs) * base_norm
        spread = np.abs(coeffs - coeffs.mean()) * base_norm
        l_smooth = abs(float(coeffs.mean())) * base_norm
    else:
        l_workers = np.array([spectral_norm(ens.matrix(i), tol) for i in range(ens.n)])
        spread = np.array([spectral_norm(ens.matrix(i) - mean, tol) for i in range(ens.n)])
        l_smooth = spectral_norm(mean, tol)
    homogeneous = float(spread.max()) <= SYMMETRY_TOL * max(1.0, float(l_workers.max()))
    if homogeneous:
        l_hetero = 0.0
        l_avg = l_smooth
    else:
        l_hetero = math.sqrt(2.0) * float(spread.max())
        l_avg = math.sqrt(2.0) * float(l_workers.mean())
    return ProblemConstants(
        l_smooth=l_smooth,
        l_workers=l_workers,
        l_max=float(l_workers.max()),
        l_rms=math.sqrt(float(np.mean(l_workers ** 2))),
        l_hetero=l_hetero,
        l_avg=l_avg,
        hessian_spread=spread,
    )


def verify_functional_inequality(problem, l_hetero: float, l_avg: float,
                                 num_draws: int, radius: float,
                                 rng: np.random.Generator) -> float:
    """Max observed ratio of the averaged-gradient bound over random draws.

    Samples a center x and per-worker shifts u_i componentwise uniform in
    [-radius, radius], compares the squared norm of the averaged gradient
    difference against l_hetero^2 * mean||u_i||^2 + l_avg^2 * ||mean u||^2
    and returns the largest ratio. Draws with a degenerate bound (all
    shifts zero) are skipped. A value <= 1 means no observed violation.
    """
    if num_draws < 1:
        raise ProblemError("num_draws must be positive")
    n, d = problem.n, problem.dim
    worst = 0.0
    for _ in range(num_draws):
        x = rng.uniform(-radius, radius, d)
        shifts = rng.uniform(-radius, radius, (n, d))
        mean_shift = shifts.mean(axis=0)
        rhs = (l_hetero ** 2) * float(np.mean(np.sum(shifts ** 2, axis=1)))
        rhs += (l_avg ** 2) * float(mean_shift @ mean_shift)
        if rhs == 0.0:
            continue
        lhs_vec = problem.mean_grad_at(x[None, :] + shifts) - problem.full_grad(x)
        ratio = float(lhs_vec @ lhs_vec) / rhs
        worst = max(worst, ratio)
    return worst


class MatrixFactorizationProblem:
    """Two-layer linear autoencoder objective on synthetic sample rows.

    Parameters are x = vec(D) ++ vec(E) (row-major) with D of shape
    (d1, d2) and E of shape (d2, d1). The objective averages the squared
    reconstruction error over the sample rows and adds a Frobenius penalty
    pulling D @ E toward the identity. Sample rows are split evenly across
    workers; the penalty is shared by every worker so the worker average
    reproduces the full objective.
    """

    def __init__(self, samples, lam: float, workers: int = 1, d2: Optional[int] = None):
        self.samples = np.asarray(samples, dtype=float)
        if self.samples.ndim != 2 or self.samples.shape[0] < 1:
            raise ProblemError("samples must be a nonempty (m, d1) matrix")
        if lam < 0:
            raise ProblemError("regularizer must be nonnegative")
        self.m, self.d1 = self.samples.shape
        self.d2 = int(d2) if d2 is not None else max(1, self.d1 // 4)
        self.lam = float(lam)
        if workers < 1 or self.m % workers != 0:
            raise ProblemError("workers must divide the sample count")
        self.n = int(workers)
        self.dim = 2 * self.d1 * self.d2
        self._shards = np.split(np.arange(self.m), self.n)
        # Gram matrices let gradient evaluation avoid touching rows twice.
        self._gram = self.samples.T @ self.samples
        self._shard_gram = [self.samples[s].T @ self.samples[s] for s in self._shards]

    def _unpack(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ProblemError(f"parameter vector must have length {self.dim}")
        split = self.d1 * self.d2
        dec = x[:split].reshape(self.d1, self.d2)
        enc = x[split:].reshape(self.d2, self.d1)
        return dec, enc

    def _value_grad(self, x, gram, rows):
        dec, enc = self._unpack(x)
        prod = dec @ enc
        resid = prod - np.eye(self.d1)
        m_rows = rows.shape[0]
        errors = rows @ resid.T
        value = float(np.sum(errors ** 2)) / m_rows
        value += 0.5 * self.lam * float(np.sum(resid ** 2))
        grad_prod = resid @ ((2.0 / m_rows) * gram) + self.lam * resid
        grad_dec = grad_prod @ enc.T
        grad_enc = dec.T @ grad_prod
        return value, np.concatenate([grad_dec.ravel(), grad_enc.ravel()])

    def value_and_grad(self, x):
        return self._value_grad(x, self._gram, self.samples)

    full_value_and_grad = value_and_grad

    def full_value(self, x) -> float:
        return self.value_and_grad(x)[0]

    def full_grad(self, x) -> np.ndarray:
        return self.value_and_grad(x)[1]

    def worker_grad(self, i, x) -> np.ndarray:
        rows = self.samples[self._shards[i]]
        return self._value_grad(x, self._shard_gram[i], rows)[1]

    def worker_grads(self, points) -> np.ndarray:
        out = np.empty((self.n, self.dim))
        for i in range(self.n):
            out[i] = self.worker_grad(i, points[i])
        return out

    def worker_grads_at_point(self, x) -> np.ndarray:
        return self.worker_grads(np.broadcast_to(x, (self.n, self.dim)))

    def mean_grad_at(self, points) -> np.ndarray:
        return self.worker_grads(points).mean(axis=0)

    def default_x0(self, seed: int = 0) -> np.ndarray:
        rng = np.random.default_rng(seed)
        return rng.standard_normal(self.dim) / math.sqrt(self.d1)


def matfac_eval(problem: MatrixFactorizationProblem, x):
    """Objective value and analytic gradient of the autoencoder problem."""
    return problem.value_and_grad(x)


def synthetic_matfac(d1: int, d2: int, m: int, lam: float,
                     rng: np.random.Generator, workers: int = 1) -> MatrixFactorizationProblem:
    """Autoencoder problem fed with standard-normal synthetic sample rows."""
    return MatrixFactorizationProblem(rng.standard_normal((m, d1)), lam,
                                      workers=workers, d2=d2)


# Chain construction -----------------------------------------------------

_SQRT_E = math.sqrt(math.e)


def _bump(t):
    """Smooth switch: 0 for t <= 1/2, exp(1 - 1/(2t-1)^2) above."""
    t = np.asarray(t, dtype=float)
    out = np.zeros(t.shape)
    hot = t > 0.5
    if np.any(hot):
        th = t[hot]
        out[hot] = np.exp(1.0 - 1.0 / (2.0 * th - 1.0) ** 2)
    return out


def _bump_deriv(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros(t.shape)
    hot = t > 0.5
    if np.any(hot):
        th = t[hot]
        out[hot] = np.exp(1.0 - 1.0 / (2.0 * th - 1.0) ** 2) * 4.0 / (2.0 * th - 1.0) ** 3
    return out


def _gauss_tail(t):
    """sqrt(e) * integral of exp(-s^2/2) from -inf to t, via the error function."""
    t = np.asarray(t, dtype=float)
    return _SQRT_E * math.sqrt(2.0 * math.pi) * 0.5 * (1.0 + _erf_vec(t / math.sqrt(2.0)))


def _gauss_tail_deriv(t):
    t = np.asarray(t, dtype=float)
    return _SQRT_E * np.exp(-0.5 * t ** 2)


_erf_vec = np.vectorize(math.erf, otypes=[float])


def chain_base_value(x: np.ndarray) -> float:
    """The raw chain function of length T = len(x)."""
    x = np.asarray(x, dtype=float)
    prev = np.concatenate(([1.0], x[:-1]))
    terms = _bump(-prev) * _gauss_tail(-x) - _bump(prev) * _gauss_tail(x)
    return float(np.sum(terms))


def chain_base_grad(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    prev = np.concatenate(([1.0], x[:-1]))
    grad = -_bump(-prev) * _gauss_tail_deriv(-x) - _bump(prev) * _gauss_tail_deriv(x)
    # Each coordinate j < T also feeds the (j+1)-th link of the chain.
    grad[:-1] += -_bump_deriv(-x[:-1]) * _gauss_tail(-x[1:]) \
        - _bump_deriv(x[:-1]) * _gauss_tail(x[1:])
    return grad


def prog(x: np.ndarray) -> int:
    """Largest 1-based index of a nonzero coordinate; 0 for the zero vector."""
    nz = np.nonzero(np.asarray(x))[0]
    return int(nz[-1]) + 1 if nz.size else 0


class ChainProblem:
    """Smoothness-scaled chain instance: f(x) = (L lam^2 / l1) F(x / lam).

    ``l1`` is the recorded smoothness of the raw chain function, so f is
    L-smooth by construction. Workers are homogeneous copies.
    """

    def __init__(self, length: int, lam: float = 1.0, l_target: float = CHAIN_SMOOTHNESS,
                 workers: int = 1):
        if length < 1:
            raise ProblemError("chain length must be positive")
        if lam <= 0 or l_target <= 0:
            raise ProblemError("scale and smoothness target must be positive")
        self.length = int(length)
        self.dim = int(length)
        self.lam = float(lam)
        self.l_target = float(l_target)
        self.n = int(workers)
        self._value_scale = self.l_target * self.lam ** 2 / CHAIN_SMOOTHNESS

    def full_value(self, x) -> float:
        return self._value_scale * chain_base_value(np.asarray(x) / self.lam)

    def full_grad(self, x) -> np.ndarray:
        return (self._value_scale / self.lam) * chain_base_grad(np.asarray(x) / self.lam)

    def full_value_and_grad(self, x):
        return self.full_value(x), self.full_grad(x)

    def worker_grad(self, i, x) -> np.ndarray:
        return self.full_grad(x)

    def worker_grads(self, points) -> np.ndarray:
        return np.stack([self.full_grad(points[i]) for i in range(self.n)])

    def worker_grads_at_point(self, x) -> np.ndarray:
        grad = self.full_grad(x)
        return np.tile(grad, (self.n, 1))

    def mean_grad_at(self, points) -> np.ndarray:
        return self.worker_grads(points).mean(axis=0)

    def default_x0(self) -> np.ndarray:
        return np.zeros(self.dim)


def chain_eval(problem: ChainProblem, x):
    """Value and gradient of the scaled chain instance."""
    return problem.full_value(x), problem.full_grad(x)


def _fd_hessian(grad, x, h):
    d = x.size
    hess = np.empty((d, d))
    for j in range(d):
        up = x.copy()
        dn = x.copy()
        up[j] += h
        dn[j] -= h
        hess[:, j] = (grad(up) - grad(dn)) / (2.0 * h)
    return 0.5 * (hess + hess.T)


def estimate_hessian_spread(problem, num_points: int, radius: float,
                            rng: np.random.Generator,
                            step: float = 1e-5) -> ProblemConstants:
    """Sampled lower estimates of the similarity constants for a problem
    without closed-form curvature.

    Finite-difference Hessians of each worker objective are probed at
    random points; the true constants involve a supremum over all points,
    so the returned values are lower estimates and the result is flagged
    ``sampled``. Only feasible at small dimension.
    """
    if num_points < 1:
        raise ProblemError("num_points must be positive")
    n, d = problem.n, problem.dim
    l_workers = np.zeros(n)
    spread = np.zeros(n)
    l_smooth = 0.0
    for _ in range(num_points):
        x = rng.uniform(-radius, radius, d)
        hessians = np.stack([
            _fd_hessian(lambda y, i=i: problem.worker_grad(i, y), x, step)
            for i in range(n)])
        mean_h = hessians.mean(axis=0)
        l_smooth = max(l_smooth, spectral_norm(mean_h, tol=1e-8))
        for i in range(n):
            l_workers[i] = max(l_workers[i], spectral_norm(hessians[i], tol=1e-8))
            spread[i] = max(spread[i], spectral_norm(hessians[i] - mean_h, tol=1e-8))
    return ProblemConstants(
        l_smooth=l_smooth,
        l_workers=l_workers,
        l_max=float(l_workers.max()),
        l_rms=math.sqrt(float(np.mean(l_workers ** 2))),
        l_hetero=math.sqrt(2.0) * float(spread.max()),
        l_avg=math.sqrt(2.0) * float(l_workers.mean()),
        hessian_spread=spread,
        sampled=True,
    )


# Serialization ----------------------------------------------------------

def save_ensemble(ens: QuadraticEnsemble, path) -> None:
    """Write an ensemble to a JSON file (schema documented in the README)."""
    payload = {
        "n": ens.n,
        "d": ens.dim,
        "b": ens.b.tolist(),
        "c": ens.c.tolist(),
    }
    if ens.factored:
        payload["representation"] = "scaled"
        payload["base"] = ens._base.tolist()
        payload["coeffs"] = ens._coeffs.tolist()
    else:
        payload["representation"] = "dense"
        payload["matrices"] = ens._dense.tolist()
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_ensemble(path) -> QuadraticEnsemble:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("representation") == "scaled":
        return QuadraticEnsemble.from_scaled(
            np.array(payload["base"]), np.array(payload["coeffs"]),
            np.array(payload["b"]), np.array(payload["c"]))
    return QuadraticEnsemble.from_dense(
        np.array(payload["matrices"]), np.array(payload["b"]), np.array(payload["c"]))
