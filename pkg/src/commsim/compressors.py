"""Lossy compression operators for simulated server/worker message passing.

Every operator returns a :class:`SparseMessage` carrying an explicit
coordinate cost, so that communication accounting never has to re-derive
message sizes from index sets. Randomized operators draw from a caller
supplied ``numpy.random.Generator`` and are pure given (input, stream
state): the same stream state and input produce bit-identical messages.

Supported operator families:

* ``rand_k`` / ``same_rand_k``: keep k uniformly sampled coordinates,
  rescaled by d/k (unbiased).
* ``perm_k``: a correlated collection that partitions the coordinates
  across n workers via one shared random permutation, rescaled by n.
  Restricted to d >= n with n | d; other shapes are rejected.
* ``top_k``: keep the k largest-magnitude coordinates, unscaled (biased
  contraction). Ties break toward the lowest index.
* ``natural``: unbiased stochastic rounding of each component to one of
  the two nearest powers of two.
* ``compose``: outer operator applied to the output of the inner one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

# Variance factor of natural rounding, worst case over inputs. Recorded
# constant of the cited operator, not re-derived here.
NATURAL_OMEGA = 0.125

UNBIASED_KINDS = ("rand_k", "same_rand_k", "perm_k", "natural", "compose")
COLLECTION_MODES = ("same", "independent", "correlated")


class CompressorError(ValueError):
    """Invalid compressor parameters or unsupported input shape."""


@dataclass
class SparseMessage:
    """A compressed vector payload, treated as immutable once built.

    ``indices`` are strictly increasing coordinate indices below ``dim``;
    ``values`` holds the transmitted entries (zeros allowed); ``cost`` is
    the payload size in coordinate units. ``natural_encoded`` marks
    payloads that went through natural rounding, which a bit-level cost
    model may weight differently.
    """

    dim: int
    indices: np.ndarray
    values: np.ndarray
    cost: float
    natural_encoded: bool = False

    def densify(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.indices] = self.values
        return out

    def validate(self) -> None:
        if self.indices.shape != self.values.shape:
            raise CompressorError("indices and values length mismatch")
        if self.indices.size:
            if self.indices.min() < 0 or self.indices.max() >= self.dim:
                raise CompressorError("index out of range")
            if np.any(np.diff(self.indices) <= 0):
                raise CompressorError("indices must be strictly increasing")
        if not self.cost >= 0:
            raise CompressorError("negative cost")


@dataclass(frozen=True)
class CompressorSpec:
    """Static description of a compressor (kind, sparsity, constants).

    ``omega`` is the unbiased variance factor, ``alpha`` the contraction
    factor for biased kinds. Use the module-level constructors instead of
    instantiating directly; they validate shapes and derive the constants.
    """

    kind: str
    dim: int
    k: Optional[int] = None
    workers: Optional[int] = None
    omega: Optional[float] = None
    alpha: Optional[float] = None
    inner: Optional["CompressorSpec"] = None
    outer: Optional["CompressorSpec"] = None

    @property
    def unbiased(self) -> bool:
        return self.omega is not None

    def message_coords(self) -> int:
        """Coordinates carried by one compressed message."""
        if self.kind in ("rand_k", "same_rand_k", "top_k"):
            return int(self.k)
        if self.kind == "perm_k":
            return self.dim // int(self.workers)
        if self.kind == "natural":
            return self.dim
        if self.kind == "compose":
            return self.inner.message_coords()
        raise CompressorError(f"unknown kind {self.kind!r}")

    def involves_natural(self) -> bool:
        if self.kind == "natural":
            return True
        if self.kind == "compose":
            return self.inner.involves_natural() or self.outer.involves_natural()
        return False


def rand_k_spec(dim: int, k: int) -> CompressorSpec:
    _check_k(dim, k)
    return CompressorSpec(kind="rand_k", dim=dim, k=k, omega=dim / k - 1.0)


def same_rand_k_spec(dim: int, k: int) -> CompressorSpec:
    _check_k(dim, k)
    return CompressorSpec(kind="same_rand_k", dim=dim, k=k, omega=dim / k - 1.0)


def perm_k_spec(dim: int, workers: int) -> CompressorSpec:
    if workers < 1:
        raise CompressorError("workers must be positive")
    if dim < workers or dim % workers != 0:
        raise CompressorError(
            f"permutation sparsifier needs dim >= workers and workers | dim, "
            f"got dim={dim}, workers={workers}"
        )
    return CompressorSpec(
        kind="perm_k", dim=dim, k=dim // workers, workers=workers,
        omega=float(workers - 1),
    )


def top_k_spec(dim: int, k: int) -> CompressorSpec:
    _check_k(dim, k)
    return CompressorSpec(kind="top_k", dim=dim, k=k, alpha=k / dim)


def natural_spec(dim: int) -> CompressorSpec:
    return CompressorSpec(kind="natural", dim=dim, omega=NATURAL_OMEGA)


def compose_spec(outer: CompressorSpec, inner: CompressorSpec) -> CompressorSpec:
    if outer.dim != inner.dim:
        raise CompressorError("composed stages must share the dimension")
    omega = None
    if outer.unbiased and inner.unbiased:
        # Standard bound for independent unbiased stages.
        omega = (1.0 + outer.omega) * (1.0 + inner.omega) - 1.0
    return CompressorSpec(
        kind="compose", dim=outer.dim, inner=inner, outer=outer, omega=omega,
    )


def _check_k(dim, k):
    if not 1 <= k <= dim:
        raise CompressorError(f"k must be in [1, {dim}], got {k}")


def _check_finite(x):
    if not np.all(np.isfinite(x)):
        raise CompressorError("input vector must be finite")


_FLOYD_UPPERS: dict = {}


def _floyd_sample(dim: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """k uniform indices without replacement, O(k) draws from the stream."""
    cached = _FLOYD_UPPERS.get((dim, k))
    if cached is None:
        uppers = np.arange(dim - k + 1, dim + 1, dtype=float)
        cached = (uppers, np.arange(dim - k, dim, dtype=np.intp))
        _FLOYD_UPPERS[(dim, k)] = cached
    uppers, caps = cached
    # floor(u * (j + 1)) is uniform on [0, j]; the clip guards the
    # once-in-2^53 rounding of u * (j + 1) up to j + 1.
    draws = np.minimum((rng.random(k) * uppers).astype(np.intp), caps)
    chosen = set()
    for j, t in enumerate(draws, dim - k):
        t = int(t)
        chosen.add(j if t in chosen else t)
    return np.fromiter(sorted(chosen), dtype=np.intp, count=k)


def _rand_k_message(x: np.ndarray, k: int, rng: np.random.Generator) -> SparseMessage:
    idx = _floyd_sample(x.size, k, rng)
    return SparseMessage(dim=x.size, indices=idx, values=(x.size / k) * x[idx],
                         cost=float(k))


def apply_rand_k(x: np.ndarray, k: int, rng: np.random.Generator) -> SparseMessage:
    """Keep k random coordinates of x scaled by d/k."""
    x = np.asarray(x, dtype=float)
    _check_k(x.size, k)
    _check_finite(x)
    return _rand_k_message(x, k, rng)


def apply_top_k(x: np.ndarray, k: int) -> SparseMessage:
    """Keep the k largest-magnitude coordinates unscaled.

    Deterministic; magnitude ties resolve toward the lowest index.
    """
    x = np.asarray(x, dtype=float)
    _check_k(x.size, k)
    _check_finite(x)
    # Stable sort of -|x| keeps the lowest indices first among ties.
    order = np.argsort(-np.abs(x), kind="stable")[:k]
    idx = np.sort(order)
    return SparseMessage(dim=x.size, indices=idx, values=x[idx], cost=float(k))


def _natural_round_values(values: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Stochastic power-of-two rounding, unbiased componentwise.

    Each nonzero t goes to sign(t) * 2^floor(log2 |t|) with the unique
    probability making the expectation equal t, otherwise to the next
    power up. Exact powers of two hit the down-branch with probability
    one ((hi - |t|) / (hi - lo) == 1 exactly when |t| == lo), and zeros
    are zeroed by the sign factor, so neither needs special casing.
    """
    values = np.asarray(values, dtype=float)
    mags = np.abs(values)
    _, expo = np.frexp(mags)  # |t| = mant * 2**expo with mant in [0.5, 1)
    lo = np.ldexp(0.5, expo)
    hi = np.ldexp(1.0, expo)
    p_lo = (hi - mags) / (hi - lo)
    rounded = np.where(rng.random(values.shape) < p_lo, lo, hi)
    return np.sign(values) * rounded


def apply_natural(x: np.ndarray, rng: np.random.Generator) -> SparseMessage:
    """Quantize every component to a signed power of two, unbiasedly.

    The message is dense: all d coordinates are transmitted (cost d); a
    bit-level cost model may charge them at a reduced per-coordinate rate.
    """
    x = np.asarray(x, dtype=float)
    _check_finite(x)
    vals = _natural_round_values(x, rng)
    return SparseMessage(dim=x.size, indices=np.arange(x.size, dtype=np.intp),
                         values=vals, cost=float(x.size), natural_encoded=True)


def _perm_k_messages(x: np.ndarray, workers: int, perm: np.ndarray) -> list:
    """Partition coordinates of x across workers along a given permutation."""
    d = x.size
    q = d // workers
    blocks = np.asarray(perm).reshape(workers, q).copy()
    blocks.sort(axis=1)
    values = float(workers) * x[blocks]
    cost = float(q)
    return [SparseMessage(dim=d, indices=blocks[i], values=values[i], cost=cost)
            for i in range(workers)]


def apply_perm_k_collection(x: np.ndarray, workers: int,
                            rng: np.random.Generator) -> list:
    """One shared permutation splits x into n disjoint scaled blocks.

    Worker i receives block i of the permuted coordinates scaled by n.
    The index sets partition [0, d) and the unscaled blocks reassemble x
    exactly.
    """
    x = np.asarray(x, dtype=float)
    _check_finite(x)
    spec = perm_k_spec(x.size, workers)  # shape validation
    perm = rng.permutation(spec.dim)
    return _perm_k_messages(x, workers, perm)


def apply_compressor(spec: CompressorSpec, x: np.ndarray,
                     rng: np.random.Generator) -> SparseMessage:
    """Apply a single-operator spec (not a collection) to a dense vector."""
    x = np.asarray(x, dtype=float)
    _check_finite(x)
    return _apply_unchecked(spec, x, rng)


def _apply_unchecked(spec, x, rng) -> SparseMessage:
    """Dispatch without input validation; hot path for per-worker loops
    whose inputs were checked in bulk."""
    kind = spec.kind
    if kind in ("rand_k", "same_rand_k"):
        return _rand_k_message(x, spec.k, rng)
    if kind == "top_k":
        return apply_top_k(x, spec.k)
    if kind == "natural":
        vals = _natural_round_values(x, rng)
        return SparseMessage(dim=x.size, indices=np.arange(x.size, dtype=np.intp),
                             values=vals, cost=float(x.size), natural_encoded=True)
    if kind == "perm_k":
        raise CompressorError("perm_k only applies as a collection")
    if kind == "compose":
        mid = _apply_unchecked(spec.inner, x, rng)
        return _apply_outer(spec.outer, mid, rng)
    raise CompressorError(f"unknown kind {kind!r}")


def _apply_outer(outer: CompressorSpec, msg: SparseMessage,
                 rng: np.random.Generator) -> SparseMessage:
    if outer.kind == "natural":
        # A quantizer keeps the inner support: same indices, same cost.
        vals = _natural_round_values(msg.values, rng)
        return SparseMessage(dim=msg.dim, indices=msg.indices, values=vals,
                             cost=msg.cost, natural_encoded=True)
    out = _apply_unchecked(outer, msg.densify(), rng)
    if msg.natural_encoded:
        out.natural_encoded = True
    return out


def apply_collection(spec: CompressorSpec, mode: str, workers: int,
                     x: np.ndarray, rng: np.random.Generator) -> list:
    """Produce the n per-worker messages for one downlink round.

    ``mode`` selects how the n messages relate: ``same`` draws once and
    replicates, ``independent`` draws n times from the given stream, and
    ``correlated`` uses the shared-permutation partition (perm_k, possibly
    wrapped by an outer quantizer).
    """
    if mode not in COLLECTION_MODES:
        raise CompressorError(f"unknown collection mode {mode!r}")
    x = np.asarray(x, dtype=float)
    _check_finite(x)
    return _collection_unchecked(spec, mode, workers, x, rng)


def _collection_unchecked(spec, mode, workers, x, rng) -> list:
    base = spec.inner if spec.kind == "compose" else spec
    if x.size != spec.dim:
        raise CompressorError(f"vector has dimension {x.size}, spec {spec.dim}")
    if base.kind == "perm_k":
        if base.workers != workers:
            raise CompressorError("perm_k spec built for a different worker count")
        perm = rng.permutation(base.dim)
        msgs = _perm_k_messages(x, workers, perm)
        if spec.kind == "compose":
            if spec.outer.kind == "natural":
                # One quantization pass over the whole collection.
                rounded = _natural_round_values(
                    np.stack([m.values for m in msgs]), rng)
                msgs = [SparseMessage(dim=m.dim, indices=m.indices,
                                      values=rounded[i], cost=m.cost,
                                      natural_encoded=True)
                        for i, m in enumerate(msgs)]
            else:
                msgs = [_apply_outer(spec.outer, m, rng) for m in msgs]
        return msgs
    if mode == "same" or spec.kind == "same_rand_k":
        msg = _apply_unchecked(spec, x, rng)
        return [msg] * workers
    return [_apply_unchecked(spec, x, rng) for _ in range(workers)]


def collection_theta(spec: CompressorSpec, mode: str, workers: int) -> float:
    """Variance factor of the averaged collection output around x.

    same -> omega, independent -> omega/n, shared-permutation partition
    -> 0. An outer quantizer over the partition adds its own averaged
    quantization noise.
    """
    base = spec.inner if spec.kind == "compose" else spec
    if base.kind == "perm_k":
        theta = 0.0
        if spec.kind == "compose":
            theta += spec.outer.omega * (base.omega + 1.0) / workers
        return theta
    if spec.omega is None:
        raise CompressorError("collection factor defined for unbiased kinds only")
    if mode == "same" or spec.kind == "same_rand_k":
        return spec.omega
    if mode == "independent":
        return spec.omega / workers
    raise CompressorError(f"unsupported mode {mode!r} for kind {spec.kind!r}")


def estimate_omega(spec: CompressorSpec, x: np.ndarray, samples: int,
                   rng: np.random.Generator) -> float:
    """Monte-Carlo estimate of E||C(x) - x||^2 / ||x||^2 at a probe x."""
    x = np.asarray(x, dtype=float)
    sq = float(x @ x)
    if sq == 0.0:
        raise CompressorError("probe vector must be nonzero")
    # ||C(x) - x||^2 computed on the message support: off-support
    # coordinates contribute x_j^2 each.
    def sq_error(msg):
        kept = x[msg.indices]
        delta = msg.values - kept
        return sq + float(delta @ delta) - float(kept @ kept)

    _check_finite(x)
    acc = 0.0
    base = spec.inner if spec.kind == "compose" else spec
    if base.kind == "perm_k":
        # Members of a partition collection share one law, so every member
        # of a draw contributes one sample.
        workers = base.workers
        draws = max(1, samples // workers)
        for _ in range(draws):
            for msg in _collection_unchecked(spec, "correlated", workers, x, rng):
                acc += sq_error(msg)
        return acc / (draws * workers) / sq
    for _ in range(samples):
        acc += sq_error(_apply_unchecked(spec, x, rng))
    return acc / samples / sq


def estimate_theta(spec: CompressorSpec, mode: str, workers: int,
                   x: np.ndarray, samples: int,
                   rng: np.random.Generator) -> float:
    """Monte-Carlo estimate of E||(1/n) sum_i C_i(x) - x||^2 / ||x||^2.

    For a pure shared-permutation partition no sampling is needed: the
    averaged output reassembles x identically, so after one deterministic
    reconstruction check the estimate is exactly zero.
    """
    x = np.asarray(x, dtype=float)
    sq = float(x @ x)
    if sq == 0.0:
        raise CompressorError("probe vector must be nonzero")
    if spec.kind == "perm_k":
        msgs = apply_perm_k_collection(x, workers, rng)
        recon = np.zeros(x.size)
        for m in msgs:
            recon[m.indices] += m.values
        err = recon / workers - x
        if float(err @ err) > 1e-24 * sq:
            raise CompressorError("partition reconstruction drifted")
        return 0.0
    acc = 0.0
    for _ in range(samples):
        msgs = apply_collection(spec, mode, workers, x, rng)
        mean = np.zeros(x.size)
        for m in msgs:
            mean[m.indices] += m.values
        diff = mean / workers - x
        acc += float(diff @ diff)
    return acc / samples / sq
