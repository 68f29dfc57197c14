"""Iterative methods as single-step transitions plus a generic runner.

Implemented methods (ids used by the harness):

* ``gd``: full-gradient descent, uncompressed both directions.
* ``marina``: uplink compression of gradient differences behind one
  shared coin; the server broadcasts the iterate uncompressed.
* ``marina_p``: downlink compression of iterate differences against
  per-worker model shifts behind one shared coin; gradients travel
  uncompressed uplink.
* ``m3``: downlink shifts as in ``marina_p``, a momentum average of the
  shifts on the workers, and uplink gradient-difference compression
  behind a second, independent shared coin.
* ``ef21p``: error-feedback baseline; a single shared shift chases the
  iterate through top-k downlink messages, with either full or sparsified
  uplink gradients.

One run is strictly sequential: coin and compressor draws are ordered.
Every step emits the communication events it caused, so cost accounting
can be audited independently of the cumulative counters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .compressors import (
    CompressorSpec,
    _apply_unchecked,
    apply_collection,
    apply_top_k,
)
from .telemetry import (
    S2W,
    W2S,
    CommEvent,
    CostModel,
    FullPayload,
    TraceRecord,
    charge,
)

ALGORITHM_IDS = ("gd", "marina", "marina_p", "m3", "ef21p")

DIVERGENCE_FACTOR = 1e8


class AlgorithmError(ValueError):
    pass


class DivergenceError(RuntimeError):
    """Objective blew up or became non-finite; carries the partial trace."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass
class AlgoConfig:
    """Step size, coin probabilities, momentum and compressor choices."""

    gamma: float
    prob: float = 1.0
    prob_primal: float = 1.0
    prob_dual: float = 1.0
    beta: float = 1.0
    primal: Optional[CompressorSpec] = None
    dual: Optional[CompressorSpec] = None
    collection: str = "correlated"
    downlink_only: bool = True  # ef21p: full vs sparsified uplink
    lean_memory: bool = False  # m3: keep only the aggregate gradient estimate

    def __post_init__(self):
        if not self.gamma > 0:
            raise AlgorithmError("gamma must be positive")
        for name in ("prob", "prob_primal", "prob_dual", "beta"):
            value = getattr(self, name)
            if not 0 < value <= 1:
                raise AlgorithmError(f"{name} must be in (0, 1]")


@dataclass
class RunState:
    """Mutable per-run state; aggregates mirror per-worker arrays."""

    x: np.ndarray
    t: int = 0
    shifts: Optional[np.ndarray] = None  # per-worker model shifts (n, d)
    shift_mean: Optional[np.ndarray] = None
    momentum: Optional[np.ndarray] = None  # per-worker momentum shifts (n, d)
    momentum_mean: Optional[np.ndarray] = None
    grad_workers: Optional[np.ndarray] = None  # per-worker gradient estimates
    grad_mean: Optional[np.ndarray] = None  # aggregate gradient estimate
    grads_cache: Optional[np.ndarray] = None  # worker gradients at the last
    # point they were evaluated (x for marina, momentum shifts for m3)
    ef_shift: Optional[np.ndarray] = None  # ef21p single shared shift
    last_direction: Optional[np.ndarray] = None  # g used in the last update
    s2w_cum: float = 0.0
    w2s_cum: float = 0.0


@dataclass
class RunStreams:
    """Seeded streams: one for coins, one for server-side compression,
    one per worker for uplink compression."""

    coin: np.random.Generator
    server: np.random.Generator
    workers: list

    @classmethod
    def create(cls, seed: int, n: int) -> "RunStreams":
        return cls(
            coin=np.random.default_rng(np.random.SeedSequence([seed, 0xC0])),
            server=np.random.default_rng(np.random.SeedSequence([seed, 0x5E])),
            workers=[np.random.default_rng(np.random.SeedSequence([seed, 0x33, i]))
                     for i in range(n)],
        )


@dataclass(frozen=True)
class StepInfo:
    """Snapshot handed to per-step callbacks (arrays are copies except
    ``state``, which is a live view)."""

    t: int
    x_prev: np.ndarray
    x_new: np.ndarray
    direction: np.ndarray
    events: list
    coin_primal: Optional[int]
    coin_dual: Optional[int]
    state: RunState


def _toss(rng, prob) -> int:
    if prob >= 1.0:
        # Still consume one draw so coin sequences stay aligned across configs.
        rng.random()
        return 1
    return 1 if rng.random() < prob else 0


def _full_broadcast(direction, dim, workers):
    return CommEvent(direction=direction, payload=FullPayload(cost=float(dim)),
                     workers=workers, compressed_by=None)


def _apply_shift_updates(shifts, msgs):
    """w_i += message_i for per-worker sparse messages."""
    if len(msgs) > 1 and all(m is msgs[0] for m in msgs[1:]):
        m = msgs[0]
        shifts[:, m.indices] += m.values[None, :]
        return
    sizes = [m.indices.size for m in msgs]
    rows = np.repeat(np.arange(len(msgs)), sizes)
    cols = np.concatenate([m.indices for m in msgs])
    vals = np.concatenate([m.values for m in msgs])
    # Indices never repeat within one worker's message, so += is safe.
    shifts[rows, cols] += vals


def _mean_update(msgs, dim):
    """Mean of the densified messages, without materializing each one."""
    out = np.zeros(dim)
    if len(msgs) > 1 and all(m is msgs[0] for m in msgs[1:]):
        out[msgs[0].indices] = msgs[0].values
        return out
    cols = np.concatenate([m.indices for m in msgs])
    vals = np.concatenate([m.values for m in msgs])
    np.add.at(out, cols, vals)
    return out / len(msgs)


def init_state(algorithm: str, problem, cfg: AlgoConfig, x0: np.ndarray) -> RunState:
    x0 = np.asarray(x0, dtype=float).copy()
    n = problem.n
    state = RunState(x=x0)
    if algorithm == "gd":
        return state
    if algorithm == "marina":
        grads = problem.worker_grads_at_point(x0)
        state.grads_cache = grads.copy()
        if not cfg.lean_memory:
            state.grad_workers = grads.copy()
        state.grad_mean = grads.mean(axis=0)
        return state
    if algorithm == "marina_p":
        state.shifts = np.tile(x0, (n, 1))
        state.shift_mean = x0.copy()
        return state
    if algorithm == "m3":
        state.shifts = np.tile(x0, (n, 1))
        state.shift_mean = x0.copy()
        state.momentum = np.tile(x0, (n, 1))
        state.momentum_mean = x0.copy()
        grads = problem.worker_grads_at_point(x0)
        state.grads_cache = grads.copy()
        if not cfg.lean_memory:
            state.grad_workers = grads.copy()
        state.grad_mean = grads.mean(axis=0)
        return state
    if algorithm == "ef21p":
        state.ef_shift = x0.copy()
        return state
    raise AlgorithmError(f"unknown algorithm {algorithm!r}")


def gd_step(state: RunState, problem, cfg: AlgoConfig, streams: RunStreams):
    """x <- x - gamma * grad f(x); full vectors travel both directions."""
    n = problem.n
    g = problem.full_grad(state.x)
    state.last_direction = g
    state.grad_mean = g
    state.x = state.x - cfg.gamma * g
    events = [_full_broadcast(W2S, problem.dim, n),
              _full_broadcast(S2W, problem.dim, n)]
    return events, None, None


def marina_step(state: RunState, problem, cfg: AlgoConfig, streams: RunStreams):
    """Uplink-compressed gradient differences behind one shared coin."""
    n = problem.n
    g = state.grad_mean
    state.last_direction = g
    x_new = state.x - cfg.gamma * g
    events = [_full_broadcast(S2W, problem.dim, n)]  # broadcast of the iterate
    coin = _toss(streams.coin, cfg.prob)
    grads_new = problem.worker_grads_at_point(x_new)
    if coin:
        if state.grad_workers is not None:
            state.grad_workers = grads_new.copy()
        state.grad_mean = grads_new.mean(axis=0)
        events.append(_full_broadcast(W2S, problem.dim, n))
    else:
        deltas = grads_new - state.grads_cache
        msgs = [_apply_unchecked(cfg.dual, deltas[i], streams.workers[i])
                for i in range(n)]
        if state.grad_workers is not None:
            # Tails: every estimate restarts from the previous aggregate.
            state.grad_workers = np.tile(g, (n, 1))
            for i, m in enumerate(msgs):
                state.grad_workers[i, m.indices] += m.values
        state.grad_mean = g + _mean_update(msgs, problem.dim)
        events.extend(CommEvent(direction=W2S, payload=m, workers=1,
                                compressed_by=cfg.dual.kind) for m in msgs)
    state.grads_cache = grads_new
    state.x = x_new
    return events, coin, None


def marina_p_step(state: RunState, problem, cfg: AlgoConfig, streams: RunStreams):
    """Downlink-compressed iterate differences against per-worker shifts."""
    n = problem.n
    g = problem.mean_grad_at(state.shifts)
    state.grad_mean = g
    state.last_direction = g
    events = [_full_broadcast(W2S, problem.dim, n)]  # uncompressed gradients up
    x_new = state.x - cfg.gamma * g
    coin = _toss(streams.coin, cfg.prob)
    if coin:
        state.shifts[:] = x_new
        state.shift_mean = x_new.copy()
        events.append(_full_broadcast(S2W, problem.dim, n))
    else:
        delta = x_new - state.x
        msgs = apply_collection(cfg.primal, cfg.collection, n, delta, streams.server)
        _apply_shift_updates(state.shifts, msgs)
        state.shift_mean = state.shift_mean + _mean_update(msgs, problem.dim)
        events.append(CommEvent(direction=S2W, payload=msgs[0], workers=n,
                                compressed_by=cfg.primal.kind))
    state.x = x_new
    return events, coin, None


def m3_step(state: RunState, problem, cfg: AlgoConfig, streams: RunStreams):
    """Downlink shifts, momentum on the workers, compressed uplink
    gradient differences; two independent shared coins."""
    n = problem.n
    g = state.grad_mean
    state.last_direction = g
    x_new = state.x - cfg.gamma * g
    coin_primal = _toss(streams.coin, cfg.prob_primal)
    coin_dual = _toss(streams.coin, cfg.prob_dual)
    events = []
    if coin_primal:
        state.shifts[:] = x_new
        state.shift_mean = x_new.copy()
        events.append(_full_broadcast(S2W, problem.dim, n))
    else:
        delta = x_new - state.x
        msgs = apply_collection(cfg.primal, cfg.collection, n, delta, streams.server)
        _apply_shift_updates(state.shifts, msgs)
        state.shift_mean = state.shift_mean + _mean_update(msgs, problem.dim)
        events.append(CommEvent(direction=S2W, payload=msgs[0], workers=n,
                                compressed_by=cfg.primal.kind))
    state.momentum = cfg.beta * state.shifts + (1.0 - cfg.beta) * state.momentum
    state.momentum_mean = cfg.beta * state.shift_mean \
        + (1.0 - cfg.beta) * state.momentum_mean
    grads_new = problem.worker_grads(state.momentum)
    if coin_dual:
        if state.grad_workers is not None:
            state.grad_workers = grads_new.copy()
        state.grad_mean = grads_new.mean(axis=0)
        events.append(_full_broadcast(W2S, problem.dim, n))
    else:
        deltas = grads_new - state.grads_cache
        msgs = [_apply_unchecked(cfg.dual, deltas[i], streams.workers[i])
                for i in range(n)]
        if state.grad_workers is not None:
            for i, m in enumerate(msgs):
                state.grad_workers[i, m.indices] += m.values
        state.grad_mean = state.grad_mean + _mean_update(msgs, problem.dim)
        events.extend(CommEvent(direction=W2S, payload=m, workers=1,
                                compressed_by=cfg.dual.kind) for m in msgs)
    state.grads_cache = grads_new
    state.x = x_new
    return events, coin_primal, coin_dual


def ef21p_dcgd_step(state: RunState, problem, cfg: AlgoConfig, streams: RunStreams):
    """Error-feedback baseline: one shared shift chases the iterate
    through greedy-sparsified downlink messages."""
    n = problem.n
    if cfg.downlink_only:
        g = problem.mean_grad_at(np.broadcast_to(state.ef_shift,
                                                 (n, problem.dim)))
        events = [_full_broadcast(W2S, problem.dim, n)]
    else:
        grads = problem.worker_grads_at_point(state.ef_shift)
        msgs = [_apply_unchecked(cfg.dual, grads[i], streams.workers[i])
                for i in range(n)]
        g = _mean_update(msgs, problem.dim)
        events = [CommEvent(direction=W2S, payload=m, workers=1,
                            compressed_by=cfg.dual.kind) for m in msgs]
    state.grad_mean = g
    state.last_direction = g
    x_new = state.x - cfg.gamma * g
    msg = apply_top_k(x_new - state.ef_shift, cfg.primal.k)
    state.ef_shift[msg.indices] += msg.values
    events.append(CommEvent(direction=S2W, payload=msg, workers=n,
                            compressed_by="top_k"))
    state.x = x_new
    return events, None, None


_STEPS: dict = {
    "gd": gd_step,
    "marina": marina_step,
    "marina_p": marina_p_step,
    "m3": m3_step,
    "ef21p": ef21p_dcgd_step,
}


def run_experiment(algorithm: str, problem, cfg: AlgoConfig, stop: dict,
                   seed: int, cost_model: Optional[CostModel] = None,
                   x0: Optional[np.ndarray] = None,
                   on_step: Optional[Callable] = None):
    """Run one seeded experiment to the gradient target or the iteration cap.

    Returns the per-iteration trace (the record at t covers the iterate
    after t steps; costs are cumulative per-worker averages). Aborts with
    :class:`DivergenceError` if the objective exceeds the divergence
    guard or turns non-finite.
    """
    if algorithm not in _STEPS:
        raise AlgorithmError(f"unknown algorithm {algorithm!r}")
    eps = float(stop.get("eps", 0.0))
    max_iters = int(stop["max_iters"])
    if max_iters < 0:
        raise AlgorithmError("max_iters must be nonnegative")
    cost_model = cost_model or CostModel()
    step = _STEPS[algorithm]
    streams = RunStreams.create(seed, problem.n)
    if x0 is None:
        x0 = problem.default_x0()
    state = init_state(algorithm, problem, cfg, x0)

    value_and_grad = getattr(problem, "full_value_and_grad", None)
    if value_and_grad is None:
        value_and_grad = lambda x: (problem.full_value(x), problem.full_grad(x))
    f0, grad0 = value_and_grad(state.x)
    guard = DIVERGENCE_FACTOR * max(abs(f0), 1.0)
    best_f = f0
    trace = [TraceRecord(t=0, f=f0, grad_norm_sq=float(grad0 @ grad0),
                         s2w_cum=0.0, w2s_cum=0.0, best_f=best_f)]
    while state.t < max_iters and trace[-1].grad_norm_sq > eps:
        x_prev = state.x.copy() if on_step is not None else None
        events, coin_primal, coin_dual = step(state, problem, cfg, streams)
        state.t += 1
        for direction in (S2W, W2S):
            inc = sum(charge(e, cost_model) * e.workers
                      for e in events if e.direction == direction) / problem.n
            if direction == S2W:
                state.s2w_cum += inc
            else:
                state.w2s_cum += inc
        f_val, grad = value_and_grad(state.x)
        if not np.isfinite(f_val) or abs(f_val) > guard:
            raise DivergenceError(
                f"objective {f_val:.3e} left the stable region at t={state.t} "
                f"(guard {guard:.3e})", trace)
        best_f = min(best_f, f_val)
        trace.append(TraceRecord(
            t=state.t, f=f_val, grad_norm_sq=float(grad @ grad),
            s2w_cum=state.s2w_cum, w2s_cum=state.w2s_cum, best_f=best_f,
            coin_primal=coin_primal, coin_dual=coin_dual))
        if on_step is not None:
            on_step(StepInfo(t=state.t, x_prev=x_prev, x_new=state.x.copy(),
                             direction=state.last_direction.copy(),
                             events=events, coin_primal=coin_primal,
                             coin_dual=coin_dual, state=state))
    return trace
