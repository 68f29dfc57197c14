"""Property suites behind ``commsim verify``.

Each check returns a :class:`CheckResult`; a suite is a named list of
checks. The same helpers back the pytest acceptance suite, so the CLI
report and the tests cannot drift apart.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import compressors as comp
from . import problems, tuning
from .algorithms import AlgoConfig, run_experiment
from .telemetry import CostModel, charge


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}" + (
            f"  [{self.detail}]" if self.detail else "")


def central_difference_grad(func, x, step_scale=1e-5):
    """Central finite differences with step h = step_scale * (1 + ||x||)."""
    x = np.asarray(x, dtype=float)
    h = step_scale * (1.0 + float(np.linalg.norm(x)))
    out = np.empty_like(x)
    for j in range(x.size):
        up = x.copy()
        dn = x.copy()
        up[j] += h
        dn[j] -= h
        out[j] = (func(up) - func(dn)) / (2.0 * h)
    return out


def gradient_check(func, grad, points, rel_tol=1e-5):
    """Worst relative error of an analytic gradient against central
    differences over the given points."""
    worst = 0.0
    for x in points:
        approx = central_difference_grad(func, x)
        exact = np.asarray(grad(x), dtype=float)
        denom = max(float(np.linalg.norm(approx)), 1e-12)
        worst = max(worst, float(np.linalg.norm(exact - approx)) / denom)
    return worst


def descent_slack(algorithm, problem, cfg, l_smooth, seed, steps):
    """Largest violation of the per-step descent bound over a run.

    The bound compares f at the new iterate against f at the old one
    minus the usual quadratic terms plus the estimator-error term; a
    nonpositive return means the bound held at every step.
    """
    worst = -math.inf

    def on_step(info):
        nonlocal worst
        f_prev = problem.full_value(info.x_prev)
        f_new = problem.full_value(info.x_new)
        grad_prev = problem.full_grad(info.x_prev)
        delta = info.x_new - info.x_prev
        err = info.direction - grad_prev
        gamma = cfg.gamma
        bound = (f_prev
                 - 0.5 * gamma * float(grad_prev @ grad_prev)
                 - (0.5 / gamma - 0.5 * l_smooth) * float(delta @ delta)
                 + 0.5 * gamma * float(err @ err))
        worst = max(worst, f_new - bound)

    run_experiment(algorithm, problem, cfg, {"eps": 0.0, "max_iters": steps},
                   seed, on_step=on_step)
    return worst


def aggregate_drift(algorithm, problem, cfg, seed, steps):
    """Largest gap between stored aggregates and recomputed means."""
    worst = 0.0

    def on_step(info):
        nonlocal worst
        state = info.state
        if state.shifts is not None and state.shift_mean is not None:
            gap = np.max(np.abs(state.shifts.mean(axis=0) - state.shift_mean))
            worst = max(worst, float(gap))
        if state.momentum is not None and state.momentum_mean is not None:
            gap = np.max(np.abs(state.momentum.mean(axis=0) - state.momentum_mean))
            worst = max(worst, float(gap))
        if state.grad_workers is not None and state.grad_mean is not None:
            gap = np.max(np.abs(state.grad_workers.mean(axis=0) - state.grad_mean))
            worst = max(worst, float(gap))

    run_experiment(algorithm, problem, cfg, {"eps": 0.0, "max_iters": steps},
                   seed, on_step=on_step)
    return worst


def componentwise_unbiasedness(spec, probe, draws, rng, mode=None, workers=None):
    """Max componentwise |mean - x| measured in standard errors.

    Components whose draws never vary must match exactly; they report 0
    when they do and inf otherwise.
    """
    probe = np.asarray(probe, dtype=float)
    total = np.zeros(probe.size)
    total_sq = np.zeros(probe.size)
    base = spec.inner if spec.kind == "compose" else spec
    if base.kind == "perm_k":
        draw = lambda: comp._collection_unchecked(spec, "correlated",
                                                  base.workers, probe, rng)[0]
    else:
        draw = lambda: comp._apply_unchecked(spec, probe, rng)
    for _ in range(draws):
        msg = draw()
        total[msg.indices] += msg.values
        total_sq[msg.indices] += msg.values * msg.values
    mean = total / draws
    var = np.maximum(total_sq / draws - mean ** 2, 0.0)
    se = np.sqrt(var / draws)
    gap = np.abs(mean - probe)
    score = np.zeros(probe.size)
    fixed = se == 0.0
    score[fixed] = np.where(gap[fixed] <= 1e-12 * (1 + np.abs(probe[fixed])),
                            0.0, np.inf)
    score[~fixed] = gap[~fixed] / se[~fixed]
    return float(score.max())


def shared_coin_consistent(events) -> bool:
    """Within one iteration every worker sees the same payload size per
    direction: either everyone got the full vector or everyone got a
    compressed message."""
    for direction in ("s2w", "w2s"):
        sizes = {e.payload.cost for e in events if e.direction == direction}
        if len(sizes) > 1:
            return False
    return True


def double_entry_gap(trace, event_log, cost_model, n) -> float:
    """Difference between trace cumulative costs and an independent
    re-summation of the event log."""
    s2w = w2s = 0.0
    worst = 0.0
    for rec, events in zip(trace[1:], event_log):
        for e in events:
            inc = charge(e, cost_model) * e.workers / n
            if e.direction == "s2w":
                s2w += inc
            else:
                w2s += inc
        worst = max(worst, abs(s2w - rec.s2w_cum), abs(w2s - rec.w2s_cum))
    return worst


# Suites -------------------------------------------------------------------

def _compressor_suite():
    rng = np.random.default_rng(11)
    results = []
    d, n = 20, 4
    specs = {
        "rand_k": comp.rand_k_spec(d, 5),
        "same_rand_k": comp.same_rand_k_spec(d, 5),
        "perm_k": comp.perm_k_spec(d, n),
        "natural": comp.natural_spec(d),
        "natural_over_perm": comp.compose_spec(comp.natural_spec(d),
                                               comp.perm_k_spec(d, n)),
    }
    for name, spec in specs.items():
        probe = rng.standard_normal(d)
        score = componentwise_unbiasedness(spec, probe, 40_000, rng)
        results.append(CheckResult(f"unbiasedness[{name}]", score <= 4.0,
                                   f"max gap {score:.2f} standard errors"))
        worst = 0.0
        for _ in range(10):
            probe = rng.standard_normal(d)
            worst = max(worst, comp.estimate_omega(spec, probe, 4000, rng))
        results.append(CheckResult(
            f"variance_bound[{name}]", worst <= 1.05 * spec.omega + 1e-12,
            f"worst {worst:.4f} vs stated {spec.omega:.4f}"))
    probe = rng.standard_normal(d)
    msgs = comp.apply_perm_k_collection(probe, n, rng)
    union = np.concatenate([m.indices for m in msgs])
    recon = sum(m.densify() for m in msgs) / n
    ok = (np.unique(union).size == d
          and np.max(np.abs(recon - probe)) <= 1e-12)
    results.append(CheckResult("perm_partition", ok))
    worst = 0.0
    for _ in range(20):
        probe = rng.standard_normal(d)
        diff = comp.apply_top_k(probe, 5).densify() - probe
        worst = max(worst, float(diff @ diff)
                    / ((1 - 5 / d) * float(probe @ probe)))
    results.append(CheckResult("top_k_contraction", worst <= 1.0 + 1e-12,
                               f"worst ratio {worst:.4f}"))
    msg_a = comp.apply_rand_k(probe, 5, np.random.default_rng(3))
    msg_b = comp.apply_rand_k(probe, 5, np.random.default_rng(3))
    same = (np.array_equal(msg_a.indices, msg_b.indices)
            and np.array_equal(msg_a.values, msg_b.values))
    results.append(CheckResult("determinism", same))
    return results


def _problem_suite():
    rng = np.random.default_rng(5)
    results = []
    ens = problems.generate_het_quadratic(6, 20, 1.0, 0.2, 0.5, rng)
    consts = problems.quad_constants(ens)
    results.append(CheckResult(
        "constants_ordering",
        consts.l_smooth <= consts.l_rms + 1e-12 <= consts.l_max + 1e-12,
        f"L={consts.l_smooth:.4f} rms={consts.l_rms:.4f} max={consts.l_max:.4f}"))
    ratio = problems.verify_functional_inequality(
        ens, consts.l_hetero, consts.l_avg, 2000, 5.0, rng)
    results.append(CheckResult("functional_inequality", ratio <= 1.0,
                               f"max ratio {ratio:.6f}"))
    homog = problems.generate_het_quadratic(4, 12, 1.0, 0.0, 0.5, rng)
    results.append(CheckResult(
        "homogeneous_constants",
        problems.quad_constants(homog).l_hetero == 0.0))
    points = [rng.standard_normal(20) for _ in range(5)]
    err = gradient_check(ens.full_value, ens.full_grad, points)
    results.append(CheckResult("quadratic_gradient", err <= 1e-5,
                               f"rel err {err:.2e}"))
    mf = problems.synthetic_matfac(6, 2, 4, 0.1, rng)
    points = [rng.standard_normal(mf.dim) for _ in range(5)]
    err = gradient_check(mf.full_value, mf.full_grad, points)
    results.append(CheckResult("matfac_gradient", err <= 1e-5,
                               f"rel err {err:.2e}"))
    chain = problems.ChainProblem(30)
    points = [rng.standard_normal(30) for _ in range(5)]
    err = gradient_check(chain.full_value, chain.full_grad, points)
    results.append(CheckResult("chain_gradient", err <= 1e-5,
                               f"rel err {err:.2e}"))
    value = problems.chain_base_value(np.zeros(30))
    expected = -math.sqrt(math.e * math.pi / 2.0)
    results.append(CheckResult("chain_origin_value",
                               abs(value - expected) <= 1e-8,
                               f"{value:.10f} vs {expected:.10f}"))
    return results


def _algorithm_suite():
    rng = np.random.default_rng(7)
    results = []
    d, n = 50, 5
    ens = problems.generate_het_quadratic(n, d, 1.0, 0.1, 0.5, rng)
    consts = problems.quad_constants(ens)
    gamma = 0.5 / consts.l_smooth
    for algorithm in ("gd", "marina", "marina_p", "m3", "ef21p"):
        cfg = AlgoConfig(gamma=gamma, prob=0.2, prob_primal=0.2, prob_dual=0.2,
                         beta=0.5, primal=comp.perm_k_spec(d, n),
                         dual=comp.rand_k_spec(d, d // n),
                         collection="correlated")
        if algorithm == "ef21p":
            cfg = AlgoConfig(gamma=gamma, primal=comp.top_k_spec(d, d // n),
                             dual=comp.rand_k_spec(d, d // n))
        slack = descent_slack(algorithm, ens, cfg, consts.l_smooth, 1, 100)
        results.append(CheckResult(f"descent_bound[{algorithm}]",
                                   slack <= 1e-8, f"max slack {slack:.2e}"))
        drift = aggregate_drift(algorithm, ens, cfg, 1, 100)
        results.append(CheckResult(f"aggregate_consistency[{algorithm}]",
                                   drift <= 1e-12, f"max drift {drift:.2e}"))
    homog = problems.generate_het_quadratic(6, 60, 1.0, 0.0, 0.5, rng)
    gamma = 1.0 / problems.quad_constants(homog).l_smooth
    cfg = AlgoConfig(gamma=gamma, prob=1.0 / 6, primal=comp.perm_k_spec(60, 6))
    trace_p = run_experiment("marina_p", homog, cfg, {"eps": 0.0, "max_iters": 200}, 3)
    cfg_gd = AlgoConfig(gamma=gamma)
    trace_gd = run_experiment("gd", homog, cfg_gd, {"eps": 0.0, "max_iters": 200}, 3)
    gap = max(abs(a.f - b.f) for a, b in zip(trace_p, trace_gd))
    results.append(CheckResult("homogeneous_gd_equivalence", gap <= 1e-10,
                               f"max objective gap {gap:.2e}"))
    return results


def _tuning_suite():
    results = []
    worst = 0.0
    grid = np.logspace(-3, 3, 20)
    for a in grid:
        for b in grid:
            gamma = 1.0 / (math.sqrt(a) + b)
            worst = max(worst, a * gamma ** 2 + b * gamma)
    results.append(CheckResult("step_bound_lemma", worst <= 1.0 + 1e-12,
                               f"max value {worst:.12f}"))
    base = tuning.step_marinap_general(1.0, 1.0, 1.0, 4.0, 1.0, 0.5)
    monotone = True
    for bump in ("l_smooth", "l_hetero", "l_avg", "omega", "theta"):
        args = {"l_smooth": 1.0, "l_hetero": 1.0, "l_avg": 1.0,
                "omega": 4.0, "theta": 1.0}
        args[bump] = args[bump] * 2.0
        val = tuning.step_marinap_general(args["l_smooth"], args["l_hetero"],
                                          args["l_avg"], args["omega"],
                                          args["theta"], 0.5)
        monotone = monotone and val <= base + 1e-15
    monotone = monotone and tuning.step_marinap_general(
        1.0, 1.0, 1.0, 4.0, 1.0, 0.9) >= base - 1e-15
    results.append(CheckResult("step_monotonicity", monotone))
    return results


def _telemetry_suite():
    rng = np.random.default_rng(2)
    results = []
    d, n = 40, 4
    ens = problems.generate_het_quadratic(n, d, 1.0, 0.1, 0.5, rng)
    cfg = AlgoConfig(gamma=0.3, prob=0.25, primal=comp.perm_k_spec(d, n),
                     dual=comp.rand_k_spec(d, d // n))
    model = CostModel()
    log = []
    trace = run_experiment("marina_p", ens, cfg, {"eps": 0.0, "max_iters": 200},
                           9, cost_model=model,
                           on_step=lambda info: log.append(info.events))
    gap = double_entry_gap(trace, log, model, n)
    results.append(CheckResult("double_entry", gap == 0.0, f"gap {gap:.2e}"))
    per_iter = trace[-1].s2w_cum / trace[-1].t
    expect = tuning.expected_coords(0.25, d // n, d)
    results.append(CheckResult(
        "expected_downlink_coords", abs(per_iter - expect) / expect <= 0.1,
        f"measured {per_iter:.2f} vs {expect:.2f}"))
    return results


SUITES = {
    "compressors": _compressor_suite,
    "problems": _problem_suite,
    "algorithms": _algorithm_suite,
    "tuning": _tuning_suite,
    "telemetry": _telemetry_suite,
}


def cmd_verify(suite: str):
    """Run one property suite (or 'all'); returns the check results."""
    if suite == "all":
        out = []
        for name in SUITES:
            out.extend(SUITES[name]())
        return out
    if suite not in SUITES:
        raise ValueError(
            f"unknown suite {suite!r}; choose from {', '.join(SUITES)} or 'all'")
    return SUITES[suite]()
