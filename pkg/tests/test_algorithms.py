import numpy as np
import pytest

from commsim.algorithms import (
    AlgoConfig,
    AlgorithmError,
    DivergenceError,
    RunStreams,
    init_state,
    m3_step,
    marina_step,
    run_experiment,
)
from commsim.compressors import perm_k_spec, rand_k_spec, same_rand_k_spec, top_k_spec
from commsim.problems import (
    QuadraticEnsemble,
    generate_het_quadratic,
    quad_constants,
)
from commsim.telemetry import CostModel
from commsim.verification import (
    aggregate_drift,
    descent_slack,
    double_entry_gap,
    shared_coin_consistent,
)


def rng_of(seed=0):
    return np.random.default_rng(seed)


def one_dim_quadratic():
    # f(x) = x^2 / 2 as a single-worker ensemble (d = 2 keeps shapes real).
    return QuadraticEnsemble.from_dense(np.stack([np.eye(2)]),
                                        np.zeros((1, 2)), np.zeros(1))


def small_ensemble(n=5, d=50, sigma=0.1, seed=1, **kw):
    return generate_het_quadratic(n, d, 1.0, sigma, 0.5, rng_of(seed), **kw)


def default_cfg(d, n, gamma, **kw):
    base = dict(gamma=gamma, prob=max(1, d // n) / d, prob_primal=1.0 / n,
                prob_dual=1.0 / n, beta=0.5,
                primal=perm_k_spec(d, n), dual=rand_k_spec(d, max(1, d // n)))
    base.update(kw)
    return AlgoConfig(**base)


class TestGd:
    def test_exact_minimizer_in_one_step(self):
        ens = one_dim_quadratic()
        cfg = AlgoConfig(gamma=1.0)
        trace = run_experiment("gd", ens, cfg, {"eps": 0.0, "max_iters": 1}, 0,
                               x0=np.array([5.0, 0.0]))
        assert trace[-1].grad_norm_sq == 0.0
        assert trace[-1].f == 0.0

    def test_gradient_norm_monotone_at_plain_step(self):
        ens = small_ensemble(sigma=0.0)
        gamma = 1.0 / quad_constants(ens).l_smooth
        trace = run_experiment("gd", ens, AlgoConfig(gamma=gamma),
                               {"eps": 0.0, "max_iters": 100}, 0)
        gsq = [r.grad_norm_sq for r in trace]
        assert all(b <= a + 1e-12 for a, b in zip(gsq, gsq[1:]))

    def test_zero_gradient_is_fixed_point(self):
        ens = one_dim_quadratic()
        trace = run_experiment("gd", ens, AlgoConfig(gamma=0.5),
                               {"eps": 0.0, "max_iters": 3}, 0,
                               x0=np.zeros(2))
        assert trace[-1].f == 0.0 and trace[-1].grad_norm_sq == 0.0

    def test_costs_full_both_directions(self):
        ens = small_ensemble()
        trace = run_experiment("gd", ens, AlgoConfig(gamma=0.1),
                               {"eps": 0.0, "max_iters": 7}, 0)
        assert trace[-1].s2w_cum == 7 * 50
        assert trace[-1].w2s_cum == 7 * 50


class TestMarina:
    def test_always_heads_matches_gd(self):
        ens = small_ensemble()
        gamma = 0.5 / quad_constants(ens).l_smooth
        cfg = default_cfg(50, 5, gamma, prob=1.0)
        tm = run_experiment("marina", ens, cfg, {"eps": 0.0, "max_iters": 60}, 2)
        tg = run_experiment("gd", ens, AlgoConfig(gamma=gamma),
                            {"eps": 0.0, "max_iters": 60}, 2)
        gap = max(abs(a.f - b.f) for a, b in zip(tm, tg))
        assert gap < 1e-12

    def test_identity_compressor_matches_gd(self):
        ens = small_ensemble()
        gamma = 0.5 / quad_constants(ens).l_smooth
        cfg = default_cfg(50, 5, gamma, prob=0.3, dual=rand_k_spec(50, 50))
        tm = run_experiment("marina", ens, cfg, {"eps": 0.0, "max_iters": 60}, 2)
        tg = run_experiment("gd", ens, AlgoConfig(gamma=gamma),
                            {"eps": 0.0, "max_iters": 60}, 2)
        gap = max(abs(a.f - b.f) for a, b in zip(tm, tg))
        assert gap < 1e-10

    def test_tails_update_conditionally_unbiased(self):
        # Resampling the compressed difference at a frozen state must
        # average to the exact new mean gradient.
        n, d = 4, 12
        ens = small_ensemble(n=n, d=d, sigma=0.3, seed=5)
        cfg = default_cfg(d, n, gamma=0.2, prob=1e-9, dual=rand_k_spec(d, 3))
        draws = 20000
        x0 = rng_of(6).standard_normal(d)
        total = np.zeros(d)
        state0 = init_state("marina", ens, cfg, x0)
        for rep in range(draws):
            state = init_state("marina", ens, cfg, x0)
            streams = RunStreams.create(rep, n)
            streams.coin = rng_of(10 ** 9 + rep)  # force tails via prob ~ 0
            marina_step(state, ens, cfg, streams)
            total += state.grad_mean
        mean = total / draws
        x1 = x0 - cfg.gamma * state0.grad_mean
        expect = ens.full_grad(x1)
        scatter = np.abs(mean - expect)
        assert np.max(scatter) < 0.05 * max(1.0, float(np.abs(expect).max()))

    def test_uplink_cost_drops_on_tails(self):
        n, d = 5, 50
        ens = small_ensemble(n=n, d=d)
        log = []
        cfg = default_cfg(d, n, 0.1, prob=1e-12, dual=rand_k_spec(d, 10))
        run_experiment("marina", ens, cfg, {"eps": 0.0, "max_iters": 5}, 0,
                       on_step=lambda info: log.append(info.events))
        for events in log:
            w2s = [e for e in events if e.direction == "w2s"]
            assert len(w2s) == n
            assert all(e.payload.cost == 10 for e in w2s)


class TestMarinaP:
    def test_homogeneous_partition_matches_gd(self):
        ens = small_ensemble(n=6, d=60, sigma=0.0, seed=7)
        gamma = 1.0 / quad_constants(ens).l_smooth
        cfg = AlgoConfig(gamma=gamma, prob=1.0 / 6, primal=perm_k_spec(60, 6))
        tp = run_experiment("marina_p", ens, cfg, {"eps": 0.0, "max_iters": 200}, 3)
        tg = run_experiment("gd", ens, AlgoConfig(gamma=gamma),
                            {"eps": 0.0, "max_iters": 200}, 3)
        gap = max(abs(a.f - b.f) for a, b in zip(tp, tg))
        assert gap <= 1e-10

    def test_always_heads_matches_gd(self):
        ens = small_ensemble(sigma=0.2, seed=8)
        gamma = 0.5 / quad_constants(ens).l_smooth
        cfg = default_cfg(50, 5, gamma, prob=1.0)
        tp = run_experiment("marina_p", ens, cfg, {"eps": 0.0, "max_iters": 80}, 4)
        tg = run_experiment("gd", ens, AlgoConfig(gamma=gamma),
                            {"eps": 0.0, "max_iters": 80}, 4)
        gap = max(abs(a.f - b.f) for a, b in zip(tp, tg))
        assert gap < 1e-12

    def test_expected_downlink_coords(self):
        n, d, k = 4, 12, 3
        ens = small_ensemble(n=n, d=d, seed=9)
        prob = 0.25
        cfg = AlgoConfig(gamma=0.05, prob=prob, primal=rand_k_spec(d, k),
                         collection="independent")
        iters = 10000
        trace = run_experiment("marina_p", ens, cfg,
                               {"eps": 0.0, "max_iters": iters}, 5)
        per_iter = trace[-1].s2w_cum / iters
        expect = prob * d + (1 - prob) * k
        assert per_iter == pytest.approx(expect, rel=0.03)

    def test_shared_coin_contract(self):
        n, d = 5, 50
        ens = small_ensemble(n=n, d=d)
        log = []
        cfg = default_cfg(d, n, 0.1, prob=0.5, collection="independent",
                          primal=rand_k_spec(d, 10))
        run_experiment("marina_p", ens, cfg, {"eps": 0.0, "max_iters": 40}, 6,
                       on_step=lambda info: log.append(info.events))
        assert all(shared_coin_consistent(events) for events in log)


class TestM3:
    def test_full_momentum_ties_shifts(self):
        n, d = 4, 20
        ens = small_ensemble(n=n, d=d, seed=10)
        cfg = default_cfg(d, n, 0.1, beta=1.0)
        state = None

        def grab(info):
            nonlocal state
            state = info.state
            assert np.max(np.abs(state.momentum - state.shifts)) == 0.0

        run_experiment("m3", ens, cfg, {"eps": 0.0, "max_iters": 30}, 7,
                       on_step=grab)
        assert state is not None

    def test_all_heads_full_momentum_matches_gd(self):
        ens = small_ensemble(seed=11)
        gamma = 0.5 / quad_constants(ens).l_smooth
        cfg = default_cfg(50, 5, gamma, prob_primal=1.0, prob_dual=1.0, beta=1.0)
        tm = run_experiment("m3", ens, cfg, {"eps": 0.0, "max_iters": 60}, 8)
        tg = run_experiment("gd", ens, AlgoConfig(gamma=gamma),
                            {"eps": 0.0, "max_iters": 60}, 8)
        gap = max(abs(a.f - b.f) for a, b in zip(tm, tg))
        assert gap < 1e-12

    def test_lean_memory_trajectory_identical(self):
        n, d = 4, 24
        ens = small_ensemble(n=n, d=d, seed=12)
        cfg_full = default_cfg(d, n, 0.1)
        cfg_lean = default_cfg(d, n, 0.1, lean_memory=True)
        tf = run_experiment("m3", ens, cfg_full, {"eps": 0.0, "max_iters": 50}, 9)
        tl = run_experiment("m3", ens, cfg_lean, {"eps": 0.0, "max_iters": 50}, 9)
        for a, b in zip(tf, tl):
            assert a.f == b.f and a.grad_norm_sq == b.grad_norm_sq

    def test_independent_coins_observed(self):
        n, d = 4, 20
        ens = small_ensemble(n=n, d=d, seed=13)
        cfg = default_cfg(d, n, 0.05, prob_primal=0.5, prob_dual=0.5)
        trace = run_experiment("m3", ens, cfg, {"eps": 0.0, "max_iters": 400}, 10)
        pairs = {(r.coin_primal, r.coin_dual) for r in trace[1:]}
        assert pairs == {(0, 0), (0, 1), (1, 0), (1, 1)}

    def test_dual_coin_controls_uplink_cost(self):
        n, d = 4, 20
        ens = small_ensemble(n=n, d=d, seed=14)
        cfg = default_cfg(d, n, 0.05, prob_primal=0.5, prob_dual=0.5)
        log = []
        trace = run_experiment("m3", ens, cfg, {"eps": 0.0, "max_iters": 100}, 11,
                               on_step=lambda info: log.append(info))
        for info in log:
            w2s = [e for e in info.events if e.direction == "w2s"]
            if info.coin_dual:
                assert all(e.payload.cost == d for e in w2s)
            else:
                assert all(e.payload.cost == cfg.dual.k for e in w2s)


class TestEf21p:
    def test_full_k_matches_gd(self):
        ens = small_ensemble(seed=15)
        gamma = 0.5 / quad_constants(ens).l_smooth
        cfg = AlgoConfig(gamma=gamma, primal=top_k_spec(50, 50),
                         dual=rand_k_spec(50, 10))
        te = run_experiment("ef21p", ens, cfg, {"eps": 0.0, "max_iters": 60}, 12)
        tg = run_experiment("gd", ens, AlgoConfig(gamma=gamma),
                            {"eps": 0.0, "max_iters": 60}, 12)
        gap = max(abs(a.f - b.f) for a, b in zip(te, tg))
        assert gap < 1e-12

    def test_shift_contraction_each_step(self):
        n, d, k = 5, 40, 8
        ens = small_ensemble(n=n, d=d, seed=16)
        cfg = AlgoConfig(gamma=0.2, primal=top_k_spec(d, k), dual=rand_k_spec(d, 8))
        prev_shift = {}

        def check(info):
            shift = info.state.ef_shift
            before = prev_shift.get("value", info.x_prev * 0.0)
            lhs = np.sum((shift - info.x_new) ** 2)
            rhs = (1 - k / d) * np.sum((before - info.x_new) ** 2)
            assert lhs <= rhs + 1e-12
            prev_shift["value"] = shift.copy()

        run_experiment("ef21p", ens, cfg, {"eps": 0.0, "max_iters": 50}, 13,
                       on_step=check)

    def test_bidirectional_uplink_compressed(self):
        n, d = 5, 40
        ens = small_ensemble(n=n, d=d, seed=17)
        cfg = AlgoConfig(gamma=0.1, primal=top_k_spec(d, 8),
                         dual=rand_k_spec(d, 8), downlink_only=False)
        log = []
        run_experiment("ef21p", ens, cfg, {"eps": 0.0, "max_iters": 10}, 14,
                       on_step=lambda info: log.append(info.events))
        for events in log:
            w2s = [e for e in events if e.direction == "w2s"]
            assert len(w2s) == n and all(e.payload.cost == 8 for e in w2s)


class TestRunner:
    def test_same_seed_identical_traces(self):
        n, d = 4, 24
        ens = small_ensemble(n=n, d=d, seed=18)
        cfg = default_cfg(d, n, 0.1)
        a = run_experiment("m3", ens, cfg, {"eps": 0.0, "max_iters": 60}, 21)
        b = run_experiment("m3", ens, cfg, {"eps": 0.0, "max_iters": 60}, 21)
        assert a == b

    def test_divergence_guard(self):
        ens = small_ensemble(seed=19)
        cfg = AlgoConfig(gamma=1e4)
        with pytest.raises(DivergenceError) as err:
            run_experiment("gd", ens, cfg, {"eps": 0.0, "max_iters": 10000}, 0)
        assert len(err.value.trace) >= 1

    def test_stops_at_eps(self):
        ens = small_ensemble(sigma=0.0, seed=20)
        gamma = 1.0 / quad_constants(ens).l_smooth
        trace = run_experiment("gd", ens, AlgoConfig(gamma=gamma),
                               {"eps": 1e-3, "max_iters": 10 ** 6}, 0)
        assert trace[-1].grad_norm_sq <= 1e-3
        assert trace[-2].grad_norm_sq > 1e-3

    def test_unknown_algorithm(self):
        with pytest.raises(AlgorithmError):
            run_experiment("sgd", small_ensemble(), AlgoConfig(gamma=0.1),
                           {"eps": 0.0, "max_iters": 1}, 0)

    def test_double_entry_audit(self):
        n, d = 5, 30
        ens = small_ensemble(n=n, d=d, seed=21)
        cfg = default_cfg(d, n, 0.1)
        model = CostModel()
        log = []
        trace = run_experiment("marina_p", ens, cfg,
                               {"eps": 0.0, "max_iters": 150}, 22,
                               cost_model=model,
                               on_step=lambda info: log.append(info.events))
        assert double_entry_gap(trace, log, model, n) == 0.0

    def test_config_validation(self):
        with pytest.raises(AlgorithmError):
            AlgoConfig(gamma=0.0)
        with pytest.raises(AlgorithmError):
            AlgoConfig(gamma=0.1, prob=0.0)
        with pytest.raises(AlgorithmError):
            AlgoConfig(gamma=0.1, beta=1.5)


class TestStructuralInvariants:
    @pytest.mark.parametrize("algorithm", ["gd", "marina", "marina_p", "m3", "ef21p"])
    def test_descent_bound(self, algorithm):
        n, d = 5, 50
        ens = small_ensemble(n=n, d=d, seed=23)
        consts = quad_constants(ens)
        cfg = default_cfg(d, n, 0.5 / consts.l_smooth, prob=0.2)
        if algorithm == "ef21p":
            cfg = AlgoConfig(gamma=0.5 / consts.l_smooth,
                             primal=top_k_spec(d, 10), dual=rand_k_spec(d, 10))
        slack = descent_slack(algorithm, ens, cfg, consts.l_smooth, 24, 100)
        assert slack <= 1e-8

    @pytest.mark.parametrize("algorithm", ["marina", "marina_p", "m3"])
    def test_aggregate_consistency(self, algorithm):
        n, d = 5, 50
        ens = small_ensemble(n=n, d=d, seed=25)
        cfg = default_cfg(d, n, 0.1, prob=0.3)
        drift = aggregate_drift(algorithm, ens, cfg, 26, 100)
        assert drift <= 1e-12
