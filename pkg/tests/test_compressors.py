import numpy as np
import pytest

from commsim.compressors import (
    CompressorError,
    apply_collection,
    apply_compressor,
    apply_natural,
    apply_perm_k_collection,
    apply_rand_k,
    apply_top_k,
    collection_theta,
    compose_spec,
    estimate_omega,
    estimate_theta,
    natural_spec,
    perm_k_spec,
    rand_k_spec,
    same_rand_k_spec,
    top_k_spec,
)
from commsim.compressors import _perm_k_messages


def rng_of(seed=0):
    return np.random.default_rng(seed)


class TestRandK:
    def test_full_sparsity_is_identity(self):
        x = rng_of(1).standard_normal(7)
        msg = apply_rand_k(x, 7, rng_of(2))
        assert msg.cost == 7
        np.testing.assert_array_equal(msg.indices, np.arange(7))
        np.testing.assert_allclose(msg.densify(), x)

    def test_two_outcomes_and_empirical_mean(self):
        x = np.array([3.0, -4.0])
        rng = rng_of(3)
        seen = set()
        total = np.zeros(2)
        draws = 4000
        for _ in range(draws):
            out = apply_rand_k(x, 1, rng).densify()
            seen.add(tuple(out))
            total += out
        assert seen == {(6.0, 0.0), (0.0, -8.0)}
        # Mean of a fair two-point draw: 4 standard errors of the binomial.
        np.testing.assert_allclose(total / draws, x, atol=4 * 4.0 / np.sqrt(draws))

    def test_stated_omega(self):
        assert rand_k_spec(10, 2).omega == 4.0

    def test_k_out_of_range(self):
        with pytest.raises(CompressorError):
            apply_rand_k(np.ones(5), 6, rng_of(0))
        with pytest.raises(CompressorError):
            rand_k_spec(5, 0)

    def test_indices_sorted_unique(self):
        rng = rng_of(4)
        for _ in range(200):
            msg = apply_rand_k(rng.standard_normal(17), 6, rng)
            assert np.all(np.diff(msg.indices) > 0)
            assert msg.indices.min() >= 0 and msg.indices.max() < 17

    def test_sampling_is_uniform(self):
        # Every index should be kept with probability k/d.
        rng = rng_of(5)
        d, k, draws = 8, 3, 20000
        counts = np.zeros(d)
        x = np.ones(d)
        for _ in range(draws):
            counts[apply_rand_k(x, k, rng).indices] += 1
        freq = counts / draws
        se = np.sqrt((k / d) * (1 - k / d) / draws)
        assert np.max(np.abs(freq - k / d)) < 5 * se


class TestPermK:
    def test_identity_permutation_example(self):
        x = np.array([1.0, 2.0, 3.0, 4.0])
        msgs = _perm_k_messages(x, 2, np.arange(4))
        np.testing.assert_array_equal(msgs[0].densify(), [2.0, 4.0, 0.0, 0.0])
        np.testing.assert_array_equal(msgs[1].densify(), [0.0, 0.0, 6.0, 8.0])
        assert msgs[0].cost == 2 and msgs[1].cost == 2

    def test_partition_and_exact_reconstruction(self):
        rng = rng_of(6)
        for d, n in ((12, 3), (20, 4), (100, 10)):
            x = rng.standard_normal(d)
            msgs = apply_perm_k_collection(x, n, rng)
            union = np.concatenate([m.indices for m in msgs])
            assert np.array_equal(np.sort(union), np.arange(d))
            recon = sum(m.densify() for m in msgs) / n
            assert np.max(np.abs(recon - x)) < 1e-12

    def test_unsupported_shapes(self):
        with pytest.raises(CompressorError):
            apply_perm_k_collection(np.ones(10), 3, rng_of(0))
        with pytest.raises(CompressorError):
            apply_perm_k_collection(np.ones(3), 5, rng_of(0))
        with pytest.raises(CompressorError):
            perm_k_spec(10, 4)

    def test_stated_omega(self):
        assert perm_k_spec(12, 4).omega == 3.0

    def test_determinism(self):
        x = rng_of(7).standard_normal(12)
        a = apply_perm_k_collection(x, 3, rng_of(42))
        b = apply_perm_k_collection(x, 3, rng_of(42))
        for ma, mb in zip(a, b):
            np.testing.assert_array_equal(ma.indices, mb.indices)
            np.testing.assert_array_equal(ma.values, mb.values)


class TestTopK:
    def test_definition(self):
        msg = apply_top_k(np.array([3.0, -5.0, 1.0]), 1)
        np.testing.assert_array_equal(msg.densify(), [0.0, -5.0, 0.0])

    def test_full_k_identity(self):
        x = rng_of(8).standard_normal(6)
        np.testing.assert_array_equal(apply_top_k(x, 6).densify(), x)

    def test_tie_breaks_to_lowest_index(self):
        msg = apply_top_k(np.array([2.0, -2.0]), 1)
        np.testing.assert_array_equal(msg.densify(), [2.0, 0.0])

    def test_contraction_bound(self):
        rng = rng_of(9)
        d, k = 15, 4
        for _ in range(20):
            x = rng.standard_normal(d)
            diff = apply_top_k(x, k).densify() - x
            assert diff @ diff <= (1 - k / d) * (x @ x) + 1e-12

    def test_stated_alpha(self):
        assert top_k_spec(20, 5).alpha == 0.25


class TestNatural:
    def test_powers_of_two_unchanged(self):
        x = np.array([1.0, -2.0, 0.25, 4096.0, -0.5])
        msg = apply_natural(x, rng_of(10))
        np.testing.assert_array_equal(msg.densify(), x)
        assert msg.cost == x.size

    def test_zero_maps_to_zero(self):
        msg = apply_natural(np.array([0.0, 8.0]), rng_of(11))
        assert msg.densify()[0] == 0.0

    def test_two_point_rounding_of_three(self):
        # Unbiasedness forces 3 -> 2 w.p. 1/2 and 3 -> 4 w.p. 1/2.
        rng = rng_of(12)
        draws = 20000
        outs = np.array([apply_natural(np.array([3.0]), rng).densify()[0]
                         for _ in range(draws)])
        assert set(np.unique(outs)) == {2.0, 4.0}
        assert abs(np.mean(outs == 2.0) - 0.5) < 4 * 0.5 / np.sqrt(draws)

    def test_rounding_probability_general(self):
        # t = 5 sits between 4 and 8: p(down) = (8 - 5) / (8 - 4) = 3/4.
        rng = rng_of(13)
        draws = 20000
        outs = np.array([apply_natural(np.array([-5.0]), rng).densify()[0]
                         for _ in range(draws)])
        assert set(np.unique(outs)) == {-4.0, -8.0}
        p_hat = np.mean(outs == -4.0)
        assert abs(p_hat - 0.75) < 4 * np.sqrt(0.75 * 0.25 / draws)

    def test_stated_omega(self):
        assert natural_spec(4).omega == 0.125


class TestCompose:
    def test_identity_outer_behaves_as_inner(self):
        d = 9
        spec = compose_spec(rand_k_spec(d, d), rand_k_spec(d, 3))
        x = rng_of(14).standard_normal(d)
        out = apply_compressor(spec, x, rng_of(15)).densify()
        direct = apply_rand_k(x, 3, rng_of(15)).densify()
        np.testing.assert_array_equal(out, direct)

    def test_natural_over_perm_on_powers_of_two(self):
        d, n = 8, 2
        x = np.array([1.0, 2.0, 4.0, -8.0, 16.0, -0.5, 0.25, 64.0])
        spec = compose_spec(natural_spec(d), perm_k_spec(d, n))
        msgs = apply_collection(spec, "correlated", n, x, rng_of(16))
        plain = apply_perm_k_collection(x, n, rng_of(16))
        for ma, mb in zip(msgs, plain):
            np.testing.assert_array_equal(ma.indices, mb.indices)
            # Scaling by n keeps powers of two exact, so rounding is a no-op.
            np.testing.assert_array_equal(ma.values, mb.values)
            assert ma.cost == mb.cost
            assert ma.natural_encoded

    def test_composite_unbiased(self):
        d, n = 12, 3
        spec = compose_spec(natural_spec(d), perm_k_spec(d, n))
        rng = rng_of(17)
        x = rng.standard_normal(d)
        draws = 40000
        total = np.zeros(d)
        for _ in range(draws):
            total += apply_collection(spec, "correlated", n, x, rng)[0].densify()
        mean = total / draws
        # Componentwise 4-standard-error band around x.
        spread = np.sqrt(n ** 2 * 1.125 / n) * np.abs(x) + 1e-9
        assert np.all(np.abs(mean - x) < 4 * spread / np.sqrt(draws) + 1e-9)

    def test_dimension_mismatch(self):
        with pytest.raises(CompressorError):
            compose_spec(natural_spec(4), rand_k_spec(6, 2))


class TestEstimators:
    def test_rand_k_all_ones_exact_ratio(self):
        # For the all-ones probe every draw gives ||C(x) - x||^2 / ||x||^2
        # = (k (d/k - 1)^2 + (d - k)) / d = d/k - 1 exactly.
        spec = rand_k_spec(10, 2)
        est = estimate_omega(spec, np.ones(10), 400, rng_of(18))
        assert est == pytest.approx(4.0, rel=0.05)

    def test_rand_k_full_k_zero(self):
        est = estimate_omega(rand_k_spec(6, 6), np.ones(6), 50, rng_of(19))
        assert est == 0.0

    def test_perm_k_within_stated(self):
        spec = perm_k_spec(20, 4)
        x = rng_of(20).standard_normal(20)
        est = estimate_omega(spec, x, 4000, rng_of(21))
        assert est <= 3.0 * 1.05

    def test_zero_probe_rejected(self):
        with pytest.raises(CompressorError):
            estimate_omega(rand_k_spec(4, 2), np.zeros(4), 100, rng_of(0))
        with pytest.raises(CompressorError):
            estimate_theta(perm_k_spec(4, 2), "correlated", 2, np.zeros(4),
                           10, rng_of(0))

    def test_theta_perm_exactly_zero(self):
        x = rng_of(22).standard_normal(30)
        est = estimate_theta(perm_k_spec(30, 5), "correlated", 5, x, 1, rng_of(23))
        assert est == 0.0

    def test_theta_independent_rand_k(self):
        d, n, k = 20, 5, 4
        spec = rand_k_spec(d, k)
        x = rng_of(24).standard_normal(d)
        est = estimate_theta(spec, "independent", n, x, 20000, rng_of(25))
        assert est == pytest.approx(spec.omega / n, rel=0.1)

    def test_theta_same_rand_k(self):
        d, n, k = 20, 5, 4
        spec = same_rand_k_spec(d, k)
        x = rng_of(26).standard_normal(d)
        est = estimate_theta(spec, "same", n, x, 20000, rng_of(27))
        assert est == pytest.approx(spec.omega, rel=0.1)

    def test_collection_theta_values(self):
        assert collection_theta(perm_k_spec(12, 4), "correlated", 4) == 0.0
        assert collection_theta(rand_k_spec(12, 3), "independent", 4) == pytest.approx(0.75)
        assert collection_theta(same_rand_k_spec(12, 3), "same", 4) == 3.0


class TestVarianceBounds:
    @pytest.mark.parametrize("make_spec", [
        lambda d, n: rand_k_spec(d, 5),
        lambda d, n: same_rand_k_spec(d, 5),
        lambda d, n: perm_k_spec(d, n),
        lambda d, n: natural_spec(d),
        lambda d, n: compose_spec(natural_spec(d), perm_k_spec(d, n)),
    ], ids=["rand_k", "same_rand_k", "perm_k", "natural", "natural_over_perm"])
    def test_empirical_omega_within_5_percent(self, make_spec):
        d, n = 20, 4
        spec = make_spec(d, n)
        rng = rng_of(28)
        for _ in range(20):
            x = rng.standard_normal(d)
            est = estimate_omega(spec, x, 2000, rng)
            assert est <= 1.05 * spec.omega + 1e-12


class TestDeterminism:
    def test_same_seed_bit_identical(self):
        x = rng_of(29).standard_normal(16)
        for spec in (rand_k_spec(16, 5), natural_spec(16),
                     compose_spec(natural_spec(16), rand_k_spec(16, 5))):
            a = apply_compressor(spec, x, rng_of(99))
            b = apply_compressor(spec, x, rng_of(99))
            np.testing.assert_array_equal(a.indices, b.indices)
            np.testing.assert_array_equal(a.values, b.values)
            assert a.cost == b.cost

    def test_validate_accepts_output(self):
        x = rng_of(30).standard_normal(10)
        msg = apply_rand_k(x, 4, rng_of(31))
        msg.validate()
