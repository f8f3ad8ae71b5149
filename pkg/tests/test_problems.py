import math

import numpy as np
import pytest

import stiefel_dec as sd
from stiefel_dec import (
    DimensionError,
    EigLocal,
    IngestionError,
    LocalObjective,
    ParameterError,
    SmoothnessConstants,
    StiefelPoint,
)


def col(*vals):
    return np.asarray(vals, dtype=float).reshape(-1, 1)


E1 = StiefelPoint(col(1.0, 0.0))


def local_with_gram(diag):
    """EigLocal whose Gram matrix is diag(diag): rows sqrt(diag_i) e_i."""
    d = len(diag)
    return EigLocal(np.diag(np.sqrt(np.asarray(diag, dtype=float))))


class TestEigValueAndGrad:
    def test_identity_gram(self):
        rng = np.random.default_rng(0)
        o = local_with_gram([1.0] * 6)
        x = sd.random_stiefel(6, 2, rng)
        assert np.isclose(sd.eig_value(o, x), -1.0, atol=1e-12)  # -r/2
        assert np.allclose(sd.eig_egrad(o, x), -x.data, atol=1e-12)

    def test_diag_2_1(self):
        o = local_with_gram([2.0, 1.0])
        assert np.isclose(sd.eig_value(o, E1), -1.0, atol=1e-15)
        assert np.allclose(sd.eig_egrad(o, E1), col(-2.0, 0.0), atol=1e-15)

    def test_matches_ambient_finite_differences(self):
        rng = np.random.default_rng(1)
        h = 1e-5
        for _ in range(20):
            a = rng.standard_normal((8, 5))
            o = EigLocal(a)
            x = sd.random_stiefel(5, 2, rng)
            grad = o.euclidean_grad(x)
            for _ in range(5):
                e = rng.standard_normal((5, 2))
                e /= np.linalg.norm(e)
                fp = -0.5 * np.sum((x.data + h * e) * (o.gram @ (x.data + h * e)))
                fm = -0.5 * np.sum((x.data - h * e) * (o.gram @ (x.data - h * e)))
                numeric = (fp - fm) / (2.0 * h)
                assert abs(numeric - float(np.sum(grad * e))) <= 1e-6

    def test_shape_mismatch(self):
        o = local_with_gram([1.0, 1.0, 1.0])
        with pytest.raises(DimensionError):
            o.value(E1)

    def test_protocol_conformance(self):
        assert isinstance(local_with_gram([1.0, 2.0]), LocalObjective)


class TestStochasticGrad:
    def test_full_batch_exact(self):
        rng = np.random.default_rng(2)
        o = EigLocal(rng.standard_normal((7, 4)))
        x = sd.random_stiefel(4, 2, rng)
        out = o.stochastic_egrad(x, np.arange(7))
        assert np.allclose(out, o.euclidean_grad(x), atol=1e-12)

    def test_epoch_partition_telescopes(self):
        # batch-size-weighted average over a disjoint partition is exact
        rng = np.random.default_rng(3)
        o = EigLocal(rng.standard_normal((10, 5)))
        x = sd.random_stiefel(5, 2, rng)
        perm = rng.permutation(10)
        acc = np.zeros((5, 2))
        for chunk in (perm[:4], perm[4:7], perm[7:]):
            acc += (len(chunk) / 10.0) * o.stochastic_egrad(x, chunk)
        assert np.abs(acc - o.euclidean_grad(x)).max() <= 1e-12

    def test_two_row_enumeration(self):
        o = EigLocal(np.eye(2))
        g1 = o.stochastic_egrad(E1, [0])
        g2 = o.stochastic_egrad(E1, [1])
        assert np.allclose(g1, col(-2.0, 0.0), atol=1e-15)
        assert np.allclose(g2, col(0.0, 0.0), atol=1e-15)
        assert np.allclose((g1 + g2) / 2.0, o.euclidean_grad(E1), atol=1e-15)

    def test_empty_batch(self):
        o = local_with_gram([1.0, 1.0])
        with pytest.raises(ParameterError):
            o.stochastic_egrad(E1, [])

    def test_out_of_range_batch(self):
        o = local_with_gram([1.0, 1.0])
        with pytest.raises(ParameterError):
            o.stochastic_egrad(E1, [5])

    def test_rng_batch_draw(self):
        rng = np.random.default_rng(4)
        o = EigLocal(rng.standard_normal((9, 3)))
        x = sd.random_stiefel(3, 1, rng)
        v = o.stochastic_euclidean_grad(x, 3, np.random.default_rng(5))
        w = o.stochastic_euclidean_grad(x, 3, np.random.default_rng(5))
        assert np.array_equal(v, w)


class TestQuadraticConstants:
    def test_identity(self):
        c = sd.quadratic_constants([local_with_gram([1.0, 1.0])], r=1)
        assert (c.l, c.l_n, c.l_g, c.l_big, c.d_bound) == (1.0, 1.0, 2.0, 3.0, 1.0)

    def test_diag_4_1(self):
        c = sd.quadratic_constants([local_with_gram([4.0, 1.0])], r=1)
        assert c.l == 4.0 and c.d_bound == 4.0

    def test_bound_dominates_sampled_sup(self):
        # sqrt(r) l_n really is an upper bound for sup ||grad f||_F
        rng = np.random.default_rng(6)
        a = rng.standard_normal((12, 6))
        o = EigLocal(a)
        c = sd.quadratic_constants([o], r=2)
        sup = max(
            float(np.linalg.norm(o.euclidean_grad(sd.random_stiefel(6, 2, rng))))
            for _ in range(10000)
        )
        assert sup <= c.d_bound + 1e-12

    def test_quadratic_scaling(self):
        rng = np.random.default_rng(7)
        a = rng.standard_normal((8, 4))
        c1 = sd.quadratic_constants([EigLocal(a)], r=2)
        c3 = sd.quadratic_constants([EigLocal(3.0 * a)], r=2)
        for name in ("l", "l_n", "d_bound"):
            assert np.isclose(getattr(c3, name), 9.0 * getattr(c1, name), rtol=1e-12)

    def test_invariant_validation(self):
        with pytest.raises(ParameterError):
            SmoothnessConstants(l=1.0, l_n=1.0, l_g=4.0, l_big=3.0, d_bound=1.0)
        with pytest.raises(ParameterError):
            SmoothnessConstants(l=-1.0, l_n=1.0, l_g=2.0, l_big=3.0, d_bound=1.0)


class TestLipschitzInequalities:
    def setup_method(self):
        rng = np.random.default_rng(8)
        self.locals_, _ = sd.synthesize_eigengap_data(4, 10, 8, 2, 0.7, seed=[8, 0])
        # keep the scale moderate so the suite exercises nontrivial values
        self.constants = sd.quadratic_constants(self.locals_, r=2)
        self.rng = rng

    def _f(self, x):
        return sum(o.value(x) for o in self.locals_) / len(self.locals_)

    def _grad(self, x):
        acc = sum(o.euclidean_grad(x) for o in self.locals_) / len(self.locals_)
        return sd.riemannian_gradient(x, acc).data

    def test_function_inequality_1000_pairs(self):
        lg = self.constants.l_g
        for _ in range(1000):
            x = sd.random_stiefel(8, 2, self.rng)
            y = sd.random_stiefel(8, 2, self.rng)
            diff = y.data - x.data
            lhs = abs(self._f(y) - self._f(x) - float(np.sum(self._grad(x) * diff)))
            assert lhs <= 0.5 * lg * np.linalg.norm(diff) ** 2 + 1e-10

    def test_gradient_inequality_1000_pairs(self):
        lb = self.constants.l_big
        for _ in range(1000):
            x = sd.random_stiefel(8, 2, self.rng)
            y = sd.random_stiefel(8, 2, self.rng)
            lhs = np.linalg.norm(self._grad(x) - self._grad(y))
            assert lhs <= lb * np.linalg.norm(y.data - x.data) + 1e-10


class TestSynthesizeEigengapData:
    def test_singular_value_ratios(self):
        locals_, _ = sd.synthesize_eigengap_data(4, 10, 12, 3, 0.8, seed=123)
        a = np.vstack([o.rows for o in locals_])
        s = np.linalg.svd(a, compute_uv=False)
        ratios = s[1:] / s[:-1]
        assert np.abs(ratios - math.sqrt(0.8)).max() <= 1e-10
        assert np.isclose(s[1] / s[0], 0.894427, atol=1e-6)

    def test_oracle_matches_generator(self):
        locals_, xstar = sd.synthesize_eigengap_data(5, 8, 10, 2, 0.6, seed=9)
        oracle = sd.centralized_oracle(locals_, 2)
        assert sd.subspace_distance(oracle, xstar) <= 1e-10

    def test_paper_scale_accepted(self):
        locals_, xstar = sd.synthesize_eigengap_data(32, 1000, 100, 5, 0.8, seed=10)
        assert len(locals_) == 32
        assert locals_[0].rows.shape == (1000, 100)
        assert (xstar.d, xstar.r) == (100, 5)

    def test_block_split(self):
        locals_, _ = sd.synthesize_eigengap_data(3, 5, 6, 1, 0.5, seed=11)
        assert [o.sample_count for o in locals_] == [5, 5, 5]

    def test_infeasible_dims(self):
        with pytest.raises(ParameterError):
            sd.synthesize_eigengap_data(2, 2, 10, 1, 0.5, seed=0)  # n*m < d
        with pytest.raises(ParameterError):
            sd.synthesize_eigengap_data(2, 10, 5, 1, 1.5, seed=0)  # gap out of range


class TestLoadDsvPartition:
    def test_block_sizes_with_remainder(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("\n".join(",".join(str(i + j) for j in range(3)) for i in range(10)))
        blocks = sd.load_dsv_partition(path, 3)
        assert [b.sample_count for b in blocks] == [4, 3, 3]

    def test_divisor(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("255,510\n255,255\n")
        blocks = sd.load_dsv_partition(path, 1, normalize_divisor=255.0)
        assert np.allclose(blocks[0].rows, [[1.0, 2.0], [1.0, 1.0]])

    def test_whitespace_delimited_and_header(self, tmp_path):
        path = tmp_path / "data.txt"
        path.write_text("colA colB\n1 2\n3 4\n")
        blocks = sd.load_dsv_partition(path, 1)
        assert blocks[0].sample_count == 2

    def test_malformed_row_names_line(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("1,2\n3,4\n1,2,x\n")
        with pytest.raises(IngestionError, match="line 3"):
            sd.load_dsv_partition(path, 1)

    def test_non_numeric_field_names_line(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("1,2\n3,4\n1,x\n")
        with pytest.raises(IngestionError, match="line 3.*'x'"):
            sd.load_dsv_partition(path, 1)

    def test_too_few_rows(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("1,2\n3,4\n")
        with pytest.raises(IngestionError):
            sd.load_dsv_partition(path, 3)


class TestCentralizedOracle:
    def test_diag_spectrum(self):
        o = local_with_gram([3.0, 2.0, 1.0])
        oracle = sd.centralized_oracle([o], 2)
        target = np.eye(3)[:, :2]
        assert sd.subspace_distance(oracle, StiefelPoint(target)) <= 1e-12

    def test_oracle_is_minimizer(self):
        rng = np.random.default_rng(12)
        locals_, _ = sd.synthesize_eigengap_data(4, 10, 8, 2, 0.7, seed=13)
        oracle = sd.centralized_oracle(locals_, 2)
        f_star = sum(o.value(oracle) for o in locals_)
        for _ in range(100):
            x = sd.random_stiefel(8, 2, rng)
            assert f_star <= sum(o.value(x) for o in locals_) + 1e-10

    def test_flat_spectrum_warns(self):
        o = local_with_gram([1.0, 1.0, 1.0])
        with pytest.warns(RuntimeWarning):
            sd.centralized_oracle([o], 1)

    def test_bad_r(self):
        with pytest.raises(ParameterError):
            sd.centralized_oracle([local_with_gram([1.0, 2.0])], 3)


class TestEstimateXi:
    def test_positive_and_deterministic(self):
        rng = np.random.default_rng(14)
        locals_, _ = sd.synthesize_eigengap_data(3, 12, 6, 2, 0.7, seed=15)
        x = sd.random_stiefel(6, 2, rng)
        a = sd.estimate_xi(locals_, x, np.random.default_rng(16), draws=64)
        b = sd.estimate_xi(locals_, x, np.random.default_rng(16), draws=64)
        assert a == b and a > 0.0

    def test_bounds_observed_deviation(self):
        locals_, _ = sd.synthesize_eigengap_data(3, 12, 6, 2, 0.7, seed=17)
        x = sd.random_stiefel(6, 2, np.random.default_rng(18))
        xi = sd.estimate_xi(locals_, x, np.random.default_rng(19), draws=256)
        o = locals_[0]
        # any single draw it saw is within the reported bound
        v = o.stochastic_egrad(x, [0])
        assert np.linalg.norm(v - o.euclidean_grad(x)) <= xi + 1e-9
