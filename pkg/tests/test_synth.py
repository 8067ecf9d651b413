"""Covariance construction, sampling, labels, pooled estimation, CSV ingestion."""

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import norm

from angcal.errors import ContractError, CovarianceError, IngestError, SingularCovariance
from angcal.links import LinkFunction
from angcal.synth import (
    CovarianceSpec,
    Dataset,
    Provenance,
    estimate_covariance,
    generate_labels,
    load_design_csv,
    make_covariance,
    make_synthetic_dataset,
    matrix_sqrt_and_invsqrt,
    sample_design,
    sample_true_weight,
)
from helpers import random_spd


class TestMakeCovariance:
    def test_ar1_paper_configuration(self):
        sigma = make_covariance(CovarianceSpec.ar1(0.5, 4, scale=0.25))
        assert sigma[0, 1] == pytest.approx(0.125, abs=0)
        assert sigma[0, 0] == pytest.approx(0.25, abs=0)

    def test_identity(self):
        np.testing.assert_array_equal(
            make_covariance(CovarianceSpec.identity(3)), np.eye(3)
        )

    def test_ar1_zero_rho_decorrelates(self):
        d = 6
        np.testing.assert_array_equal(
            make_covariance(CovarianceSpec.ar1(0.0, d)), np.eye(d) / d
        )

    def test_ar1_closed_form_exact(self):
        # bitwise exact when 1/d is a binary fraction; one ulp otherwise
        idx8 = np.arange(8)
        sigma8 = make_covariance(CovarianceSpec.ar1(-0.3, 8))
        np.testing.assert_array_equal(8 * sigma8, (-0.3) ** np.abs(idx8[:, None] - idx8[None, :]))
        d, rho = 9, -0.3
        sigma = make_covariance(CovarianceSpec.ar1(rho, d))
        idx = np.arange(d)
        np.testing.assert_allclose(
            d * sigma, rho ** np.abs(idx[:, None] - idx[None, :]), rtol=4e-16, atol=0
        )

    def test_external_validated(self):
        good = np.array([[2.0, 0.5], [0.5, 1.0]])
        np.testing.assert_allclose(
            make_covariance(CovarianceSpec.external(good, scale=2.0)), 2.0 * good
        )
        with pytest.raises(CovarianceError):
            make_covariance(CovarianceSpec.external(np.array([[1.0, 0.4], [0.0, 1.0]])))
        with pytest.raises(CovarianceError):
            make_covariance(CovarianceSpec.external(np.array([[1.0, 2.0], [2.0, 1.0]])))

    def test_spec_validation(self):
        with pytest.raises(ContractError):
            CovarianceSpec.ar1(1.0, 4)
        with pytest.raises(ContractError):
            CovarianceSpec("ar1", 4, scale=-1.0, rho=0.5)


class TestMatrixSqrt:
    def test_identity(self):
        root, inv_root = matrix_sqrt_and_invsqrt(np.eye(4))
        np.testing.assert_allclose(root, np.eye(4), atol=1e-14)
        np.testing.assert_allclose(inv_root, np.eye(4), atol=1e-14)

    def test_diagonal(self):
        root, inv_root = matrix_sqrt_and_invsqrt(np.diag([4.0, 9.0]))
        np.testing.assert_allclose(root, np.diag([2.0, 3.0]), atol=1e-14)
        np.testing.assert_allclose(inv_root, np.diag([0.5, 1.0 / 3.0]), atol=1e-14)

    def test_ar1_multiply_back(self):
        sigma = make_covariance(CovarianceSpec.ar1(0.5, 5))
        root, inv_root = matrix_sqrt_and_invsqrt(sigma)
        np.testing.assert_allclose(root @ root, sigma, atol=1e-12)
        np.testing.assert_allclose(inv_root @ sigma @ inv_root, np.eye(5), atol=1e-12)

    @pytest.mark.parametrize("d", [20, 120, 500])
    def test_random_spd_multiply_back(self, d):
        mat = random_spd(np.random.default_rng(d), d, cond=1e4)
        root, inv_root = matrix_sqrt_and_invsqrt(mat)
        rel = np.linalg.norm(root @ root - mat) / np.linalg.norm(mat)
        assert rel <= 1e-8
        np.testing.assert_allclose(root, root.T, atol=0)
        np.testing.assert_allclose(inv_root, inv_root.T, atol=0)

    def test_near_singular_rejected(self):
        with pytest.raises(SingularCovariance):
            matrix_sqrt_and_invsqrt(np.diag([1.0, 1e-14]))


class TestSampleDesign:
    def test_gaussian_moments(self):
        X = sample_design(10**5, CovarianceSpec.identity(2), "gaussian", seed=4)
        emp = X.T @ X / X.shape[0]
        assert np.max(np.abs(emp - np.eye(2))) <= 0.02

    def test_rademacher_exact_preimage(self):
        spec = CovarianceSpec.ar1(0.4, 6)
        sigma = make_covariance(spec)
        _, inv_root = matrix_sqrt_and_invsqrt(sigma)
        X = sample_design(50, spec, "rademacher", seed=1)
        z = X @ inv_root
        np.testing.assert_allclose(np.abs(z), 1.0, atol=1e-9)

    def test_seed_determinism(self):
        spec = CovarianceSpec.ar1(0.5, 8)
        a = sample_design(10, spec, "gaussian", seed=3)
        b = sample_design(10, spec, "gaussian", seed=3)
        c = sample_design(10, spec, "gaussian", seed=4)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)


class TestTrueWeight:
    def test_unit_sigma_norm(self):
        spec = CovarianceSpec.ar1(0.5, 30)
        sigma = make_covariance(spec)
        for seed in range(5):
            w = sample_true_weight(spec, seed, sigma=sigma)
            assert abs(np.sqrt(w @ sigma @ w) - 1.0) <= 1e-12

    def test_one_dimensional_sign(self):
        spec = CovarianceSpec.identity(1)
        assert sample_true_weight(spec, 0)[0] in (-1.0, 1.0)

    def test_distinct_seeds_distinct_vectors(self):
        spec = CovarianceSpec.identity(5)
        assert not np.array_equal(sample_true_weight(spec, 1), sample_true_weight(spec, 2))


class TestGenerateLabels:
    def test_degenerate_links(self):
        X = np.random.default_rng(0).standard_normal((40, 3))
        w = np.ones(3)
        ones = generate_labels(X, w, LinkFunction.clipped_relu_affine(0.0, 1.0), seed=1)
        zeros = generate_labels(X, w, LinkFunction.clipped_relu_affine(0.0, 0.0), seed=1)
        assert np.all(ones == 1.0) and np.all(zeros == 0.0)

    def test_mean_matches_quadrature_oracle(self):
        # labels on a unit-norm index: mean(y) ~ E sigmoid(3Z + 1)
        link = LinkFunction.sigmoid_affine(3.0, 1.0)
        spec = CovarianceSpec.identity(10, scale=0.1)
        sigma = make_covariance(spec)
        w = sample_true_weight(spec, 3, sigma=sigma)
        X = sample_design(10**5, spec, "gaussian", seed=3)
        y = generate_labels(X, w, link, seed=3)
        oracle, _ = quad(lambda z: link(z) * norm.pdf(z), -12, 12)
        assert abs(y.mean() - oracle) <= 0.01

    def test_per_row_frequency(self):
        link = LinkFunction.sigmoid_affine(3.0, 1.0)
        X = np.random.default_rng(2).standard_normal((5, 4)) * 0.3
        w = np.array([0.7, -0.2, 0.4, 0.1])
        probs = link(X @ w)
        reps = 10**4
        counts = np.zeros(5)
        for seed in range(reps):
            counts += generate_labels(X, w, link, seed=seed)
        freq = counts / reps
        bound = 5.0 * np.sqrt(probs * (1.0 - probs) / reps)
        assert np.all(np.abs(freq - probs) <= np.maximum(bound, 1e-12))

    def test_dim_mismatch(self):
        with pytest.raises(ContractError):
            generate_labels(np.ones((3, 2)), np.ones(3), LinkFunction.sigmoid_affine(1, 0), 0)


class TestEstimateCovariance:
    def test_monte_carlo_oracle(self):
        d = 12
        spec = CovarianceSpec.ar1(0.6, d, scale=1.0)
        sigma = make_covariance(spec)
        pool = sample_design(50 * d, spec, "gaussian", seed=7)
        est = estimate_covariance(pool, ridge=0.0)
        err = np.linalg.norm(est - sigma, ord=2)
        assert err <= 0.1 * np.linalg.norm(sigma, ord=2)

    def test_ridge_forces_pd(self):
        pool = np.tile(np.ones(4), (6, 1))
        est = estimate_covariance(pool, ridge=0.5)
        assert np.linalg.eigvalsh(est)[0] > 0

    def test_orthogonal_rows_identity(self):
        d = 5
        pool = np.sqrt(d) * np.eye(d)
        np.testing.assert_allclose(estimate_covariance(pool, ridge=0.0), np.eye(d), atol=1e-14)

    def test_contract(self):
        with pytest.raises(ContractError):
            estimate_covariance(np.ones((1, 3)))
        with pytest.raises(ContractError):
            estimate_covariance(np.ones((5, 3)), ridge=-0.1)


class TestLoadDesignCsv:
    def test_basic_parse(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("a,b\n1,2\n3,4\n")
        np.testing.assert_array_equal(load_design_csv(path), [[1.0, 2.0], [3.0, 4.0]])

    def test_round_trip(self, tmp_path):
        mat = np.random.default_rng(1).standard_normal((7, 3))
        path = tmp_path / "rt.csv"
        header = ",".join(f"c{j}" for j in range(3))
        rows = "\n".join(",".join(format(v, ".17g") for v in row) for row in mat)
        path.write_text(header + "\n" + rows + "\n")
        np.testing.assert_array_equal(load_design_csv(path), mat)

    def test_non_numeric_cell_location(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1,2\n3,x\n")
        with pytest.raises(IngestError) as err:
            load_design_csv(path)
        assert err.value.row == 3 and err.value.col == 2

    def test_ragged_row(self, tmp_path):
        path = tmp_path / "ragged.csv"
        path.write_text("a,b\n1,2\n3\n")
        with pytest.raises(IngestError) as err:
            load_design_csv(path)
        assert err.value.row == 3

    def test_empty_and_header_only(self, tmp_path):
        empty = tmp_path / "empty.csv"
        empty.write_text("")
        with pytest.raises(IngestError):
            load_design_csv(empty)
        header_only = tmp_path / "h.csv"
        header_only.write_text("a,b\n")
        with pytest.raises(IngestError):
            load_design_csv(header_only)

    def test_non_finite_rejected(self, tmp_path):
        path = tmp_path / "inf.csv"
        path.write_text("a\nnan\n")
        with pytest.raises(IngestError) as err:
            load_design_csv(path)
        assert err.value.row == 2 and err.value.col == 1


class TestDataset:
    def test_synthetic_weight_normalized(self):
        spec = CovarianceSpec.ar1(0.5, 20)
        ds = make_synthetic_dataset(30, spec, LinkFunction.sigmoid_affine(3, 1), seed=2)
        sigma = make_covariance(spec)
        w = ds.provenance.w_star
        assert abs(np.sqrt(w @ sigma @ w) - 1.0) <= 1e-10
        assert set(np.unique(ds.y)) <= {0.0, 1.0}

    def test_invariants_enforced(self):
        prov = Provenance(kind="external")
        with pytest.raises(ContractError):
            Dataset(X=np.array([[np.inf]]), y=np.array([1.0]), provenance=prov)
        with pytest.raises(ContractError):
            Dataset(X=np.ones((2, 1)), y=np.array([0.0, 2.0]), provenance=prov)
        with pytest.raises(ContractError):
            Dataset(X=np.ones((2, 1)), y=np.array([0.0]), provenance=prov)
