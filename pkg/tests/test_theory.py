import csv
import math

import numpy as np
import pytest
from scipy import integrate, stats

from frozen_gcn.graph import bundle_adjacency, karate_bundle
from frozen_gcn.linalg import make_rng
from frozen_gcn.theory import (PRODUCT_VG, MonteCarloReport, VGParams, all_passed,
                               bai_yin_check, bai_yin_samples, chain_product,
                               chain_product_check, conditional_ks_distance,
                               correlation_vs_width_sweep, gaussian_product_element_check,
                               product_entries, projected_covariance_check,
                               propagated_features, sample_vg_difference, theory_matrices,
                               trial_rng, vg_moment_check, write_reports, write_table)


def by_name(reports):
    return {r.statistic: r for r in reports}


def test_vg_closed_forms():
    # chi-square moment algebra: E[(Q-R)^4] = 2*105 - 2*60 + 6*9 with E[Q^k] = 1, 3, 15, 105
    q = [1, 1, 3, 15, 105]
    m4 = 2 * q[4] - 8 * q[3] * q[1] + 6 * q[2] ** 2
    assert m4 == 144
    assert PRODUCT_VG.mean() == 0
    assert PRODUCT_VG.variance() == 4
    assert PRODUCT_VG.fourth_central_moment() == 144


def test_vg_mgf_matches_chi_square_difference():
    # MGF of Q - R is (1 - 2t)^{-1/2} (1 + 2t)^{-1/2}
    t = np.linspace(-0.45, 0.45, 19)
    np.testing.assert_allclose(PRODUCT_VG.mgf(t), (1 - 4 * t ** 2) ** -0.5, rtol=1e-12)


def test_vg_asymmetric_moments():
    p = VGParams(2.0, 1.0, 3.0, 0.5)
    assert p.mean() == pytest.approx(0.5 + 2 * 1 * 3 / 3)
    with pytest.raises(NotImplementedError):
        p.fourth_central_moment()


def test_vg_samples():
    x = sample_vg_difference(10, make_rng(0))
    assert x.shape == (10,)
    with pytest.raises(ValueError):
        sample_vg_difference(0, make_rng(0))
    reps = by_name(vg_moment_check(200_000, make_rng(1)))
    assert all_passed(reps.values())
    assert reps["vg_variance"].target == 4


def test_vg_injected_target_fails():
    assert not all_passed(vg_moment_check(200_000, make_rng(1), variance_target=4.5))


def test_report_pass_rules():
    r = MonteCarloReport("x", 1.0, 0.0, 0.3, 10)
    assert r.passed is True
    assert MonteCarloReport("x", 1.0, 0.0, 0.2, 10).passed is False
    assert MonteCarloReport("x", 1.0, 0.0, 0.2, 10, tolerance=1.5).passed is True
    assert MonteCarloReport("x", 1.0, 0.0, 0.2, 10, hard=False).passed is None
    assert r.row()["pass"] == "true"


def test_write_reports(tmp_path):
    path = write_reports(vg_moment_check(1000, make_rng(0)), tmp_path / "r.csv")
    rows = list(csv.DictReader(open(path)))
    assert list(rows[0]) == ["statistic", "empirical", "target", "stderr", "n", "pass"]
    assert len(rows) == 3


def test_product_entries_variance():
    x = product_entries(64, 50_000, make_rng(0))
    se = math.sqrt(2 / 64 ** 2 / 50_000) * math.sqrt(1 + 3 / 64)
    assert abs(x.var() - 1 / 64) < 4 * se


def test_gaussian_product_d1024():
    reps = by_name(gaussian_product_element_check(1024, 100_000, make_rng(2)))
    v = reps["product_variance_d1024"]
    assert abs(v.empirical - 1 / 1024) < 0.05 / 1024 and v.passed
    assert reps["product_mean_d1024"].passed
    assert reps["product_ks_raw_d1024"].passed is None


def test_gaussian_product_small_d_ks_larger():
    small = conditional_ks_distance(4, 20_000, make_rng(3))
    large = conditional_ks_distance(1024, 20_000, make_rng(4))
    assert small > 10 * large
    raw = stats.kstest(product_entries(4, 20_000, make_rng(5)), "norm", args=(0, 0.5))
    assert raw.pvalue < 1e-6
    with pytest.raises(ValueError):
        gaussian_product_element_check(1, 10, make_rng(0))


def test_conditional_ks_oracle():
    # exact mixture CDF by quadrature over the chi-square law of |a|^2 d
    d = 16
    grid = np.linspace(-4, 4, 41)
    v = np.linspace(1e-6, 6, 60_001)
    w = stats.chi2.pdf(v * d, d) * d
    cdf = integrate.trapezoid(stats.norm.cdf(np.outer(grid, 1 / np.sqrt(v))) * w, v, axis=1)
    exact = np.max(np.abs(cdf - stats.norm.cdf(grid)))
    est = conditional_ks_distance(d, 400_000, make_rng(6), grid=grid)
    assert est == pytest.approx(exact, rel=0.03)


def test_chain_products():
    rng = make_rng(7)
    one = chain_product(1, 64, make_rng(8))
    assert one.shape == (64, 64)
    for k, tol in ((2, 0.05), (5, 0.10)):
        reps = chain_product_check(k, 512, rng, compute_smax=False)
        v = reps[1]
        assert v.tolerance == pytest.approx(tol / 512)
        assert v.passed and reps[0].passed
    for k in range(1, 9):
        assert chain_product_check(k, 128, rng, compute_smax=False)[0].passed


def test_chain_smax_reported():
    reps = by_name(chain_product_check(2, 256, make_rng(9)))
    assert reps["chain2_smax_d256"].empirical > 2.0


def test_bai_yin_small():
    reps = bai_yin_check(500, 3, make_rng(10))
    assert all_passed(reps)
    s = bai_yin_samples(400, 2, make_rng(11), variance=1.0)
    np.testing.assert_allclose(s, 2 * math.sqrt(400), rtol=0.05)
    with pytest.raises(ValueError):
        bai_yin_check(50, 1, make_rng(0))


@pytest.mark.slow
def test_bai_yin_convergence_trend():
    lo = bai_yin_samples(500, 5, make_rng(12)).mean()
    hi = bai_yin_samples(3000, 3, make_rng(13)).mean()
    assert abs(hi - 2) < abs(lo - 2)
    assert 1.9 <= bai_yin_samples(1000, 10, make_rng(14)).mean() <= 2.1
    s = bai_yin_samples(1000, 1, make_rng(15), variance=1.0)[0]
    assert s == pytest.approx(2 * math.sqrt(1000), rel=0.03)


def test_covariance_single_row():
    b = np.array([[1.0, -2.0, 0.5, 3.0]])
    reps = projected_covariance_check(b, 256, 400, make_rng(16))
    assert reps[0].empirical < 0.05
    assert len(reps) == 1


def test_covariance_orthogonal_rows():
    b = np.array([[1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, -1.0]])
    reps = projected_covariance_check(b, 128, 300, make_rng(17), top_k=2)
    off = reps[1]
    assert off.target == 0.0
    assert abs(off.empirical) < 4 * off.stderr
    with pytest.raises(ValueError):
        projected_covariance_check(np.zeros((2, 3)), 64, 2, make_rng(0))


def test_theory_matrices_shapes():
    kb = karate_bundle()
    adj = bundle_adjacency(kb)
    tm = theory_matrices(adj, kb.features, 4, 2, 32, make_rng(0))
    np.testing.assert_allclose(tm.b, np.linalg.matrix_power(adj.toarray(), 3), atol=1e-12)
    assert tm.w_left.shape == (34, 32) and tm.w_right.shape == (32, 32)
    np.testing.assert_array_equal(propagated_features(adj, kb.features, 1), kb.features)
    with pytest.raises(ValueError):
        theory_matrices(adj, kb.features, 4, 4, 32, make_rng(0))


def test_sweep_constant_rows():
    b = np.tile([[1.0, 2.0, -1.0]], (4, 1))
    table = correlation_vs_width_sweep(b, [16, 64], 3, make_rng(18))
    for row in table:
        assert row["mean_abs_corr"] == pytest.approx(1.0)
        assert row["mean_cosine"] == pytest.approx(1.0)


def test_sweep_single_row_and_order(tmp_path):
    table = correlation_vs_width_sweep(np.ones((1, 3)), [8, 16], 2, make_rng(0))
    assert all(r["mean_abs_corr"] is None for r in table)
    path = write_table(table, tmp_path / "t.csv")
    assert "n/a" in path.read_text()
    with pytest.raises(ValueError):
        correlation_vs_width_sweep(np.ones((2, 3)), [16, 8], 2, make_rng(0))


def test_sweep_random_rows():
    b = make_rng(19).standard_normal((10, 20))
    table = correlation_vs_width_sweep(b, [64, 512, 4096], 5, make_rng(20))
    cov = [r["mean_abs_cov"] for r in table]
    assert cov[0] > cov[1] > cov[2]
    assert all(0 < r["mean_abs_corr"] <= 1 for r in table)


def test_trial_rng_streams():
    a = trial_rng(3, 0).standard_normal(4)
    assert np.array_equal(a, trial_rng(3, 0).standard_normal(4))
    assert not np.array_equal(a, trial_rng(3, 1).standard_normal(4))
