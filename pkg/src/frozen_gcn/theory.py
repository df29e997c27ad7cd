"""Monte Carlo checks of the distributional claims about untrained weights.

Every check returns a list of :class:`MonteCarloReport` rows. A row with a
``tolerance`` passes when ``|empirical - target| < tolerance``; otherwise it
passes when the gap is below ``k`` standard errors. Rows whose ``hard`` flag
is False are informational and do not count toward the suite verdict.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import special, stats

from frozen_gcn.linalg import glorot_init, largest_singular_value, make_rng, spmm

CSV_FIELDS = ["statistic", "empirical", "target", "stderr", "n", "pass"]


@dataclass(frozen=True)
class VGParams:
    """Variance-Gamma parameters (alpha, beta, lambda, mu)."""

    alpha: float = 0.5
    beta: float = 0.0
    lambda_vg: float = 0.5
    mu: float = 0.0

    @property
    def gamma2(self) -> float:
        return self.alpha ** 2 - self.beta ** 2

    def mean(self) -> float:
        return self.mu + 2 * self.beta * self.lambda_vg / self.gamma2

    def variance(self) -> float:
        g2 = self.gamma2
        return 2 * self.lambda_vg / g2 * (1 + 2 * self.beta ** 2 / g2)

    def fourth_central_moment(self) -> float:
        if self.beta != 0:
            raise NotImplementedError("only the symmetric case is supported")
        # excess kurtosis of the symmetric VG is 3 / lambda
        return self.variance() ** 2 * (3 + 3 / self.lambda_vg)

    def mgf(self, t):
        t = np.asarray(t, dtype=np.float64)
        return (np.exp(self.mu * t)
                * (self.gamma2 / (self.alpha ** 2 - (self.beta + t) ** 2)) ** self.lambda_vg)


PRODUCT_VG = VGParams(0.5, 0.0, 0.5, 0.0)


@dataclass
class MonteCarloReport:
    statistic: str
    empirical: float
    target: float
    stderr: float
    n: int
    k: float = 4.0
    tolerance: float | None = None
    hard: bool = True

    @property
    def passed(self) -> bool | None:
        if not self.hard:
            return None
        gap = abs(self.empirical - self.target)
        if self.tolerance is not None:
            return bool(gap < self.tolerance)
        return bool(gap < self.k * self.stderr)

    def row(self) -> dict:
        p = self.passed
        return {"statistic": self.statistic, "empirical": repr(float(self.empirical)),
                "target": repr(float(self.target)), "stderr": repr(float(self.stderr)),
                "n": self.n, "pass": "n/a" if p is None else str(p).lower()}


def write_reports(reports, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in reports:
            w.writerow(r.row())
    return path


def all_passed(reports) -> bool:
    return all(r.passed is not False for r in reports)


def _mean_report(name, x, target=0.0, k=4.0, hard=True):
    se = x.std(ddof=1) / math.sqrt(len(x))
    return MonteCarloReport(name, float(x.mean()), target, float(se), len(x), k=k, hard=hard)


def _variance_report(name, x, target, k=4.0, tolerance=None, hard=True):
    n = len(x)
    c = x - x.mean()
    var = float(np.mean(c * c) * n / (n - 1))
    m4 = float(np.mean(c ** 4))
    se = math.sqrt(max(m4 - var ** 2, 0.0) / n)
    return MonteCarloReport(name, var, target, se, n, k=k, tolerance=tolerance, hard=hard)


# ------------------------------------------------------ distribution checks

def sample_vg_difference(n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """``Z1^2 - Z2^2`` for independent standard normals: a difference of two
    independent chi-square(1) variables."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    z = rng.standard_normal((2, n_samples))
    return z[0] ** 2 - z[1] ** 2


def vg_moment_check(n_samples: int, rng: np.random.Generator,
                    params: VGParams = PRODUCT_VG, variance_target: float | None = None,
                    k_mean: float = 4.0, k_var: float = 4.0, k_m4: float = 5.0):
    f = sample_vg_difference(n_samples, rng)
    var_t = params.variance() if variance_target is None else variance_target
    f4 = f ** 4
    m4 = MonteCarloReport("vg_fourth_moment", float(f4.mean()),
                          params.fourth_central_moment(),
                          float(f4.std(ddof=1) / math.sqrt(n_samples)), n_samples, k=k_m4)
    return [
        _mean_report("vg_mean", f, params.mean(), k=k_mean),
        _variance_report("vg_variance", f, var_t, k=k_var),
        m4,
    ]


def product_entries(d: int, n_samples: int, rng: np.random.Generator,
                    chunk: int = 2 ** 22) -> np.ndarray:
    """Independent draws of ``sum_i a_i b_i`` with a, b ~ N(0, 1/d)."""
    out = np.empty(n_samples)
    per = max(1, chunk // d)
    scale = 1.0 / d
    for lo in range(0, n_samples, per):
        m = min(per, n_samples - lo)
        a = rng.standard_normal((m, d))
        b = rng.standard_normal((m, d))
        out[lo:lo + m] = np.einsum("ij,ij->i", a, b) * scale
    return out


def conditional_ks_distance(d: int, n_samples: int, rng: np.random.Generator,
                            grid: np.ndarray | None = None) -> float:
    """KS distance between the law of a length-d Glorot dot product and
    N(0, 1/d), estimated by conditioning on the first factor.

    Given a, the dot product is exactly N(0, |a|^2 / d), so its CDF is the
    average of Gaussian CDFs over sampled ``|a|^2``. The conditional
    estimator has far less noise than the empirical CDF of raw draws, whose
    sampling floor (~0.9 / sqrt(n)) hides deviations of order 1/d.
    """
    if grid is None:
        grid = np.linspace(-5.0, 5.0, 1001)  # in units of the target std
    v = rng.chisquare(d, size=n_samples) / d  # |a|^2 * d with a ~ N(0, 1/d)
    inv_sd = 1.0 / np.sqrt(v)
    cdf = np.zeros_like(grid)
    for lo in range(0, n_samples, 4096):
        cdf += special.ndtr(np.outer(inv_sd[lo:lo + 4096], grid)).sum(axis=0)
    cdf /= n_samples
    return float(np.max(np.abs(cdf - special.ndtr(grid))))


def gaussian_product_element_check(d: int, n_samples: int, rng: np.random.Generator,
                                   var_rel_tol: float = 0.05):
    """Entries of a product of two Glorot matrices versus N(0, 1/d)."""
    if d < 2:
        raise ValueError("d must be >= 2")
    x = product_entries(d, n_samples, rng)
    target = 1.0 / d
    ks = stats.kstest(x, "norm", args=(0.0, math.sqrt(target)))
    return [
        _mean_report(f"product_mean_d{d}", x),
        _variance_report(f"product_variance_d{d}", x, target,
                         tolerance=var_rel_tol * target),
        MonteCarloReport(f"product_ks_raw_d{d}", float(ks.statistic), 0.0,
                         0.87 / math.sqrt(n_samples), n_samples, hard=False),
        MonteCarloReport(f"product_ks_conditional_d{d}",
                         conditional_ks_distance(d, n_samples, rng), 0.0,
                         float("nan"), n_samples, hard=False),
    ]


def ks_convergence(widths, n_samples: int, rng: np.random.Generator) -> list[float]:
    return [conditional_ks_distance(d, n_samples, rng) for d in widths]


def chain_product(k_matrices: int, d: int, rng: np.random.Generator) -> np.ndarray:
    p = glorot_init(d, d, rng)
    for _ in range(k_matrices - 1):
        p = p @ glorot_init(d, d, rng)
    return p


def chain_product_check(k_matrices: int, d: int, rng: np.random.Generator,
                        var_rel_tol: float | None = None, compute_smax: bool = True):
    """Entries of a product of ``k`` independent Glorot d x d matrices."""
    if k_matrices < 1:
        raise ValueError("need at least one matrix")
    p = chain_product(k_matrices, d, rng)
    x = p.ravel()
    target = 1.0 / d
    if var_rel_tol is None:
        var_rel_tol = 0.05 if k_matrices <= 2 else 0.10
    ks = stats.kstest(x, "norm", args=(0.0, math.sqrt(target)))
    reports = [
        _mean_report(f"chain{k_matrices}_mean_d{d}", x),
        _variance_report(f"chain{k_matrices}_variance_d{d}", x, target,
                         tolerance=var_rel_tol * target),
        MonteCarloReport(f"chain{k_matrices}_ks_d{d}", float(ks.statistic), 0.0,
                         0.87 / math.sqrt(len(x)), len(x), hard=False),
    ]
    if compute_smax:
        s = largest_singular_value(p, tol=1e-8)
        reports.append(MonteCarloReport(f"chain{k_matrices}_smax_d{d}", s,
                                        float("nan"), float("nan"), 1, hard=False))
    return reports


def bai_yin_samples(n: int, trials: int, rng: np.random.Generator,
                    variance: float | None = None, tol: float = 1e-7) -> np.ndarray:
    """Largest singular values of ``trials`` square Gaussian matrices with
    entry variance ``variance`` (default Glorot, 1/n)."""
    if n < 2:
        raise ValueError("n too small")
    sd = 1.0 / math.sqrt(n) if variance is None else math.sqrt(variance)
    out = []
    for t in range(trials):
        m = rng.standard_normal((n, n)) * sd
        out.append(largest_singular_value(m, tol=tol, seed=t))
    return np.array(out)


def bai_yin_check(n: int, trials: int, rng: np.random.Generator,
                  band: float = 0.15, mean_band: float = 0.10):
    """Largest singular value of Glorot n x n matrices against the limit 2."""
    if n < 100:
        raise ValueError("n must be >= 100")
    s = bai_yin_samples(n, trials, rng)
    worst = float(s[np.argmax(np.abs(s - 2.0))])
    se = float(s.std(ddof=1) / math.sqrt(trials)) if trials > 1 else float("nan")
    return [
        MonteCarloReport(f"bai_yin_mean_smax_n{n}", float(s.mean()), 2.0, se, trials,
                         tolerance=mean_band),
        MonteCarloReport(f"bai_yin_worst_smax_n{n}", worst, 2.0, se, trials,
                         tolerance=band),
    ]


def propagated_features(adj, x: np.ndarray, depth: int) -> np.ndarray:
    """``B = A_hat^{depth-1} X``."""
    b = np.asarray(x, dtype=np.float64)
    for _ in range(depth - 1):
        b = spmm(adj, b)
    return b


@dataclass
class TheoryMatrices:
    """Pieces of the ReLU-free rewrite ``B W_left W_j W_right``."""

    b: np.ndarray
    w_left: np.ndarray | None
    w_right: np.ndarray | None
    j_scale: float


def theory_matrices(adj, x, depth: int, position: int, width: int,
                    rng: np.random.Generator) -> TheoryMatrices:
    """Frozen products around trainable layer ``position`` (1-based) for a
    depth-``depth`` model of constant ``width``."""
    if not 1 <= position <= depth - 1:
        raise ValueError("position must lie in [1, depth-1]")
    b = propagated_features(adj, x, depth)
    w_left = None
    dims = [x.shape[1]] + [width] * (depth - 1)
    for i in range(position - 1):
        w = glorot_init(dims[i], dims[i + 1], rng)
        w_left = w if w_left is None else w_left @ w
    w_right = None
    for _ in range(position, depth - 1):
        w = glorot_init(width, width, rng)
        w_right = w if w_right is None else w_right @ w
    return TheoryMatrices(b, w_left, w_right, j_scale=(2.0 / width) / 4)


def _top_k_mask(target: np.ndarray, k: int) -> np.ndarray:
    iu = np.triu_indices(target.shape[0])
    vals = np.abs(target[iu])
    order = np.argsort(-vals, kind="stable")[:k]
    mask = np.zeros_like(target, dtype=bool)
    mask[iu[0][order], iu[1][order]] = True
    return mask


def projected_covariance(b: np.ndarray, d: int, trials: int, rng: np.random.Generator):
    """Empirical row cross-covariance of ``B W`` (W Glorot, m x d), averaged
    over the d columns and ``trials`` draws, plus per-entry standard errors."""
    b = np.asarray(b, dtype=np.float64)
    if not np.any(b):
        raise ValueError("B is all zero")
    n, m = b.shape
    acc = np.zeros((n, n))
    acc2 = np.zeros((n, n))
    for _ in range(trials):
        y = b @ glorot_init(m, d, rng)
        c = y @ y.T / d  # each column of y is an independent draw
        acc += c
        acc2 += c * c
    mean = acc / trials
    if trials > 1:
        var_of_trial = np.maximum(acc2 / trials - mean ** 2, 0.0) * trials / (trials - 1)
        se = np.sqrt(var_of_trial / trials)
    else:
        se = np.full_like(mean, np.nan)
    return mean, se


def projected_covariance_check(b, d: int, trials: int, rng: np.random.Generator,
                               top_k: int = 100, rel_tol: float = 0.10):
    """Row covariance of ``B W`` versus ``B B^T / d`` on the largest entries."""
    if d < 1:
        raise ValueError("d must be positive")
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    emp, se = projected_covariance(b, d, trials, rng)
    target = b @ b.T / d
    mask = _top_k_mask(target, top_k)
    rel = np.abs(emp[mask] - target[mask]) / np.abs(target[mask])
    n_samples = d * trials
    reports = [MonteCarloReport("covariance_max_rel_dev_topk", float(rel.max()), 0.0,
                                float(np.max(se[mask] / np.abs(target[mask]))),
                                n_samples, tolerance=rel_tol)]
    off = ~np.eye(b.shape[0], dtype=bool)
    if off.any():
        i, j = np.unravel_index(np.argmax(np.where(off, np.abs(emp - target), -1)),
                                emp.shape)
        reports.append(MonteCarloReport("covariance_worst_offdiag", float(emp[i, j]),
                                        float(target[i, j]), float(se[i, j]),
                                        n_samples, hard=False))
    return reports


def correlation_vs_width_sweep(b, widths, trials: int, rng: np.random.Generator):
    """Similarity statistics of the rows of ``B W`` for growing width.

    One dict per width with the mean absolute pairwise row correlation, the
    mean absolute row covariance and the mean pairwise cosine similarity
    (each averaged over trials). A single-row B yields ``None`` statistics.
    """
    widths = list(widths)
    if any(b_ <= a_ for a_, b_ in zip(widths, widths[1:])):
        raise ValueError("widths must be ascending")
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    n, m = b.shape
    table = []
    for d in widths:
        if n < 2:
            table.append({"width": d, "mean_abs_corr": None, "mean_abs_cov": None,
                          "mean_cosine": None, "trials": trials})
            continue
        iu = np.triu_indices(n, k=1)
        corr, cov, cos = [], [], []
        for _ in range(trials):
            y = b @ glorot_init(m, d, rng)
            c = np.cov(y)
            sd = np.sqrt(np.diag(c))
            with np.errstate(invalid="ignore", divide="ignore"):
                r = c / np.outer(sd, sd)
            corr.append(np.nanmean(np.abs(r[iu])))
            cov.append(np.mean(np.abs(c[iu])))
            nrm = np.linalg.norm(y, axis=1)
            nrm[nrm == 0] = 1.0
            u = y / nrm[:, None]
            cos.append(np.mean((u @ u.T)[iu]))
        table.append({"width": d, "mean_abs_corr": float(np.mean(corr)),
                      "mean_abs_cov": float(np.mean(cov)),
                      "mean_cosine": float(np.mean(cos)), "trials": trials})
    return table


def write_table(rows, path) -> Path:
    path = Path(path)
    fields = list(rows[0].keys()) if rows else []
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("n/a" if v is None else repr(v) if isinstance(v, float) else v)
                        for k, v in r.items()})
    return path


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """Independent substream for trial ``trial`` of a seeded run."""
    return make_rng((seed, trial))
