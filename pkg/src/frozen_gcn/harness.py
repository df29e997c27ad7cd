"""Experiment harness: seeded repeated runs, sweeps and the theory suite."""

from __future__ import annotations

import csv
import dataclasses
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from frozen_gcn import plotting, smoothing, theory
from frozen_gcn.graph import (GraphBundle, bundle_adjacency, cold_start_transform,
                              karate_bundle, load_bundle, row_normalize)
from frozen_gcn.linalg import laplacian_lambda, make_rng
from frozen_gcn.model import (DENSE, GRAPH_CONV, LayerSpec, TrainConfig, build_model,
                              forward, gcn_specs, train)

log = logging.getLogger(__name__)

BIG_WIDTH = 2048
CSV_FIELDS = ["dataset", "width", "depth", "positions", "kind", "cold_start",
              "mean_acc", "std", "seeds", "mode", "run_accs", "best_val_acc",
              "wall_time", "diverged_runs"]


class WidthGateError(ValueError):
    """A width above the desk-scale cap was requested without opting in."""


def worker_count(n_tasks: int) -> int:
    cap = os.environ.get("FROZEN_GCN_THREADS")
    n = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(n, n_tasks))


def partial_train_config(**kw) -> TrainConfig:
    return TrainConfig(**{"learning_rate": 0.1, "weight_decay": 0.0, **kw})


def full_train_config(**kw) -> TrainConfig:
    return TrainConfig(**{"learning_rate": 1e-3, "weight_decay": 5e-4, **kw})


@dataclass
class ExperimentConfig:
    bundle: str | None = None
    dataset: str | None = None
    depth: int = 2
    width: int | list = 64
    positions: list = field(default_factory=lambda: [2])
    kind: str = GRAPH_CONV
    mode: str = "partial"  # "partial" or "full"
    cold_start: bool = False
    num_runs: int = 10
    base_seed: int = 0
    row_normalize: bool = True
    allow_big_width: bool = False
    train: TrainConfig | None = None
    epochs: int | None = None  # overrides the epoch count of either default

    def __post_init__(self):
        if isinstance(self.train, dict):
            self.train = TrainConfig(**self.train)
        if self.mode not in ("partial", "full"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.kind not in (GRAPH_CONV, DENSE):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.num_runs < 1:
            raise ValueError("num_runs must be >= 1")
        if self.mode == "partial":
            self.positions = [int(p) for p in self.positions]
            if not self.positions or any(p < 1 or p > self.depth for p in self.positions):
                raise ValueError(f"positions must lie in [1, {self.depth}]")
        if not np.isscalar(self.width) and len(self.width) != self.depth - 1:
            raise ValueError(f"need {self.depth - 1} per-layer widths")

    @property
    def trainable_positions(self) -> list[int]:
        return list(range(1, self.depth + 1)) if self.mode == "full" else self.positions

    def train_config(self) -> TrainConfig:
        if self.train is not None:
            cfg = self.train
        else:
            cfg = full_train_config() if self.mode == "full" else partial_train_config()
        if self.epochs is not None:
            cfg = dataclasses.replace(cfg, epochs=self.epochs)
        return cfg

    def widths(self) -> list[int]:
        return [int(self.width)] * (self.depth - 1) if np.isscalar(self.width) \
            else [int(w) for w in self.width]

    def seeds(self) -> list[int]:
        return [self.base_seed + i for i in range(self.num_runs)]

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["train"] = dataclasses.asdict(self.train) if self.train else None
        return d


@dataclass
class ResultRow:
    dataset: str
    width: str
    depth: int
    positions: str
    kind: str
    cold_start: bool
    mode: str
    run_accs: list[float]
    seeds: list[int]
    best_val_acc: float
    wall_time: float
    diverged_runs: int = 0

    @property
    def mean_acc(self) -> float:
        return float(np.mean(self.run_accs))

    @property
    def std(self) -> float:
        # population std over exactly num_runs runs
        return float(np.std(self.run_accs))

    def csv_row(self) -> dict:
        return {
            "dataset": self.dataset, "width": self.width, "depth": self.depth,
            "positions": self.positions, "kind": self.kind,
            "cold_start": int(self.cold_start), "mean_acc": repr(self.mean_acc),
            "std": repr(self.std), "seeds": ";".join(map(str, self.seeds)),
            "mode": self.mode, "run_accs": ";".join(repr(a) for a in self.run_accs),
            "best_val_acc": repr(self.best_val_acc), "wall_time": f"{self.wall_time:.3f}",
            "diverged_runs": self.diverged_runs,
        }


def width_label(widths) -> str:
    widths = list(widths)
    if not widths:
        return "0"
    if len(set(widths)) == 1:
        return str(widths[0])
    groups, prev, count = [], widths[0], 0
    for w in widths:
        if w == prev:
            count += 1
        else:
            groups.append(f"{prev}x{count}")
            prev, count = w, 1
    groups.append(f"{prev}x{count}")
    return "+".join(groups)


def _gate(widths, allow_big: bool) -> None:
    if not allow_big and widths and max(widths) > BIG_WIDTH:
        raise WidthGateError(f"width {max(widths)} exceeds {BIG_WIDTH}; "
                             "pass allow_big_width to run it")


def prepare_inputs(bundle: GraphBundle, cold_start: bool, normalize: bool):
    if cold_start:
        bundle = cold_start_transform(bundle)
    x = row_normalize(bundle.features) if normalize else bundle.features
    return bundle, x


def _one_run(config: ExperimentConfig, bundle, adj, x, seed: int, keep_params=False):
    specs = gcn_specs(bundle.num_features, bundle.num_classes, config.depth,
                      config.widths(), trainable=config.trainable_positions,
                      trainable_kind=config.kind)
    params = build_model(specs, make_rng(seed))
    cfg = dataclasses.replace(config.train_config(), seed=seed)
    report = train(params, adj, bundle, cfg, features=x)
    return (report, params) if keep_params else report


def run_single(config: ExperimentConfig, bundle: GraphBundle | None = None,
               adj=None) -> ResultRow:
    """``num_runs`` independent runs (seeds ``base_seed + i``), each with a
    fresh Glorot draw; test accuracy is reported in percent."""
    t0 = time.perf_counter()
    widths = config.widths()
    _gate(widths, config.allow_big_width)
    if bundle is None:
        if not config.bundle:
            raise ValueError("config has no bundle path")
        bundle = load_bundle(config.bundle)
    bundle, x = prepare_inputs(bundle, config.cold_start, config.row_normalize)
    if adj is None:
        adj = bundle_adjacency(bundle)
    seeds = config.seeds()
    with ThreadPoolExecutor(max_workers=worker_count(len(seeds))) as pool:
        reports = list(pool.map(lambda s: _one_run(config, bundle, adj, x, s), seeds))
    for s, r in zip(seeds, reports):
        if r.diverged_epoch is not None:
            log.warning("seed %d diverged at epoch %d", s, r.diverged_epoch)
    best_val = [r.best_val_accuracy for r in reports]
    return ResultRow(
        dataset=config.dataset or bundle.name,
        width=width_label(widths),
        depth=config.depth,
        positions="all" if config.mode == "full" else ";".join(map(str, config.positions)),
        kind=config.kind if config.mode == "partial" else GRAPH_CONV,
        cold_start=config.cold_start,
        mode=config.mode,
        run_accs=[100.0 * r.test_accuracy for r in reports],
        seeds=seeds,
        best_val_acc=100.0 * float(np.nanmean(best_val)) if np.any(np.isfinite(best_val))
        else float("nan"),
        wall_time=time.perf_counter() - t0,
        diverged_runs=sum(r.diverged_epoch is not None for r in reports),
    )


def embedding_similarity(config: ExperimentConfig, bundle: GraphBundle | None = None):
    """Train ``num_runs`` seeds and return, per seed, the mean pairwise cosine
    similarity and mean pairwise distance of the final-layer outputs."""
    _gate(config.widths(), config.allow_big_width)
    if bundle is None:
        bundle = load_bundle(config.bundle)
    bundle, x = prepare_inputs(bundle, config.cold_start, config.row_normalize)
    adj = bundle_adjacency(bundle)

    def one(seed):
        _, params = _one_run(config, bundle, adj, x, seed, keep_params=True)
        logits, _ = forward(params, adj, x, check_finite=False)
        return smoothing.pairwise_similarity(logits)

    seeds = config.seeds()
    with ThreadPoolExecutor(max_workers=worker_count(len(seeds))) as pool:
        return list(pool.map(one, seeds))


def write_rows(rows, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r.csv_row())
    return path


def read_rows(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def _cell(base: ExperimentConfig, bundle, adj, **changes):
    cfg = dataclasses.replace(base, **changes)
    try:
        return run_single(cfg, bundle, adj)
    except WidthGateError as e:
        log.warning("skipping cell %s: %s", changes, e)
        return None


# ----------------------------------------------------------------- sweeps

def sweep_width_depth(bundle: GraphBundle, widths, depths, position: int = 2,
                      baseline_width: int = 64, base: ExperimentConfig | None = None,
                      out_dir=None) -> list[ResultRow]:
    """Partial models for every (width, depth) plus a fully trained baseline
    per depth. Optionally writes ``sweep.csv`` and ``sweep.svg``."""
    widths, depths = list(widths), list(depths)
    if not widths:
        raise ValueError("widths list is empty")
    if not depths:
        raise ValueError("depths list is empty")
    if any(position > d for d in depths):
        raise ValueError(f"position {position} exceeds some depth in {depths}")
    base = base or ExperimentConfig()
    adj = bundle_adjacency(bundle)
    rows = []
    for depth in depths:
        r = _cell(base, bundle, adj, depth=depth, width=baseline_width, mode="full",
                  train=None, positions=[position])
        if r:
            rows.append(r)
        for w in widths:
            r = _cell(base, bundle, adj, depth=depth, width=w, mode="partial",
                      positions=[position])
            if r:
                rows.append(r)
    if out_dir is not None:
        out = Path(out_dir)
        write_rows(rows, out / "sweep.csv")
        plot_rows(rows, out / "sweep.svg", title=f"{bundle.name}: accuracy vs depth")
    return rows


def sweep_position(bundle: GraphBundle, width: int, depth: int, positions,
                   base: ExperimentConfig | None = None) -> list[ResultRow]:
    positions = list(positions)
    if any(p < 1 or p > depth for p in positions):
        raise ValueError(f"positions must lie in [1, {depth}]")
    base = base or ExperimentConfig()
    adj = bundle_adjacency(bundle)
    rows = []
    for p in positions:
        r = _cell(base, bundle, adj, depth=depth, width=width, mode="partial",
                  positions=[p])
        if r:
            rows.append(r)
    return rows


def best_over_depth(rows) -> ResultRow:
    """Highest mean accuracy; ties go to the smaller depth."""
    return min(rows, key=lambda r: (-r.mean_acc, r.depth))


def cold_start_experiment(bundle: GraphBundle, widths, depth_range,
                          baseline_width: int = 64, include_trained: bool = True,
                          base: ExperimentConfig | None = None):
    """Cold-start grid with the last two layers trainable.

    Returns ``(grid_rows, best_rows)``; ``best_rows`` holds one row per width
    (and the fully trained baseline) at its best depth.
    """
    depths = [d for d in depth_range if d >= 2]
    if not depths:
        raise ValueError("cold start needs depths >= 2")
    base = dataclasses.replace(base or ExperimentConfig(), cold_start=True)
    adj = bundle_adjacency(bundle)
    grid, best = [], []
    series = [("partial", w) for w in widths]
    if include_trained:
        series.append(("full", baseline_width))
    for mode, w in series:
        cells = []
        for depth in depths:
            r = _cell(base, bundle, adj, depth=depth, width=w, mode=mode,
                      positions=[depth - 1, depth], train=None if mode == "full"
                      else base.train)
            if r:
                cells.append(r)
        grid.extend(cells)
        if cells:
            best.append(best_over_depth(cells))
    return grid, best


def trainable_kind_experiment(bundle: GraphBundle, width: int, depth: int = 16,
                              position: int = 2, base: ExperimentConfig | None = None):
    """Same frozen conv stack, trainable layer as a dense layer vs a graph conv."""
    base = base or ExperimentConfig()
    adj = bundle_adjacency(bundle)
    rows = []
    for kind in (DENSE, GRAPH_CONV):
        r = _cell(base, bundle, adj, depth=depth, width=width, mode="partial",
                  positions=[position], kind=kind)
        if r:
            rows.append(r)
    return rows


def parse_profile(text: str) -> list[int]:
    """``"2048x12+8192x3"`` -> widths listed bottom-up (first group lowest)."""
    widths = []
    for part in text.split("+"):
        w, _, n = part.partition("x")
        widths += [int(w)] * (int(n) if n else 1)
    return widths


def mixed_width_experiment(bundle: GraphBundle, width_profiles,
                           base: ExperimentConfig | None = None):
    """One row per profile of frozen hidden widths; the final layer is the only
    trainable one. Profiles are listed bottom-up and must put wide layers
    lowest."""
    base = base or ExperimentConfig()
    adj = bundle_adjacency(bundle)
    rows = []
    for prof in width_profiles:
        widths = parse_profile(prof) if isinstance(prof, str) else [int(w) for w in prof]
        if any(b > a for a, b in zip(widths, widths[1:])):
            raise ValueError(f"profile {prof}: wider layers must sit lowest")
        depth = len(widths) + 1
        r = _cell(base, bundle, adj, depth=depth, width=widths, mode="partial",
                  positions=[depth])
        if r:
            rows.append(r)
    return rows


def plot_rows(rows, path, title: str = "") -> Path:
    """Accuracy vs depth, one polyline per (mode, width, positions, kind, cold_start)."""
    series: dict[str, list] = {}
    for r in rows:
        d = r.csv_row() if isinstance(r, ResultRow) else r
        name = f"{d['mode']} w={d['width']} pos={d['positions']}"
        if d["kind"] != GRAPH_CONV:
            name += f" {d['kind']}"
        if str(d["cold_start"]) in ("1", "True", "true"):
            name += " cold"
        series.setdefault(name, []).append((int(d["depth"]), float(d["mean_acc"])))
    for pts in series.values():
        pts.sort()
    return plotting.line_plot(series, path, title=title, xlabel="depth",
                              ylabel="test accuracy (%)")


# ---------------------------------------------------------------- theory

@dataclass
class SuiteSizes:
    vg_samples: int = 1_000_000
    product_d: int = 1024
    product_samples: int = 100_000
    ks_widths: tuple = (64, 128, 256, 512, 1024, 2048, 4096)
    chain_d: int = 2048
    chain_ks: tuple = (1, 2, 5)
    bai_yin_n: int = 2000
    bai_yin_trials: int = 10
    cov_d: int = 4096
    cov_trials: int = 200
    sweep_widths: tuple = (64, 512, 4096)
    sweep_trials: int = 20
    svp_depth: int = 16
    svp_width: int = 2048
    smoothing_inputs: int = 100


QUICK_SIZES = SuiteSizes(vg_samples=200_000, product_d=256, product_samples=20_000,
                         ks_widths=(64, 256, 1024), chain_d=256, chain_ks=(1, 2, 5),
                         bai_yin_n=300, bai_yin_trials=3, cov_d=1024, cov_trials=20,
                         sweep_widths=(64, 512), sweep_trials=3, svp_depth=4,
                         svp_width=256, smoothing_inputs=10)


def theory_suite(output_dir, seed: int = 0, sizes: SuiteSizes | None = None,
                 variance_target: float | None = None):
    """Run every Monte Carlo check and smoothing diagnostic on the karate
    fixture, write one CSV per check plus ``summary.csv``.

    Returns ``(paths, ok)``; ``ok`` is False if any hard check failed.
    """
    sz = sizes or SuiteSizes()
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = lambda i: theory.trial_rng(seed, i)  # noqa: E731
    paths, verdicts = [], {}

    def emit(name, reports):
        paths.append(theory.write_reports(reports, out / f"{name}.csv"))
        verdicts[name] = theory.all_passed(reports)

    emit("vg_moments", theory.vg_moment_check(sz.vg_samples, rng(0),
                                              variance_target=variance_target))

    prod = theory.gaussian_product_element_check(sz.product_d, sz.product_samples, rng(1))
    ks = theory.ks_convergence(sz.ks_widths, sz.product_samples, rng(2))
    for d, v in zip(sz.ks_widths, ks):
        prod.append(theory.MonteCarloReport(f"ks_conditional_d{d}", v, 0.0, float("nan"),
                                            sz.product_samples, hard=False))
    steps = len(ks) - 1
    down = sum(b < a for a, b in zip(ks, ks[1:]))
    need = steps if steps <= 3 else steps - 1
    prod.append(theory.MonteCarloReport("ks_decreasing_steps", float(down), float(steps),
                                        float("nan"), steps, tolerance=steps - need + 0.5))
    emit("gaussian_product", prod)

    chain = []
    for i, k in enumerate(sz.chain_ks):
        chain += theory.chain_product_check(k, sz.chain_d, rng(10 + i))
    emit("chain_product", chain)

    emit("bai_yin", theory.bai_yin_check(sz.bai_yin_n, sz.bai_yin_trials, rng(3)))

    kb = karate_bundle()
    adj = bundle_adjacency(kb)
    b = theory.propagated_features(adj, kb.features, depth=4)
    emit("projected_covariance",
         theory.projected_covariance_check(b, sz.cov_d, sz.cov_trials, rng(4)))

    table = theory.correlation_vs_width_sweep(b, sz.sweep_widths, sz.sweep_trials, rng(5))
    paths.append(theory.write_table(table, out / "correlation_sweep.csv"))

    specs = [LayerSpec(sz.svp_width, sz.svp_width, trainable=False)
             for _ in range(sz.svp_depth - 1)]
    specs.append(LayerSpec(sz.svp_width, 2, trainable=True, activation="none"))
    params = build_model(specs, rng(6))
    frozen = [i for i, s in enumerate(params.specs) if not s.trainable]
    s_layer, s_prod = smoothing.singular_value_product(params, layers=frozen, tol=1e-8)
    band = 0.15 if sz.svp_width >= 2000 else 0.35
    svp = [theory.MonteCarloReport(f"frozen_smax_layer{i + 1}", s, 2.0, float("nan"), 1,
                                   tolerance=band) for i, s in zip(frozen, s_layer)]
    svp.append(theory.MonteCarloReport("frozen_smax_product", s_prod, float("nan"),
                                       float("nan"), len(frozen), hard=False))
    emit("singular_values", svp)

    # smoothing on karate: literal check (reported) and the linear invariant (hard)
    n = kb.num_nodes
    small = build_model(gcn_specs(n, 2, depth=8, width=16), rng(7))
    g = rng(8)
    inputs = [g.standard_normal((n, n)) for _ in range(sz.smoothing_inputs)]
    counts = smoothing.violation_counts(small, adj, inputs)
    rep = smoothing.contraction_check(small, adj, inputs[0], "laplacian")
    paths.append(rep.to_csv(out / "smoothing_karate.csv"))
    basis = smoothing.oversmoothing_basis(adj)
    mu = laplacian_lambda(adj, "alt")
    lin_ok = 0
    for x in inputs:
        lin_ok += smoothing.subspace_distance(adj.matrix @ x, basis) <= \
            mu * smoothing.subspace_distance(x, basis) * (1 + 1e-12)
    smooth = [
        theory.MonteCarloReport("violations_laplacian_lambda", float(counts["laplacian"]),
                                float("nan"), float("nan"), len(inputs), hard=False),
        theory.MonteCarloReport("violations_alt_lambda", float(counts["alt"]),
                                float("nan"), float("nan"), len(inputs), hard=False),
        theory.MonteCarloReport("linear_propagation_bound_holds", float(lin_ok),
                                float(len(inputs)), float("nan"), len(inputs),
                                tolerance=0.5),
    ]
    emit("smoothing_invariants", smooth)

    summary = out / "summary.csv"
    with open(summary, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["check", "pass"])
        for name, ok in verdicts.items():
            w.writerow([name, str(ok).lower()])
    paths.append(summary)
    return paths, all(verdicts.values())

