"""Marking, refinement and the adaptive solve-estimate-refine loop."""
from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .estimate import EstimatorConfig, EstimatorReport, estimate
from .fem import (TriMesh, bisect, h1_seminorm, interpolate_nested, refine_uniform,
                  solve_batch)
from .fields import CoefficientField, coefficient_tt
from .regression import (DiscreteSpace, FitConfig, SampleCeilingReached, SampleSet,
                         SnapshotCache, compute_snapshots, draw_samples, gramian_criterion,
                         update_samples, vmc_fit_detailed)
from .tt import TensorTrain, append_modes, pad_dims, tt_dofs, tt_eval_param

log = logging.getLogger(__name__)

ACCURACY = "accuracy reached"
TT_BUDGET = "tt-dofs budget exceeded"
ITERATIONS = "iteration limit"
SAMPLE_CEILING = "sample ceiling reached"

REPORT_COLUMNS = ["iter", "N", "M", "d", "max_rank", "n", "eta_det", "eta_sto", "eta_alg",
                  "eta", "E_u", "tt_dofs", "triangles", "action"]


def doerfler_min_set(local, theta: float, aggregation: str = "squares"):
    """Smallest index set whose aggregate reaches ``theta`` times the total.

    Parameters
    ----------
    local : sequence of float
        Non-negative local contributions.
    theta : float
        Fraction in ``(0, 1]``.
    aggregation : {"squares", "sum"}
        ``"squares"`` compares ``sqrt(sum of squares)`` with ``theta`` times the
        same quantity over all entries.  ``"sum"`` compares the plain sum of
        the selected entries with ``theta * total`` where ``total`` is the
        plain sum unless given through :func:`doerfler_against`.

    Returns
    -------
    (indices, degenerate)
        Indices in selection order (descending value, lower index first on
        ties) and a flag that is set when the threshold cannot be met.
    """
    local = np.asarray(local, dtype=float)
    if aggregation == "squares":
        total = float(np.sqrt(np.sum(local**2)))
    elif aggregation == "sum":
        total = float(local.sum())
    else:
        raise ValueError(f"unknown aggregation {aggregation!r}")
    return doerfler_against(local, theta, total, aggregation)


def doerfler_against(local, theta: float, total: float, aggregation: str = "sum"):
    """Dörfler selection against an externally given total."""
    if not 0 < theta <= 1:
        raise ValueError("theta must lie in (0, 1]")
    local = np.asarray(local, dtype=float)
    if local.ndim != 1 or np.any(local < 0) or not np.all(np.isfinite(local)):
        raise ValueError("local contributions must be finite and non-negative")
    order = np.argsort(-local, kind="stable")
    if aggregation == "squares":
        values = local[order] ** 2
        target = (theta * total) ** 2
    else:
        values = local[order]
        target = theta * total
    if target <= 0:
        return np.zeros(0, dtype=int), False
    acc = np.cumsum(values)
    # a relative slack keeps theta = 1 attainable despite summation rounding
    reached = np.flatnonzero(acc >= target * (1.0 - 1e-12))
    if reached.size:
        return order[: reached[0] + 1], False
    return order[values > 0], True


@dataclass
class AdaptConfig:
    """Parameters of the adaptive loop.

    The number of active modes never exceeds the number of expansion modes
    of the coefficient field.  ``split_all_edges`` selects the bisection
    variant used for marked triangles, see :func:`avmc.fem.bisect`.
    """

    theta_det: float = 0.3
    theta_sto: float = 0.5
    theta_alg: float = 0.3
    target: float = 0.0
    gramian_threshold: float = 0.5
    max_iterations: int = 12
    max_tt_dofs: int = 10**8
    max_samples: int = 10**6
    initial_samples: int = 100
    initial_dims: tuple = (2,)
    lookahead: int = 1
    n_mc: int = 250
    seed: int = 0
    threads: int = 1
    source: float = 1.0
    c_det: float = 1.0
    c_int: float = 1.0
    round_tol: float = 1e-10
    split_all_edges: bool = True
    fit: FitConfig = field(default_factory=FitConfig)
    field_options: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0 < self.theta_det <= 1 and 0 < self.theta_sto <= 1):
            raise ValueError("Dörfler thresholds must lie in (0, 1]")
        if self.theta_alg <= 0 or self.gramian_threshold <= 0:
            raise ValueError("sample growth ratio and Gramian threshold must be positive")
        if min(self.max_iterations, self.max_tt_dofs, self.max_samples, self.initial_samples,
               self.n_mc, self.lookahead, self.threads) < 1:
            raise ValueError("budgets and counts must be positive")
        if min(self.c_det, self.c_int) <= 0:
            raise ValueError("estimator constants must be positive")
        self.initial_dims = tuple(int(d) for d in self.initial_dims)
        if not self.initial_dims or min(self.initial_dims) < 1:
            raise ValueError("initial dimensions must be positive")

    def estimator_config(self) -> EstimatorConfig:
        return EstimatorConfig(round_tol=self.round_tol, lookahead=self.lookahead,
                               c_det=self.c_det, c_int=self.c_int, source=self.source)


@dataclass
class AdaptState:
    mesh: TriMesh
    dims: tuple
    samples: SampleSet
    tt: TensorTrain | None = None
    report: EstimatorReport | None = None
    iteration: int = 0
    reason: str | None = None


@dataclass
class IterationRecord:
    """One row of the run log."""

    iteration: int
    report: EstimatorReport
    tt: TensorTrain
    mesh: TriMesh
    n_samples: int
    action: str = ""
    runtime_s: float = 0.0
    error: float = float("nan")

    def row(self) -> dict:
        rep = self.report
        return {
            "iter": self.iteration, "N": rep.n_dofs, "M": len(rep.dims),
            "d": "-".join(str(d) for d in rep.dims), "max_rank": max(rep.ranks),
            "n": self.n_samples, "eta_det": rep.eta_det, "eta_sto": rep.eta_sto,
            "eta_alg": rep.eta_alg, "eta": rep.eta, "E_u": self.error,
            "tt_dofs": tt_dofs(self.tt), "triangles": rep.n_triangles, "action": self.action,
        }


@dataclass
class RunResult:
    tt: TensorTrain
    records: list
    reason: str
    state: AdaptState


class Solver:
    """Snapshot generator bound to a coefficient field."""

    def __init__(self, field: CoefficientField, source: float = 1.0, threads: int = 1,
                 cache: SnapshotCache | None = None):
        self.field = field
        self.source = source
        self.threads = threads
        self.cache = cache

    def __call__(self, samples: SampleSet, mesh: TriMesh) -> SampleSet:
        return compute_snapshots(samples, mesh, self.field, self.source, self.threads, self.cache)


def refine_modes(dims, local_sto, eta_sto: float, theta: float, max_modes: int):
    """Increment the marked stochastic dimensions.

    ``local_sto`` has one entry per active mode plus the first inactive mode.
    Marking the inactive entry activates that mode with two degrees.  When no
    mode can be selected, the first inactive mode is activated if allowed,
    otherwise the largest look-ahead contribution is used.
    """
    dims = list(dims)
    marked, _ = doerfler_against(np.asarray(local_sto), theta, eta_sto, "sum")
    marked = [int(m) for m in marked if m < max_modes]
    if not marked:
        if len(dims) < max_modes:
            marked = [len(dims)]
        else:
            marked = [int(np.argmax(np.asarray(local_sto)[: len(dims)]))]
    for m in sorted(marked):
        if m < len(dims):
            dims[m] += 1
        else:
            dims.append(2)
    return tuple(dims)


def mark_and_refine(state: AdaptState, report: EstimatorReport, config: AdaptConfig,
                    solver: Solver, measure, rng, max_modes: int):
    """One refinement action chosen by the largest estimator contribution.

    Ties are resolved in the order deterministic, stochastic, algebraic.
    Returns the new state and the action taken: ``"mesh"``, ``"dims"``,
    ``"samples"`` or ``"alg-dims"`` (algebraic part largest but the Gramian
    criterion already holds).
    """
    det, sto, alg = report.eta_det, report.eta_sto, report.eta_alg
    top = max(det, sto, alg)
    if det == top:
        marked, _ = doerfler_min_set(report.local_det, config.theta_det, "squares")
        mesh = bisect(state.mesh, marked, config.split_all_edges)
        return replace(state, mesh=mesh, samples=SampleSet(state.samples.params)), "mesh"
    family = measure.sampling_family()
    if sto != top:
        lam = gramian_criterion(state.samples.params[:, : len(state.dims)], state.dims, family)
        if lam < config.gramian_threshold:
            samples = update_samples(
                state.samples, state.dims, family, measure, rng,
                lambda fresh: solver(fresh, state.mesh), growth=config.theta_alg,
                threshold=config.gramian_threshold, n_max=config.max_samples)
            return replace(state, samples=samples), "samples"
    dims = refine_modes(state.dims, report.local_sto, sto, config.theta_sto, max_modes)
    return replace(state, dims=dims), "dims" if sto == top else "alg-dims"


def _warm_start(tt: TensorTrain | None, dims) -> TensorTrain | None:
    if tt is None:
        return None
    grown = append_modes(tt, len(dims) - tt.n_modes)
    return pad_dims(grown, dims)


def avmc(mesh: TriMesh, field: CoefficientField, measure, config: AdaptConfig | None = None,
         cache: SnapshotCache | None = None, callback=None) -> RunResult:
    """Adaptive loop of solve, estimate, termination check and refinement.

    Every iteration records an :class:`IterationRecord`.  Results depend only
    on the configuration and its seed.
    """
    config = config or AdaptConfig()
    rng = np.random.default_rng(config.seed)
    max_modes = field.n_modes
    if len(config.initial_dims) > max_modes:
        raise ValueError("more initial modes than expansion modes")
    solver = Solver(field, config.source, config.threads, cache)
    samples = draw_samples(measure, config.initial_samples, rng, field.n_modes)
    state = AdaptState(mesh, config.initial_dims, samples)
    estimator = config.estimator_config()
    records = []
    coeff_mesh, coeff = None, None
    while True:
        state.iteration += 1
        start = time.perf_counter()
        if state.samples.snapshots is None or state.samples.mesh is not state.mesh:
            state.samples = solver(SampleSet(state.samples.params), state.mesh)
        space = DiscreteSpace(state.mesh, state.dims, measure.expansion_family())
        fit_config = replace(config.fit, seed=config.fit.seed + state.iteration)
        init = _warm_start(state.tt, state.dims)
        fit = vmc_fit_detailed(space, state.samples, fit_config, init)
        state.tt = fit.tt
        if coeff_mesh is not state.mesh:
            coeff = coefficient_tt(field, state.mesh, measure, **config.field_options)
            coeff_mesh = state.mesh
        report = estimate(state.tt, coeff, state.mesh, measure, estimator, state.samples.n)
        state.report = report
        record = IterationRecord(state.iteration, report, state.tt, state.mesh, state.samples.n)
        records.append(record)
        log.info("iter %d: N=%d d=%s r=%s n=%d eta=%.3e (det %.3e sto %.3e alg %.3e)",
                 state.iteration, report.n_dofs, report.dims, report.ranks, state.samples.n,
                 report.eta, report.eta_det, report.eta_sto, report.eta_alg)
        if report.eta < config.target:
            state.reason = ACCURACY
        elif tt_dofs(state.tt) > config.max_tt_dofs:
            state.reason = TT_BUDGET
        elif state.iteration >= config.max_iterations:
            state.reason = ITERATIONS
        if state.reason is None:
            try:
                state, record.action = mark_and_refine(state, report, config, solver, measure,
                                                       rng, max_modes)
            except SampleCeilingReached:
                state.reason = SAMPLE_CEILING
        record.runtime_s = time.perf_counter() - start
        if callback is not None:
            callback(record)
        if state.reason is not None:
            return RunResult(state.tt, records, state.reason, state)


def sampled_error(records, field: CoefficientField, measure, n_mc: int = 250, rng=None,
                  source: float = 1.0, threads: int = 1):
    """Root mean square ``H^1_0`` error of every recorded surrogate.

    Reference snapshots are solved on one uniform refinement of the finest
    mesh at ``n_mc`` parameters drawn from the parameter law.  Each surrogate
    is interpolated onto that mesh before the comparison.
    """
    if n_mc < 1:
        raise ValueError("need at least one reference sample")
    rng = np.random.default_rng(0) if rng is None else rng
    finest = max((r.mesh for r in records), key=lambda m: m.n_triangles)
    reference_mesh = refine_uniform(finest)
    params = measure.draw_law(rng, n_mc, field.n_modes)
    reference = solve_batch(reference_mesh, field, params, source, threads)
    errors = []
    for rec in records:
        values = tt_eval_param(rec.tt, measure.expansion_family(), params[:, : rec.tt.n_modes])
        fine = interpolate_nested(rec.mesh, reference_mesh, np.atleast_2d(values).T).T
        sq = [h1_seminorm(reference_mesh, u - v) ** 2 for u, v in zip(fine, reference)]
        errors.append(float(np.sqrt(np.mean(sq))))
    for rec, err in zip(records, errors):
        rec.error = err
    return errors


def reports_csv(records) -> str:
    """Deterministic CSV text of the records; floats use 13 significant digits."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for rec in records:
        row = rec.row()
        writer.writerow([f"{v:.12e}" if isinstance(v, float) else v
                         for v in (row[c] for c in REPORT_COLUMNS)])
    return buf.getvalue()


def read_reports(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def run_summary(result: RunResult, wall_time: float) -> dict:
    last = result.records[-1]
    return {
        "reason": result.reason,
        "iterations": len(result.records),
        "dims": list(result.tt.dims),
        "ranks": list(result.tt.ranks),
        "tt_dofs": tt_dofs(result.tt),
        "fe_dofs": last.report.n_dofs,
        "triangles": last.report.n_triangles,
        "samples": last.n_samples,
        "eta": last.report.eta,
        "E_u": last.error,
        "wall_time_s": wall_time,
        "iteration_runtime_s": [r.runtime_s for r in result.records],
    }


def write_summary(path, summary: dict) -> None:
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
