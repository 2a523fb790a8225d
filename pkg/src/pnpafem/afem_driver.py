"""Solve-estimate-mark-refine loops and the uniform-refinement study.

The adaptive loop starts from the uniform 9x9 grid of the unit square
(81 DOFs), marks by the maximum strategy (an element is refined when its
indicator reaches theta times the current maximum, for the potential or
for any species), and stops once every global indicator is at or below
the tolerance, or a DOF/step cap is hit.  The uniform driver refines
everything each round; both produce the same per-step records.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from pnpafem.estimator import EstimatorReport, build_report, effectivity
from pnpafem.fem_core import h1_l2_errors, quadrature_rule
from pnpafem.mesh import (
    MarkSet,
    Mesh,
    make_uniform_unit_square,
    mesh_size,
    refine_marked,
    refine_uniform,
)
from pnpafem.nonlinear_solver import CoupledState, SolverConfig, solve_coupled
from pnpafem.recovery import DEFAULT_WEIGHTS, WeightScheme

INITIAL_GRID = 8  # 81 DOFs


@dataclass(frozen=True)
class LoopConfig:
    tol: float
    theta: float = 0.5
    max_dofs: int = 200_000
    max_steps: int = 60
    mode: str = "adaptive"

    def __post_init__(self):
        if self.tol <= 0.0:
            raise ValueError("tol must be positive")
        if not 0.0 < self.theta < 1.0:
            raise ValueError("theta must lie in (0, 1)")
        if self.mode not in ("adaptive", "uniform"):
            raise ValueError("mode must be 'adaptive' or 'uniform'")


@dataclass(eq=False)
class RunRecord:
    step: int
    dofs: int
    h_max: float
    eta_phi: float
    eta_p: tuple
    e_phi: float = None
    e_p: tuple = None
    eff_phi: float = None
    eff_p: tuple = None
    wall_time: float = 0.0


@dataclass(eq=False)
class StepArtifact:
    """Everything one step produced, for VTK dumps and audits."""

    mesh: Mesh
    state: CoupledState
    report: EstimatorReport
    marks: MarkSet = None


class LoopError(RuntimeError):
    """Solver failure inside a loop; carries the records completed so far."""

    def __init__(self, message, records):
        super().__init__(message)
        self.records = records


def mark_maximum(eta_phi: np.ndarray, eta_p, theta: float) -> MarkSet:
    """Union of maximum-strategy marks over the potential and all species.

    An all-zero indicator family contributes nothing, so a fully
    converged step yields an empty set.
    """
    if len(eta_phi) == 0:
        raise ValueError("indicator list is empty")
    mask = np.zeros(len(eta_phi), dtype=bool)
    for family in (eta_phi, *eta_p):
        top = family.max()
        if top > 0.0:
            mask |= family >= theta * top
    return MarkSet(np.flatnonzero(mask))


def _make_record(step, m, case, state, report, quad_degree) -> RunRecord:
    h_max, _ = mesh_size(m)
    record = RunRecord(step=step, dofs=m.n_vertices, h_max=h_max,
                       eta_phi=report.global_eta_phi, eta_p=report.global_eta_p)
    if case.exact_phi is not None:
        rule = quadrature_rule(quad_degree or case.quad_degree)
        record.e_phi = h1_l2_errors(state.phi, case.exact_phi, rule)[2]
        record.e_p = tuple(h1_l2_errors(state.p[i], case.exact_p[i], rule)[2]
                           for i in range(case.n_species))
        record.eff_phi, record.eff_p = effectivity(report, (record.e_phi, record.e_p))
    return record


def _run_loop(case, cfg: LoopConfig, solver_cfg, scheme, quad_degree, artifacts):
    mesh = make_uniform_unit_square(INITIAL_GRID)
    state = None
    records: list = []
    while True:
        t0 = time.perf_counter()
        try:
            state = solve_coupled(mesh, case, solver_cfg, warm_start=state)
        except RuntimeError as exc:
            raise LoopError("solver failed at step %d: %s" % (len(records), exc),
                            records) from exc
        if not state.converged:
            raise LoopError("outer iteration did not converge at step %d"
                            % len(records), records)
        report = build_report(mesh, case, state, scheme, quad_degree)
        record = _make_record(len(records), mesh, case, state, report, quad_degree)
        record.wall_time = time.perf_counter() - t0
        records.append(record)
        if artifacts is not None:
            artifacts.append(StepArtifact(mesh=mesh, state=state, report=report))

        within_tol = (report.global_eta_phi <= cfg.tol
                      and all(e <= cfg.tol for e in report.global_eta_p))
        if within_tol or len(records) >= cfg.max_steps:
            break
        if cfg.mode == "adaptive":
            marks = mark_maximum(report.eta_phi, report.eta_p, cfg.theta)
            if artifacts is not None:
                artifacts[-1].marks = marks
            if len(marks) == 0:
                break
            new_mesh = refine_marked(mesh, marks)
        else:
            new_mesh = refine_uniform(mesh)
        if new_mesh.n_vertices > cfg.max_dofs:
            break
        mesh = new_mesh
    return records


def adaptive_loop(case, cfg: LoopConfig, solver_cfg: SolverConfig | None = None,
                  scheme: WeightScheme = DEFAULT_WEIGHTS,
                  quad_degree: int | None = None, artifacts: list | None = None):
    """Run the adaptive algorithm; returns the per-step records.

    Pass a list as ``artifacts`` to additionally collect each step's
    mesh, state, report and mark set.
    """
    if cfg.mode != "adaptive":
        cfg = LoopConfig(cfg.tol, cfg.theta, cfg.max_dofs, cfg.max_steps, "adaptive")
    return _run_loop(case, cfg, solver_cfg, scheme, quad_degree, artifacts)


def uniform_loop(case, cfg: LoopConfig, solver_cfg: SolverConfig | None = None,
                 scheme: WeightScheme = DEFAULT_WEIGHTS,
                 quad_degree: int | None = None, artifacts: list | None = None):
    """Uniform-refinement study with the same records as the adaptive loop."""
    if cfg.mode != "uniform":
        cfg = LoopConfig(cfg.tol, cfg.theta, cfg.max_dofs, cfg.max_steps, "uniform")
    return _run_loop(case, cfg, solver_cfg, scheme, quad_degree, artifacts)


def run_study(case, cfg: LoopConfig, solver_cfg: SolverConfig | None = None,
              scheme: WeightScheme = DEFAULT_WEIGHTS,
              quad_degree: int | None = None, artifacts: list | None = None):
    """Dispatch on ``cfg.mode``."""
    loop = adaptive_loop if cfg.mode == "adaptive" else uniform_loop
    return loop(case, cfg, solver_cfg, scheme, quad_degree, artifacts)


_RATE_FIELDS = {
    "e_phi": lambda r: r.e_phi,
    "e_p1": lambda r: r.e_p[0] if r.e_p else None,
    "e_p2": lambda r: r.e_p[1] if r.e_p and len(r.e_p) > 1 else None,
    "eta_phi": lambda r: r.eta_phi,
    "eta_p1": lambda r: r.eta_p[0],
    "eta_p2": lambda r: r.eta_p[1] if len(r.eta_p) > 1 else None,
}


def fit_rate(records) -> dict:
    """Least-squares log-log slope vs DOF over the last min(4, all) records.

    Returns quantity -> slope for every quantity present in the records;
    requires at least 3 records.
    """
    if len(records) < 3:
        raise ValueError("need at least 3 records to fit a rate")
    tail = records[-min(4, len(records)):]
    dofs = np.log([r.dofs for r in tail])
    out = {}
    for name, get in _RATE_FIELDS.items():
        vals = [get(r) for r in tail]
        if any(v is None or v <= 0.0 for v in vals):
            continue
        out[name] = float(np.polyfit(dofs, np.log(vals), 1)[0])
    return out
