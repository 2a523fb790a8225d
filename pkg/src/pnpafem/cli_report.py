"""Command-line entry point for convergence studies and their artifacts.

Typical invocations::

    pnpafem --example sech --mode uniform --max-dof 70000 --out-dir runs/u
    pnpafem --example singular --mode adaptive --tol 0.05 --out-dir runs/a

Each run writes into ``--out-dir``:

* ``convergence.csv``   per-step DOF counts, errors, global indicators
  and effectivities,
* ``step_<k>.vtk``      legacy-ASCII snapshots with the solution as
  point data and the indicators as cell data,
* ``rates.txt``         ``quantity=slope`` lines fitted over the final
  records (written once three or more steps exist),
* ``solver_log.csv``    (``--verbose`` only) per-iteration residuals.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

from pnpafem.afem_driver import LoopConfig, LoopError, fit_rate, run_study
from pnpafem.mesh import write_legacy_vtk
from pnpafem.pnp_problem import get_case
from pnpafem.recovery import WeightScheme

CSV_HEADER = ("step,dofs,h_max,e_phi,e_p1,e_p2,"
              "eta_phi,eta_p1,eta_p2,eff_phi,eff_p1,eff_p2")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="pnpafem",
        description="Adaptive FEM studies for the steady drift-diffusion "
                    "(Poisson-Nernst-Planck) system on the unit square.")
    ap.add_argument("--example", choices=("sech", "singular"), default="sech",
                    help="manufactured problem to solve (default: sech)")
    ap.add_argument("--mode", choices=("uniform", "adaptive"), default="adaptive",
                    help="refinement strategy (default: adaptive)")
    ap.add_argument("--tol", type=float, default=1e-12,
                    help="stop once every global indicator is <= TOL "
                         "(default: effectively run to the caps)")
    ap.add_argument("--theta", type=float, default=0.5,
                    help="maximum-marking threshold in (0,1) (default: 0.5)")
    ap.add_argument("--max-dof", type=int, default=200_000,
                    help="skip any refinement that would exceed this many "
                         "vertices (default: 200000)")
    ap.add_argument("--max-steps", type=int, default=60,
                    help="cap on the number of solve steps (default: 60)")
    ap.add_argument("--weights", choices=("area", "uniform"), default="area",
                    help="patch-averaging weights for recovery (default: area)")
    ap.add_argument("--quad-order", type=int, default=0,
                    help="quadrature degree for norms and indicators; "
                         "0 keeps the per-example default")
    ap.add_argument("--threads", type=int, default=1,
                    help="thread budget hint for the linear algebra backends")
    ap.add_argument("--out-dir", default="out",
                    help="directory for CSV/VTK/rate artifacts (default: out)")
    ap.add_argument("--verbose", action="store_true",
                    help="print per-step summaries and dump the solver log")
    return ap


def _fmt(value) -> str:
    return "" if value is None else "%.12g" % value


def _species_triple(values) -> list:
    vals = list(values) if values is not None else []
    vals += [None] * (2 - len(vals))
    return vals[:2]


def write_convergence_csv(records, path) -> None:
    """One row per step; empty fields where no exact solution exists."""
    with open(path, "w", newline="") as fh:
        fh.write(CSV_HEADER + "\n")
        for r in records:
            e_p = _species_triple(r.e_p)
            eff_p = _species_triple(r.eff_p)
            row = [str(r.step), str(r.dofs), _fmt(r.h_max),
                   _fmt(r.e_phi), _fmt(e_p[0]), _fmt(e_p[1]),
                   _fmt(r.eta_phi), _fmt(r.eta_p[0]),
                   _fmt(r.eta_p[1]) if len(r.eta_p) > 1 else "",
                   _fmt(r.eff_phi), _fmt(eff_p[0]), _fmt(eff_p[1])]
            fh.write(",".join(row) + "\n")


def write_rates(records, path) -> None:
    with open(path, "w") as fh:
        if len(records) >= 3:
            for name, slope in fit_rate(records).items():
                fh.write("%s=%.12g\n" % (name, slope))


def _write_vtk_steps(artifacts, out_dir) -> None:
    for k, art in enumerate(artifacts):
        point_data = {"phi": art.state.phi.coefficients}
        for i, p in enumerate(art.state.p):
            point_data["p%d" % (i + 1)] = p.coefficients
        cell_data = {"eta_phi": art.report.eta_phi}
        for i, eta in enumerate(art.report.eta_p):
            cell_data["eta_p%d" % (i + 1)] = eta
        write_legacy_vtk(os.path.join(out_dir, "step_%d.vtk" % k),
                         art.mesh, point_data=point_data, cell_data=cell_data)


def _write_solver_log(artifacts, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "iteration", "unknown", "residual"])
        for k, art in enumerate(artifacts):
            for iteration, unknown, residual in art.state.detail_rows:
                writer.writerow([k, iteration, unknown, "%.12g" % residual])


def _set_thread_env(threads: int) -> None:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ[var] = str(threads)


def run_cli(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return 2
    _set_thread_env(args.threads)
    try:
        case = get_case(args.example)
        cfg = LoopConfig(tol=args.tol, theta=args.theta, max_dofs=args.max_dof,
                         max_steps=args.max_steps, mode=args.mode)
    except ValueError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2
    scheme = WeightScheme.AREA if args.weights == "area" else WeightScheme.UNIFORM
    quad_degree = args.quad_order if args.quad_order > 0 else None

    try:
        os.makedirs(args.out_dir, exist_ok=True)
    except OSError as exc:
        print("error: cannot create output directory: %s" % exc, file=sys.stderr)
        return 1

    artifacts: list = []
    try:
        records = run_study(case, cfg, scheme=scheme, quad_degree=quad_degree,
                            artifacts=artifacts)
    except LoopError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1

    if args.verbose:
        for r in records:
            print("step %d: dofs=%d h_max=%.4g eta_phi=%.6g eta_p=%s"
                  % (r.step, r.dofs, r.h_max, r.eta_phi,
                     "/".join("%.6g" % e for e in r.eta_p)))
        _write_solver_log(artifacts, os.path.join(args.out_dir, "solver_log.csv"))

    write_convergence_csv(records, os.path.join(args.out_dir, "convergence.csv"))
    write_rates(records, os.path.join(args.out_dir, "rates.txt"))
    _write_vtk_steps(artifacts, args.out_dir)
    print("wrote %d steps to %s" % (len(records), args.out_dir))
    return 0


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
