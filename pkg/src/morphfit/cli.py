"""Command-line driver.

Subcommands
-----------
generate   write a structured (optionally perturbed) mesh
optimize   quality-only node optimization
fit        mark, relabel, split, trim and fit a mesh to a level set
sweep      fixed-weight fits over a list of weights plus one adaptive run
mark       write the material indicators after marking and relabeling
distance   build a background distance field from a primitive file or shape

Exit codes: 0 success, 2 input error, 3 solver did not converge, 4 empty
fit node set.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import meshio
from .fitting import EmptyFitSetError, WeightState
from .geometry import (NoZeroCrossingError, SexprError, StepFunction, build_background,
                       builtin_shape, distance_field, load_background, load_sexpr,
                       save_background)
from .mesh import HighOrderMesh, InvalidMeshError, make_cartesian
from .pipeline import prepare_fit
from .solver import SolverConfig, newton_fit, newton_quality
from .tmop import MetricId, TargetSpec, default_metric

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_SOLVER = 3
EXIT_EMPTY = 4

REPORT_COLUMNS = ("iter", "F_mu", "F_sigma", "fit_error", "min_detA", "alpha", "w_sigma",
                  "minres_iters")
SWEEP_COLUMNS = ("mode", "w_sigma", "final_error", "iterations", "reason")
DEFAULT_WEIGHTS = "1,10,100,1000,10000,100000,1000000"


class InputError(Exception):
    """Bad command-line input; maps to exit code 2."""


# ---------------------------------------------------------------------------
# argument groups


def _add_mesh_args(p):
    g = p.add_argument_group("mesh input")
    src = g.add_mutually_exclusive_group()
    src.add_argument("--mesh", type=Path, help="mesh file in the morphfit text format")
    src.add_argument("--cartesian", type=int, nargs="+", metavar="N",
                     help="structured mesh with N cells per direction")
    g.add_argument("--dim", type=int, choices=(2, 3), default=2)
    g.add_argument("--geom", choices=("quad", "tri", "hex", "tet"))
    g.add_argument("--order", type=int, default=2)
    g.add_argument("--cell-split", type=int, help="triangles per quad (2, 4) or tets per hex (24)")
    g.add_argument("--perturb", type=float, default=0.0,
                   help="random interior node displacement, as a fraction of node spacing")
    g.add_argument("--seed", type=int, default=0)


def _add_quality_args(p):
    g = p.add_argument_group("quality metric")
    g.add_argument("--metric", type=int, choices=(2, 77, 80, 303))
    g.add_argument("--gamma", type=float, default=0.5, help="mu80 blending parameter")
    g.add_argument("--target", choices=("identity", "ideal"), default="identity")


def _add_solver_args(p):
    g = p.add_argument_group("solver")
    g.add_argument("--eps", type=float, default=1e-10, help="relative gradient tolerance")
    g.add_argument("--eps-sigma", type=float, default=1e-5, help="fit tolerance")
    g.add_argument("--max-iter", type=int, default=200)
    g.add_argument("--max-halvings", type=int, default=30)
    g.add_argument("--minres-rtol", type=float, default=1e-8)
    g.add_argument("--minres-maxiter", type=int)
    g.add_argument("--move-boundary", action="store_true",
                   help="let unfitted boundary nodes move")


def _add_weight_args(p):
    g = p.add_argument_group("penalty weight")
    g.add_argument("--w-sigma", type=float, default=10.0, help="initial weight")
    mode = g.add_mutually_exclusive_group()
    mode.add_argument("--adaptive", dest="adaptive", action="store_true", default=True)
    mode.add_argument("--fixed-weight", dest="adaptive", action="store_false")
    g.add_argument("--alpha-sigma", type=float, default=10.0, help="weight growth factor")
    g.add_argument("--eps-dsigma", type=float, default=1e-3, help="stagnation threshold")
    g.add_argument("--n-sigma", type=int, default=10, help="adaptation counter limit")
    g.add_argument("--counter", choices=("algorithm", "consecutive"), default="algorithm",
                   help="adaptation counter semantics")


def _add_levelset_args(p):
    g = p.add_argument_group("level set")
    src = g.add_mutually_exclusive_group(required=True)
    src.add_argument("--shape", help="builtin shape: circle, sphere, csg2d, csg3d")
    src.add_argument("--levelset", type=Path, help="primitive tree file (s-expressions)")
    src.add_argument("--background", type=Path, help="background field file")
    g.add_argument("--distance", action="store_true",
                   help="fit to a background distance field built from --shape/--levelset")
    g.add_argument("--bg-order", type=int, default=3)
    g.add_argument("--bg-depth", type=int, default=5)


def _add_fit_args(p):
    g = p.add_argument_group("fitting")
    g.add_argument("--mode", choices=("interface", "boundary"), default="interface")
    g.add_argument("--marking", choices=("integral", "max"), default="integral")
    g.add_argument("--group-cells", action="store_true",
                   help="mark whole Cartesian cells (e.g. the 24 tets of a hex) together")
    rl = g.add_mutually_exclusive_group()
    rl.add_argument("--relabel", dest="relabel", action="store_true", default=True)
    rl.add_argument("--no-relabel", dest="relabel", action="store_false")
    sp = g.add_mutually_exclusive_group()
    sp.add_argument("--split", dest="split", action="store_true", default=True)
    sp.add_argument("--no-split", dest="split", action="store_false")
    g.add_argument("--trim", choices=("0", "1", "none"), default="none",
                   help="keep only elements with this indicator")
    g.add_argument("--attrs", type=int, nargs="+", help="boundary attributes for boundary mode")


def _add_output_args(p, mesh_out=True):
    g = p.add_argument_group("output")
    if mesh_out:
        g.add_argument("-o", "--output", type=Path, help="output mesh file")
        g.add_argument("--vtk-out", type=Path, help="legacy VTK file of the output mesh")
    g.add_argument("--csv-out", type=Path, help="CSV report")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="morphfit", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a structured mesh")
    _add_mesh_args(g)
    _add_output_args(g)

    o = sub.add_parser("optimize", help="optimize mesh quality")
    _add_mesh_args(o)
    _add_quality_args(o)
    _add_solver_args(o)
    _add_output_args(o)

    f = sub.add_parser("fit", help="fit a mesh to a level set")
    for add in (_add_mesh_args, _add_quality_args, _add_solver_args, _add_weight_args,
                _add_levelset_args, _add_fit_args, _add_output_args):
        add(f)

    s = sub.add_parser("sweep", help="fixed-weight fits plus one adaptive run")
    for add in (_add_mesh_args, _add_quality_args, _add_solver_args, _add_weight_args,
                _add_levelset_args, _add_fit_args):
        add(s)
    s.add_argument("--weights", default=DEFAULT_WEIGHTS,
                   help="comma-separated fixed weights (empty for the adaptive run only)")
    _add_output_args(s, mesh_out=False)

    m = sub.add_parser("mark", help="mark and relabel elements")
    for add in (_add_mesh_args, _add_levelset_args, _add_fit_args, _add_output_args):
        add(m)

    d = sub.add_parser("distance", help="build a background distance field")
    src = d.add_mutually_exclusive_group(required=True)
    src.add_argument("--shape")
    src.add_argument("--levelset", type=Path)
    d.add_argument("--bg-order", type=int, default=3)
    d.add_argument("--bg-depth", type=int, default=5)
    d.add_argument("--bbox", type=float, nargs="+", metavar="X",
                   help="lo_1 .. lo_d hi_1 .. hi_d (default unit box)")
    d.add_argument("-o", "--output", type=Path, required=True)
    return p


# ---------------------------------------------------------------------------
# helpers


def perturb_interior(mesh: HighOrderMesh, amplitude: float, seed: int = 0) -> HighOrderMesh:
    """Move interior nodes by uniform noise scaled by the nearest-node spacing."""
    if amplitude == 0:
        return mesh
    rng = np.random.default_rng(seed)
    dist, _ = cKDTree(mesh.coords).query(mesh.coords, k=2)
    h = dist[:, 1:2]
    dx = amplitude * h * rng.uniform(-1.0, 1.0, mesh.coords.shape)
    dx[mesh.boundary_node_ids()] = 0.0
    return mesh.with_coords(mesh.coords + dx)


def load_mesh(args) -> HighOrderMesh:
    if args.mesh is not None:
        if not args.mesh.is_file():
            raise InputError(f"mesh file not found: {args.mesh}")
        mesh = meshio.load(args.mesh)
        if mesh.tags.get("invalid"):
            raise InputError(f"mesh {args.mesh} has inverted elements")
    else:
        counts = args.cartesian or [8]
        mesh = make_cartesian(args.dim, counts, args.order, geom=args.geom, split=args.cell_split)
    return perturb_interior(mesh, args.perturb, args.seed)


def load_levelset(args, mesh: HighOrderMesh | None = None):
    if getattr(args, "background", None) is not None:
        if not args.background.is_file():
            raise InputError(f"background file not found: {args.background}")
        return load_background(args.background)
    if args.shape is not None:
        ls = builtin_shape(args.shape)
    else:
        if not args.levelset.is_file():
            raise InputError(f"level-set file not found: {args.levelset}")
        ls = load_sexpr(args.levelset)
    if getattr(args, "distance", False):
        bbox = mesh.bounding_box() if mesh is not None else None
        bg = build_background(StepFunction(ls), bbox=bbox, order=args.bg_order,
                              max_depth=args.bg_depth)
        ls = distance_field(bg)
    return ls


def metric_of(args, dim):
    metric = default_metric(dim) if args.metric is None else MetricId(args.metric, args.gamma)
    metric.check_dim(dim)
    return metric


def solver_config(args) -> SolverConfig:
    return SolverConfig(eps=args.eps, eps_sigma=args.eps_sigma, max_iter=args.max_iter,
                        max_halvings=args.max_halvings, minres_rtol=args.minres_rtol,
                        minres_maxiter=args.minres_maxiter, fix_boundary=not args.move_boundary)


def weight_state(args, adaptive=None, w=None) -> WeightState:
    return WeightState(w=args.w_sigma if w is None else w, alpha=args.alpha_sigma,
                       eps_dsigma=args.eps_dsigma, N=args.n_sigma,
                       adaptive=args.adaptive if adaptive is None else adaptive,
                       counter_mode=args.counter)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple)):
        return " ".join(_fmt(x) for x in v)
    return "none" if v is None else str(v)


def effective_config(args, **extra) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    cfg.update(extra)
    return cfg


def write_report(path, config: dict, report, summary: dict | None = None) -> None:
    lines = [f"# {k}={_fmt(v)}" for k, v in sorted(config.items())]
    lines += [f"# {k}={_fmt(v)}" for k, v in (summary or {}).items()]
    lines.append(",".join(REPORT_COLUMNS))
    for r in report.rows():
        lines.append(",".join(_fmt(getattr(r, c)) if c not in ("iter", "minres_iters")
                              else str(getattr(r, c)) for c in REPORT_COLUMNS))
    Path(path).write_text("\n".join(lines) + "\n")


def _write_mesh(args, mesh):
    if getattr(args, "output", None) is not None:
        meshio.save(mesh, args.output)
    if getattr(args, "vtk_out", None) is not None:
        meshio.write_vtk(mesh, args.vtk_out)


def _summary(report):
    f = report.final
    return {"reason": report.reason, "iterations": report.iterations,
            "final_fit_error": f.fit_error, "final_min_detA": f.min_detA}


def _print_summary(report, out=sys.stdout):
    f = report.final
    print(f"reason={report.reason} iterations={report.iterations} "
          f"fit_error={f.fit_error:.3e} min_detA={f.min_detA:.3e}", file=out)


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args) -> int:
    mesh = load_mesh(args)
    _write_mesh(args, mesh)
    print(f"{mesh.geom} order {mesh.order}: {mesh.num_elems} elements, {mesh.num_nodes} nodes")
    return EXIT_OK


def cmd_optimize(args) -> int:
    mesh = load_mesh(args)
    metric = metric_of(args, mesh.dim)
    target = TargetSpec(args.target)
    out, rep = newton_quality(mesh, target, metric, solver_config(args))
    if args.csv_out is not None:
        write_report(args.csv_out, effective_config(args, metric=str(metric)), rep, _summary(rep))
    _write_mesh(args, out)
    _print_summary(rep)
    return EXIT_OK if rep.converged else EXIT_SOLVER


def _prepare(args, mesh, ls):
    trim_keep = None if args.trim == "none" else int(args.trim)
    return prepare_fit(mesh, ls, mode=args.mode, marking=args.marking, do_relabel=args.relabel,
                       split=args.split, trim_keep=trim_keep,
                       groups="cell" if args.group_cells else None, attrs=args.attrs)


def _check_dims(mesh, ls):
    if ls.dim != mesh.dim:
        raise InputError(f"level set is {ls.dim}D but the mesh is {mesh.dim}D")


def cmd_fit(args) -> int:
    mesh = load_mesh(args)
    ls = load_levelset(args, mesh)
    _check_dims(mesh, ls)
    metric = metric_of(args, mesh.dim)
    setup = _prepare(args, mesh, ls)
    out, rep, ws = newton_fit(setup.mesh, TargetSpec(args.target), metric, ls, setup.nodes,
                              weight_state(args), solver_config(args))
    if args.csv_out is not None:
        summary = _summary(rep)
        summary.update(fit_nodes=len(setup.nodes), elements=setup.mesh.num_elems,
                       final_w_sigma=ws.w)
        write_report(args.csv_out, effective_config(args, metric=str(metric)), rep, summary)
    _write_mesh(args, out)
    _print_summary(rep)
    return EXIT_OK if rep.final.fit_error <= args.eps_sigma else EXIT_SOLVER


def parse_weights(text: str) -> list[float]:
    text = text.strip()
    if not text:
        return []
    try:
        w = [float(t) for t in text.split(",")]
    except ValueError:
        raise InputError(f"bad weight list {text!r}") from None
    if any(not x > 0 for x in w):
        raise InputError("weights must be positive")
    return w


def run_sweep(mesh, ls, nodes, target, metric, weights, args):
    """Rows ``(mode, w_sigma, final_error, iterations, reason)``."""
    cfg = solver_config(args)
    runs = [("fixed", w, weight_state(args, adaptive=False, w=w)) for w in weights]
    runs.append(("adaptive", args.w_sigma, weight_state(args, adaptive=True)))
    rows = []
    for mode, w, state in runs:
        try:
            _, rep, _ = newton_fit(mesh, target, metric, ls, nodes, state, cfg)
            rows.append((mode, w, rep.final.fit_error, rep.iterations, rep.reason))
        except Exception as exc:  # a failed run is recorded, the sweep goes on
            rows.append((mode, w, float("nan"), 0, f"error:{type(exc).__name__}"))
    return rows


def cmd_sweep(args) -> int:
    weights = parse_weights(args.weights)
    mesh = load_mesh(args)
    ls = load_levelset(args, mesh)
    _check_dims(mesh, ls)
    metric = metric_of(args, mesh.dim)
    setup = _prepare(args, mesh, ls)
    rows = run_sweep(setup.mesh, ls, setup.nodes, TargetSpec(args.target), metric, weights, args)
    lines = [",".join(SWEEP_COLUMNS)]
    lines += [f"{m},{_fmt(float(w))},{_fmt(float(e))},{n},{r}" for m, w, e, n, r in rows]
    text = "\n".join(lines) + "\n"
    if args.csv_out is not None:
        cfg = effective_config(args, metric=str(metric))
        header = "".join(f"# {k}={_fmt(v)}\n" for k, v in sorted(cfg.items()))
        Path(args.csv_out).write_text(header + text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_mark(args) -> int:
    mesh = load_mesh(args)
    ls = load_levelset(args, mesh)
    _check_dims(mesh, ls)
    setup = _prepare(args, mesh, ls)
    _write_mesh(args, setup.mesh)
    if args.csv_out is not None:
        eta = setup.mesh.material
        lines = ["element,eta"] + [f"{e},{int(v)}" for e, v in enumerate(eta)]
        Path(args.csv_out).write_text("\n".join(lines) + "\n")
    print(f"elements={setup.mesh.num_elems} eta1={int(setup.mesh.material.sum())} "
          f"flipped={setup.flipped} split_requests={len(setup.split_requests)} "
          f"max_interface_faces={setup.max_interface_faces} fit_nodes={len(setup.nodes)}")
    return EXIT_OK


def cmd_distance(args) -> int:
    ls = builtin_shape(args.shape) if args.shape is not None else None
    if ls is None:
        if not args.levelset.is_file():
            raise InputError(f"level-set file not found: {args.levelset}")
        ls = load_sexpr(args.levelset)
    bbox = None
    if args.bbox is not None:
        if len(args.bbox) != 2 * ls.dim:
            raise InputError(f"--bbox needs {2 * ls.dim} numbers for a {ls.dim}D level set")
        bbox = (args.bbox[:ls.dim], args.bbox[ls.dim:])
    bg = build_background(StepFunction(ls), bbox=bbox, order=args.bg_order,
                          max_depth=args.bg_depth)
    field = distance_field(bg)
    save_background(field, args.output)
    print(f"leaves={field.num_leaves} order={field.order} "
          f"finest_cell_diameter={field.finest_cell_diameter():.3e}")
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "optimize": cmd_optimize, "fit": cmd_fit,
            "sweep": cmd_sweep, "mark": cmd_mark, "distance": cmd_distance}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except EmptyFitSetError as exc:
        print(f"morphfit: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except (InputError, OSError, SexprError, meshio.MeshFormatError, InvalidMeshError,
            NoZeroCrossingError, ValueError) as exc:
        print(f"morphfit: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
