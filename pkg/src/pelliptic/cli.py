"""Command-line entry point: ``pelliptic <command> [options]``.

Exit status is 0 on success, 1 when a checked property is found violated
and 2 on bad input.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import bellman as bm
from . import ellipticity as el
from .numerics import ParameterError, SolverError, StructureError, project_lp_ball
from .semigroup_lab import experiments as ex
from .semigroup_lab.problem import fmt, load_problem, to_csv, write_output

DEFAULT_SEED = 20240917


class InputError(Exception):
    pass


def _matrix(spec):
    """A matrix from a JSON file, inline JSON, or a number."""
    if spec is None:
        raise InputError("a matrix is required")
    text = spec.strip()
    try:
        if text.startswith("{") or text.startswith("["):
            doc = json.loads(text)
        else:
            try:
                return el.as_matrix(complex(text.replace("i", "j")))
            except ValueError:
                pass
            with open(Path(text)) as fh:
                doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read matrix {spec!r}: {exc}") from exc
    if isinstance(doc, dict):
        return el.matrix_from_json(doc)
    return el.as_matrix(np.asarray(doc, dtype=complex))


def _floats(text):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise InputError(f"not a list of numbers: {text!r}") from exc


def _emit(args, text):
    write_output(text, args.out)


# -- subcommands -------------------------------------------------------------

def cmd_delta_p(args):
    A = _matrix(args.matrix)
    val = el.delta_p(A, mu=args.mu) if args.mu is not None else el.delta_p(A, args.p)
    _emit(args, fmt(val) + "\n")
    return 0


def cmd_p_range(args):
    pmin, pmax = el.p_range(_matrix(args.matrix))
    _emit(args, f"p_min={fmt(pmin)} p_max={fmt(pmax)}\n")
    return 0


def cmd_angle(args):
    A = _matrix(args.matrix)
    om, om_lit = el.sector_angles(A)
    lines = [f"omega0={fmt(om)}", f"omega0_literal={fmt(om_lit)}"]
    if args.p is not None:
        lines.insert(0, f"theta={fmt(el.rotation_angle(A, args.p))}")
    _emit(args, " ".join(lines) + "\n")
    return 0


def cmd_bellman_verify(args):
    A, B = _matrix(args.A), _matrix(args.B or args.A)
    delta = args.delta if args.delta is not None else bm.choose_delta(args.p, A, B)
    rep = bm.verify_convexity(A, B, bm.BellmanParams(args.p, delta), args.samples,
                              seed=args.seed, threads=args.threads)
    header = ("seed", "n_samples", "branch", "c_hess", "c_gz", "c_ge", "argmin")
    _emit(args, to_csv(header, rep.csv_rows()))
    return 0 if min(rep.c_hess, rep.c_gz, rep.c_ge) > 0 else 1


def cmd_mollify_verify(args):
    A, B = _matrix(args.A), _matrix(args.B or args.A)
    d = A.shape[0]
    delta = args.delta if args.delta is not None else bm.choose_delta(args.p, A, B)
    prm = bm.BellmanParams(args.p, delta)
    c = bm.verify_convexity(A, B, prm, args.samples, seed=args.seed, threads=args.threads).c_hess
    rng = np.random.default_rng(args.seed)
    rows, worst = [], math.inf
    for kappa in _floats(args.kappa):
        for _ in range(args.points):
            s = math.exp(rng.uniform(math.log(0.3), math.log(3.0)))
            z = s ** (1 / prm.p) * np.exp(2j * np.pi * rng.uniform()) * math.exp(0.1 * rng.normal())
            e = s ** (1 / prm.q) * np.exp(2j * np.pi * rng.uniform())
            w1 = rng.normal(size=d) + 1j * rng.normal(size=d)
            w2 = rng.normal(size=d) + 1j * rng.normal(size=d)
            H = bm.mollified_hessian(A, B, z, e, w1, w2, prm, kappa, args.nodes)
            t1, t2 = bm.mollified_tau(z, e, prm, A, B, kappa, args.nodes)
            rhs = c * (t1 * np.vdot(w1, w1).real + t2 * np.vdot(w2, w2).real)
            ratio = H / rhs
            worst = min(worst, ratio)
            rows.append((kappa, complex(z), complex(e), H, rhs, ratio))
    _emit(args, to_csv(("kappa", "zeta", "eta", "hessian", "rhs", "ratio"), rows))
    return 0 if worst >= args.slack else 1


def cmd_quad_gap(args):
    res = bm.quadratic_gap(args.a, args.b, args.c)
    _emit(args, "empty\n" if res is None else f"C={fmt(res[0])} tau={fmt(res[1])}\n")
    return 0


def _operators(args):
    prob = load_problem(args.problem)
    if getattr(args, "phase", None) is not None:
        prob.phase = args.phase
    LA, LB = prob.operators()
    return prob, LA, LB


def cmd_semigroup_contract(args):
    prob, L, _ = _operators(args)
    res = ex.contractivity_experiment(L, args.p, t_list=_floats(args.t), n_trials=args.trials,
                                      seed=args.seed, details=True)
    rows = [(t, r) for t, r in res.ratios.items()]
    _emit(args, to_csv(("t", "max_ratio"), rows))
    return 0 if res.max_ratio <= 1 + args.tol else 1


def cmd_dissipativity(args):
    prob, L, _ = _operators(args)
    val = ex.dissipativity_check(L, args.p, args.trials, seed=args.seed)
    _emit(args, to_csv(("p", "min_value"), [(args.p, val)]))
    return 0 if val >= -args.tol else 1


def cmd_embed(args):
    prob, LA, LB = _operators(args)
    grid = ex.TimeGrid(t_min=args.t_min, rho=args.rho, T_max=args.t_max)
    rep = ex.bilinear_embedding(LA, LB, prob.f, prob.g, args.p, grid)
    _emit(args, to_csv(ex.EmbeddingReport.FIELDS, [rep.row()]))
    return 0 if math.isfinite(rep.value) else 1


def cmd_flow(args):
    prob, LA, LB = _operators(args)
    A0, B0 = prob.A.unique(), prob.B.unique()
    if args.delta is not None:
        delta = args.delta
    else:
        delta = min(bm.choose_delta(args.p, a, b) for a in A0 for b in B0)
    times = np.geomspace(args.t_first, args.t_last, args.n_times)
    tr = ex.flow_trace(LA, LB, prob.f, prob.g, bm.BellmanParams(args.p, delta), times=times)
    _emit(args, to_csv(ex.FlowTrace.FIELDS, tr.rows()))
    return 0 if np.all(np.diff(tr.E) <= 1e-8 * max(1.0, abs(tr.E[0]))) else 1


def cmd_truncate(args):
    prob = load_problem(args.problem)
    n_list = _floats(args.n)
    tab = ex.truncation_convergence(prob.domain, prob.A, prob.V, args.s, prob.f, n_list)
    _emit(args, to_csv(ex.TruncationTable.FIELDS, tab.rows()))
    vmax = float(np.max(np.where(prob.domain.free, prob.V, 0.0)))
    ok = True
    if max(n_list) >= vmax:
        ok = tab.e_grad[-1] <= 1e-10 and tab.e_pot[-1] <= 1e-10
    if args.require_monotone:
        ok = ok and np.all(np.diff(tab.e_grad) <= 1e-12) and np.all(np.diff(tab.e_pot) <= 1e-12)
    return 0 if ok else 1


def cmd_project(args):
    prob, L, _ = _operators(args)
    dom = prob.domain
    P = project_lp_ball(prob.f, args.p, cell_volume=dom.cell_volume)
    ok = ex.lp_ball_invariance_probe(L, args.p, args.trials, seed=args.seed)
    grid = dom.extend(P)
    rows = [(",".join(str(i) for i in idx), complex(grid[idx])) for idx in dom.active_cells]
    _emit(args, to_csv(("cell", "value"), rows) + f"# invariant={fmt(ok)}\n")
    return 0 if ok else 1


# -- parser ------------------------------------------------------------------

def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=DEFAULT_SEED,
                        help=f"seed for all sampling (default {DEFAULT_SEED})")
    common.add_argument("--threads", type=int, default=1, help="worker threads (default 1)")
    common.add_argument("--out", default="-", help="output path, '-' for standard output")

    ap = argparse.ArgumentParser(prog="pelliptic", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", metavar="command", required=True)

    def add(name, func, help_, desc):
        sp_ = sub.add_parser(name, parents=[common], help=help_, description=desc)
        sp_.set_defaults(func=func)
        return sp_

    s = add("delta-p", cmd_delta_p, "p-ellipticity constant Delta_p(A)",
            "Print Delta_p(A) = min over unit xi of Re<A xi, xi + |1-2/p| conj(xi)>.")
    s.add_argument("--matrix", required=True, help="matrix JSON file, inline JSON or a number")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--p", type=float, help="exponent p")
    g.add_argument("--mu", type=float, help="use |1-2/p| = mu directly")

    s = add("p-range", cmd_p_range, "interval of p with Delta_p(A) > 0",
            "Print the open interval (p_min, p_max) on which A is p-elliptic.")
    s.add_argument("--matrix", required=True)

    s = add("angle", cmd_angle, "rotation angle and sector angle omega0",
            "Print the largest theta with Delta_p(e^{+-i theta} A) >= 0 and the sector angle "
            "omega0 = arctan(Lambda/lambda) (also arctan(lambda/Lambda)).")
    s.add_argument("--matrix", required=True)
    s.add_argument("--p", type=float, help="exponent p for the rotation angle")

    s = add("bellman-verify", cmd_bellman_verify, "sampled convexity constants of the Bellman function",
            "Sample the generalized Hessian of Q_{p,delta} and its gradient products against "
            "tau|w1|^2 + |w2|^2/tau, tau|zeta|^2 and |eta|^2/tau; print the minimal ratios "
            "c_hess, c_gz, c_ge as CSV.")
    s.add_argument("--A", required=True)
    s.add_argument("--B")
    s.add_argument("--p", type=float, required=True, help="exponent p")
    s.add_argument("--delta", type=float)
    s.add_argument("--samples", type=int, default=100_000)

    s = add("mollify-verify", cmd_mollify_verify, "lower bound for the mollified generalized Hessian",
            "Compare the generalized Hessian of Q * phi_kappa with c_hess times "
            "(tau * phi_kappa)|w1|^2 + (1/tau * phi_kappa)|w2|^2 at random points.")
    s.add_argument("--A", required=True)
    s.add_argument("--B")
    s.add_argument("--p", type=float, required=True, help="exponent p")
    s.add_argument("--delta", type=float)
    s.add_argument("--kappa", default="0.1,0.01")
    s.add_argument("--points", type=int, default=100)
    s.add_argument("--nodes", type=int, default=16)
    s.add_argument("--samples", type=int, default=100_000)
    s.add_argument("--slack", type=float, default=0.9)

    s = add("quad-gap", cmd_quad_gap, "best constant in the quadratic-form gap lemma",
            "Print C = sqrt(ac) - |b| and tau = sqrt(a/c) with "
            "a x^2 - 2bxy + c y^2 >= C (tau x^2 + y^2/tau), or 'empty'.")
    for k in ("--a", "--b", "--c"):
        s.add_argument(k, type=float, required=True)

    def problem_args(s_):
        s_.add_argument("--problem", required=True, help="problem JSON file")
        s_.add_argument("--phase", type=float, help="override the rotation phase")

    s = add("semigroup-contract", cmd_semigroup_contract, "L^p contraction ratio of the semigroup",
            "Print max |T_t f|_p / |f|_p over random f for each t.")
    problem_args(s)
    s.add_argument("--p", type=float, required=True, help="exponent p")
    s.add_argument("--t", default="1e-5,1e-4,1e-3,1e-2")
    s.add_argument("--trials", type=int, default=20)
    s.add_argument("--tol", type=float, default=1e-8)

    s = add("dissipativity", cmd_dissipativity, "L^p dissipativity minimum",
            "Print min of Re<L u, |u|^(p-2) u> / |u|_p^p over random and spiral u.")
    problem_args(s)
    s.add_argument("--p", type=float, required=True, help="exponent p")
    s.add_argument("--trials", type=int, default=200)
    s.add_argument("--tol", type=float, default=1e-10)

    s = add("embed", cmd_embed, "bilinear embedding integral",
            "Integrate sqrt(|grad v|^2 + V|v|^2) sqrt(|grad w|^2 + W|w|^2) over space and time "
            "for v = T_t f, w = T_t g; print the EmbeddingReport as CSV.")
    problem_args(s)
    s.add_argument("--p", type=float, required=True, help="exponent p")
    s.add_argument("--t-min", type=float)
    s.add_argument("--t-max", type=float)
    s.add_argument("--rho", type=float, default=1.25)

    s = add("flow", cmd_flow, "heat flow of the Bellman function",
            "Print E(t) = sum Q(T_t f, T_t g), its numerical derivative, the gradient and "
            "potential terms I1, I2 and the lower-bound integrand.")
    problem_args(s)
    s.add_argument("--p", type=float, required=True, help="exponent p")
    s.add_argument("--delta", type=float)
    s.add_argument("--t-first", type=float, default=1e-3)
    s.add_argument("--t-last", type=float, default=0.5)
    s.add_argument("--n-times", type=int, default=20)

    s = add("truncate", cmd_truncate, "potential truncation errors",
            "Print e_grad(n), e_pot(n) for the resolvent with V replaced by min(V, n).")
    problem_args(s)
    s.add_argument("--s", type=float, default=1.0)
    s.add_argument("--n", default=",".join(str(2**k) for k in range(11)))
    s.add_argument("--require-monotone", action="store_true")

    s = add("project", cmd_project, "projection onto the L^p unit ball",
            "Project the problem's f onto the L^p unit ball and check that projections keep "
            "pinned cells at zero.")
    problem_args(s)
    s.add_argument("--p", type=float, required=True, help="exponent p")
    s.add_argument("--trials", type=int, default=100)
    return ap


def run(argv=None) -> int:
    ap = _parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (InputError, StructureError, ParameterError, el.PreconditionError, KeyError,
            ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"pelliptic {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (SolverError, FloatingPointError) as exc:
        print(f"pelliptic {args.command}: numerical failure: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
