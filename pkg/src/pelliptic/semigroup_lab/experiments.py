"""Contractivity, dissipativity, bilinear embedding, heat flow and truncation runs."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.integrate import trapezoid

from ..bellman import BellmanParams, Q_conj_gradient, Q_eval, classify, Region
from ..ellipticity import mu_of, real_form_embedding
from ..numerics import LUSolver, StructureError, project_lp_ball, sym_eig_min
from .evolution import CrankNicolson, default_steps, positive_steps, semigroup_apply
from .operator import DiscreteOperator, lp_norm

log = logging.getLogger(__name__)


def _wnorm(L: DiscreteOperator, u, p):
    return lp_norm(u, p, L.domain.h, L.domain.space_dim)


def _colnorms(L, U, p):
    w = L.domain.cell_volume
    A = np.abs(U)
    if p == np.inf:
        return A.max(axis=0)
    return (np.sum(A**p, axis=0) * w) ** (1.0 / p)


def _smooth_fields(L: DiscreteOperator, rng, n, modes=6):
    """Random low-frequency complex fields vanishing at eliminated cells."""
    X = L.domain.coordinates()
    ext = np.array([n_ * L.domain.h for n_ in L.domain.shape])
    out = np.zeros((L.n, n), dtype=complex)
    for j in range(n):
        u = np.zeros(L.domain.shape, dtype=complex)
        for _ in range(modes):
            k = rng.integers(1, 7, size=len(X))
            ph = rng.uniform(0, 2 * np.pi, size=len(X))
            c = rng.normal() + 1j * rng.normal()
            term = np.ones(L.domain.shape)
            for x, kk, pp, e in zip(X, k, ph, ext):
                term = term * np.cos(np.pi * kk * x / e + pp)
            u += c * term
        out[:, j] = L.domain.restrict(u)
    return out


def random_fields(L: DiscreteOperator, n, rng):
    """``n`` columns: half white complex noise, half smooth random fields."""
    n_noise = n // 2
    noise = rng.normal(size=(L.n, n_noise)) + 1j * rng.normal(size=(L.n, n_noise))
    return np.hstack([noise, _smooth_fields(L, rng, n - n_noise)])


# ---------------------------------------------------------------------------
# Contractivity and dissipativity
# ---------------------------------------------------------------------------

@dataclass
class ContractivityResult:
    max_ratio: float
    ratios: dict  # t -> max ratio at t
    argmax: tuple  # (t, column index)


def contractivity_experiment(L: DiscreteOperator, p, phase=None, t_list=(1e-5, 1e-4, 1e-3, 1e-2),
                             n_trials=20, seed=0, n_steps="positive", f_extra=None,
                             details=False):
    """Largest observed ``|T_t f|_p / |f|_p`` over random ``f`` and ``t in t_list``.

    ``n_steps`` is passed to :func:`semigroup_apply` for each ``t`` (the
    default keeps every substep positivity preserving). ``f_extra`` adds
    caller-supplied columns to the random ones.
    """
    if not p > 1:
        raise ValueError("p must exceed 1")
    if phase is not None and phase != L.phase:
        L = L.with_phase(phase)
    rng = np.random.default_rng(seed)
    F = random_fields(L, n_trials, rng)
    if f_extra is not None:
        F = np.hstack([F, np.asarray(f_extra, dtype=complex).reshape(L.n, -1)])
    n0 = _colnorms(L, F, p)
    best, where, per_t = -np.inf, None, {}
    for t in t_list:
        U = semigroup_apply(L, F, t, n_steps=n_steps)
        r = _colnorms(L, U, p) / n0
        k = int(np.argmax(r))
        per_t[float(t)] = float(r[k])
        if r[k] > best:
            best, where = float(r[k]), (float(t), k)
    if details:
        return ContractivityResult(best, per_t, where)
    return best


def dissipation_value(L: DiscreteOperator, u, p):
    """``Re <L u, |u|^(p-2) u>_h / |u|_p^p`` (columns are separate fields)."""
    u = np.asarray(u, dtype=complex)
    au = np.abs(u)
    with np.errstate(divide="ignore", invalid="ignore"):
        dual = np.where(au > 0, au ** (p - 2) * u, 0.0)
    w = L.domain.cell_volume
    num = w * np.sum((L.matrix @ u) * np.conj(dual), axis=0).real
    den = w * np.sum(au**p, axis=0)
    return num / den


def _flat_cutoff(x, length, ramp=0.1):
    """Smooth function equal to 1 away from the ends, 0 at both ends."""
    r = ramp * length
    left = np.clip(x / r, 0, 1)
    right = np.clip((length - x) / r, 0, 1)
    return np.sin(0.5 * np.pi * left) ** 2 * np.sin(0.5 * np.pi * right) ** 2


def _triangle(x, period):
    y = np.mod(x, period)
    return np.minimum(y, period - y)


def _spiral_fields(L: DiscreteOperator, p, ks=(2, 4, 8, 16, 32, 64)):
    """Candidates whose logarithmic gradient follows the Delta_p-minimizing direction.

    ``xi`` is the minimizing eigenvector of the real embedding for the cell
    matrix with the smallest Delta_p. Two families: ``cutoff * exp(k xi.x)``
    and, along each axis, ``cutoff * exp(k xi_j T(x_j))`` with a triangle
    wave ``T`` (slope +-1, so ``grad u / u = +-k xi`` and ``|u|`` stays bounded).
    """
    mu = mu_of(p)
    best = None
    for A in L.A_field.unique():
        val, vec = sym_eig_min(real_form_embedding(L.rotation * A, mu))
        if best is None or val < best[0]:
            best = (val, vec)
    d = L.domain.space_dim
    xi = best[1][:d] + 1j * best[1][d:]
    X = L.domain.coordinates()
    lengths = [(n_ - 1) * L.domain.h for n_ in L.domain.shape]
    cut = np.ones(L.domain.shape)
    for x, ell in zip(X, lengths):
        cut = cut * _flat_cutoff(x, ell)
    min_period = 8 * L.domain.h
    cols = []
    for direction in (xi, 1j * xi, np.conj(xi), 1j * np.conj(xi)):
        for k in ks:
            for sgn in (1, -1):
                z = sum(sgn * k * c * x for c, x in zip(direction, X))
                z = z - z.real.max()  # keep the modulus <= 1
                cols.append(L.domain.restrict(cut * np.exp(z)))
            growth = k * max(float(np.max(np.abs(direction.real))), 1e-12)
            period = max(min(0.5 * min(lengths), 4.0 / growth), min_period)
            z = sum(k * c * _triangle(x, period) for c, x in zip(direction, X))
            z = z - z.real.max()
            cols.append(L.domain.restrict(cut * np.exp(z)))
    return np.array(cols).T


def dissipativity_check(L: DiscreteOperator, p, n_trials=200, seed=0, return_argmin=False):
    """Minimum of the normalized ``Re <L u, |u|^(p-2) u>_h`` over random and spiral ``u``."""
    if not p > 1:
        raise ValueError("p must exceed 1")
    rng = np.random.default_rng(seed)
    U = np.hstack([random_fields(L, n_trials, rng), _spiral_fields(L, p)])
    keep = np.all(np.abs(U) > 0, axis=0) if p < 2 else np.any(np.abs(U) > 0, axis=0)
    U = U[:, keep]
    vals = dissipation_value(L, U, p)
    k = int(np.argmin(vals))
    if return_argmin:
        return float(vals[k]), U[:, k].copy()
    return float(vals[k])


def lp_ball_invariance_probe(L: DiscreteOperator, p, n_trials=100, seed=0) -> bool:
    """Project random grid fields onto the L^p ball; eliminated cells must stay 0."""
    if not p > 1:
        raise ValueError("p must exceed 1")
    dom = L.domain
    rng = np.random.default_rng(seed)
    act = dom.mask.ravel()
    elim = dom.eliminated.ravel()
    for _ in range(n_trials):
        u = np.zeros(dom.mask.size, dtype=complex)
        u[dom.free_index] = rng.normal(size=dom.n_free) + 1j * rng.normal(size=dom.n_free)
        u[dom.free_index] *= 2.0 / max(lp_norm(u[dom.free_index], p, dom.h, dom.space_dim), 1e-300)
        P = project_lp_ball(u[act], p, cell_volume=dom.cell_volume)
        out = np.zeros_like(u)
        out[act] = P
        if np.any(out[elim] != 0):
            return False
        if lp_norm(P, p, dom.h, dom.space_dim) > 1 + 1e-12:
            return False
    return True


# ---------------------------------------------------------------------------
# Bilinear embedding
# ---------------------------------------------------------------------------

@dataclass
class EmbeddingReport:
    value: float
    fp_norm: float
    gq_norm: float
    ratio: float
    T_max: float
    tail_estimate: float
    times: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    integrand: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)

    FIELDS = ("value", "fp_norm", "gq_norm", "ratio", "T_max", "tail_estimate")

    def row(self):
        return tuple(getattr(self, k) for k in self.FIELDS)


@dataclass(frozen=True)
class TimeGrid:
    """Geometric grid ``0, t_min, t_min rho, ...`` up to ``T_max``.

    ``t_min`` defaults to ``h^2``; ``T_max = None`` extends the grid until
    the last decade contributes less than ``rel_tail`` of the integral.
    """

    t_min: float | None = None
    rho: float = 1.25
    T_max: float | None = None
    rel_tail: float = 0.01
    T_cap: float = 1e4


def _check_pair(LA, LB):
    if LA.domain is not LB.domain and (
        LA.domain.shape != LB.domain.shape
        or LA.domain.h != LB.domain.h
        or not np.array_equal(LA.domain.free, LB.domain.free)
    ):
        raise StructureError("the two operators live on different grids")


class _Evolver:
    """Advance one field along increasing times, one CN factorization per interval."""

    def __init__(self, L, u0, min_sub=16):
        self.L, self.u, self.t, self.min_sub = L, np.asarray(u0, dtype=complex).copy(), 0.0, min_sub
        self._cache = {}

    def advance(self, t):
        dt = t - self.t
        if dt < 0:
            raise ValueError("times must increase")
        if dt > 0:
            n = max(self.min_sub, math.ceil(dt / self.L.domain.h))
            key = round(dt / n, 15)
            stepper = self._cache.get(key)
            if stepper is None:
                stepper = CrankNicolson(self.L, dt / n)
                self._cache = {key: stepper}
            self.u = stepper.step(self.u, n)
            self.t = t
        return self.u


def _embedding_density(LA, LB, v, w):
    ea = np.sqrt(np.maximum(LA.energy_density(v).real, 0.0))
    eb = np.sqrt(np.maximum(LB.energy_density(w).real, 0.0))
    return ea * eb


def bilinear_embedding(LA: DiscreteOperator, LB: DiscreteOperator, f, g, p, time_grid=None):
    """Time-space integral of ``sqrt(|grad v|^2 + V|v|^2) sqrt(|grad w|^2 + W|w|^2)``.

    ``v = T_t^A f`` and ``w = T_t^B g``; trapezoid rule on a geometric time
    grid. ``tail_estimate`` extrapolates the integral past ``T_max`` from the
    decay rate over the last decade.
    """
    _check_pair(LA, LB)
    q = p / (p - 1.0)
    tg = time_grid or TimeGrid()
    h = LA.domain.h
    vol = LA.domain.cell_volume
    f = np.asarray(f, dtype=complex)
    g = np.asarray(g, dtype=complex)
    fp, gq = _wnorm(LA, f, p), _wnorm(LB, g, q)
    t_min = tg.t_min if tg.t_min is not None else h * h
    ev_v, ev_w = _Evolver(LA, f), _Evolver(LB, g)

    times = [0.0]
    vals = [float(vol * np.sum(_embedding_density(LA, LB, f, g)))]
    total = 0.0
    t = t_min
    while True:
        v, w = ev_v.advance(t), ev_w.advance(t)
        times.append(t)
        vals.append(float(vol * np.sum(_embedding_density(LA, LB, v, w))))
        total += 0.5 * (vals[-1] + vals[-2]) * (times[-1] - times[-2])
        if tg.T_max is not None:
            if t >= tg.T_max * (1 - 1e-12):
                break
            t = min(t * tg.rho, tg.T_max)
            continue
        if t >= 10 * t_min:
            tt, vv = np.array(times), np.array(vals)
            sel = tt >= t / 10
            idx = np.flatnonzero(sel)
            lo = idx[0] - 1 if idx[0] > 0 else idx[0]
            decade = trapezoid(vv[lo:], tt[lo:])
            if total == 0.0 or decade < tg.rel_tail * total:
                break
        if t >= tg.T_cap:
            log.warning("time grid reached the cap %g before the tail criterion", tg.T_cap)
            break
        t *= tg.rho

    times = np.array(times)
    vals = np.array(vals)
    tail = 0.0
    if vals[-1] > 0 and len(vals) > 3:
        k = np.flatnonzero(times >= times[-1] / 10)[0]
        if vals[k] > vals[-1] and times[-1] > times[k]:
            rate = math.log(vals[k] / vals[-1]) / (times[-1] - times[k])
            tail = vals[-1] / rate
        else:
            tail = math.inf
    ratio = total / (fp * gq) if fp > 0 and gq > 0 else 0.0
    return EmbeddingReport(total, fp, gq, ratio, float(times[-1]), tail, times, vals)


# ---------------------------------------------------------------------------
# Heat flow of the Bellman function
# ---------------------------------------------------------------------------

@dataclass
class FlowTrace:
    times: np.ndarray
    E: np.ndarray
    dE_numeric: np.ndarray
    I1: np.ndarray
    I2: np.ndarray
    integrand_lower: np.ndarray
    upsilon_hits: int = 0

    FIELDS = ("times", "E", "dE_numeric", "I1", "I2", "integrand_lower")

    def rows(self):
        return list(zip(*(getattr(self, k) for k in self.FIELDS)))


def _flow_terms(LA, LB, v, w, params):
    vol = LA.domain.cell_volume
    dz_bar, de_bar = Q_conj_gradient(v, w, params)
    dz, de = np.conj(dz_bar), np.conj(de_bar)  # Q is real
    I1 = 2 * vol * np.sum(dz * (LA.rotation * (LA.L0 @ v)) + de * (LB.rotation * (LB.L0 @ w))).real
    I2 = 2 * vol * np.sum(dz * (LA.rotation * LA.V_free * v) + de * (LB.rotation * LB.V_free * w)).real
    E = vol * float(np.sum(Q_eval(v, w, params)))
    lower = vol * float(np.sum(_embedding_density(LA, LB, v, w)))
    hits = int(np.sum(classify(v, w, params.p) == Region.OnUpsilon))
    return E, I1, I2, lower, hits


def flow_trace(LA: DiscreteOperator, LB: DiscreteOperator, f, g, params: BellmanParams,
               times=None, eps_rel=1e-3, sub=8):
    """``E(t) = sum_c h^dim Q(T_t f, T_t g)`` with its derivative split into ``I1 + I2``.

    ``dE_numeric`` is a central difference over ``t +- eps`` with
    ``eps = eps_rel * t``, each side resolved by ``sub`` CN substeps.
    ``I1`` pairs the conjugate derivatives of ``Q`` with the gradient part
    of the operators, ``I2`` with the potentials; for the semi-discrete
    flow ``-E' = I1 + I2`` exactly.
    """
    _check_pair(LA, LB)
    h = LA.domain.h
    if times is None:
        times = h * h * 1.25 ** np.arange(0, 200)
        times = times[times <= 1.0]
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) <= 0) or times[0] <= 0:
        raise ValueError("times must be positive and strictly increasing")
    ev_v, ev_w = _Evolver(LA, f), _Evolver(LB, g)
    E, dE, I1, I2, low = [], [], [], [], []
    hits = 0
    for t in times:
        eps = eps_rel * t
        v_m, w_m = ev_v.advance(t - eps), ev_w.advance(t - eps)
        cv, cw = CrankNicolson(LA, eps / sub), CrankNicolson(LB, eps / sub)
        v0, w0 = cv.step(v_m, sub), cw.step(w_m, sub)
        v_p, w_p = cv.step(v0, sub), cw.step(w0, sub)
        e, i1, i2, lo, hc = _flow_terms(LA, LB, v0, w0, params)
        E_p = LA.domain.cell_volume * float(np.sum(Q_eval(v_p, w_p, params)))
        E_m = LA.domain.cell_volume * float(np.sum(Q_eval(v_m, w_m, params)))
        E.append(e)
        dE.append((E_p - E_m) / (2 * eps))
        I1.append(i1)
        I2.append(i2)
        low.append(lo)
        hits += hc
        ev_v.u, ev_v.t = v0, t
        ev_w.u, ev_w.t = w0, t
    if hits:
        log.info("flow_trace: %d cell evaluations on Upsilon (one-sided branch used)", hits)
    return FlowTrace(times, np.array(E), np.array(dE), np.array(I1), np.array(I2), np.array(low), hits)


# ---------------------------------------------------------------------------
# Potential truncation
# ---------------------------------------------------------------------------

@dataclass
class TruncationTable:
    n: np.ndarray
    e_grad: np.ndarray
    e_pot: np.ndarray

    FIELDS = ("n", "e_grad", "e_pot")

    def rows(self):
        return list(zip(self.n, self.e_grad, self.e_pot))


def truncation_convergence(domain, A_field, V_unbounded, s, f, n_list):
    """Errors of ``(s + L_{min(V, n)})^-1 f`` against the untruncated resolvent."""
    from .operator import assemble

    if not s > 0:
        raise ValueError("s must be positive")
    L = assemble(domain, A_field, V_unbounded)
    vol = domain.cell_volume
    f = np.asarray(f, dtype=complex)
    eye = sp.identity(L.n, dtype=complex, format="csc")

    def solve(op):
        return LUSolver((s * eye + op.matrix).tocsc()).solve(f)

    pos = np.searchsorted(domain.active_index, domain.free_index)
    u_inf = solve(L)
    g_inf = L.gradient(u_inf)
    pot_inf = np.sqrt(L.V[pos]) * u_inf
    eg, ep = [], []
    for n in n_list:
        Ln = L.with_potential(np.minimum(L.V, n))
        u = solve(Ln)
        eg.append(math.sqrt(vol * float(np.sum(np.abs(Ln.gradient(u) - g_inf) ** 2))))
        ep.append(math.sqrt(vol * float(np.sum(np.abs(np.sqrt(Ln.V[pos]) * u - pot_inf) ** 2))))
    return TruncationTable(np.asarray(n_list, dtype=float), np.array(eg), np.array(ep))
