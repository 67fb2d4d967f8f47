"""The Nazarov-Treil Bellman function and its convexity certificates.

``Q(zeta, eta) = |zeta|^p + |eta|^q + delta * R(zeta, eta)`` with

* ``R = |zeta|^2 |eta|^(2-q)`` where ``|zeta|^p <= |eta|^q`` (below the
  diagonal), and
* ``R = (2/p)|zeta|^p + (2/q - 1)|eta|^q`` where ``|zeta|^p >= |eta|^q``.

``Q`` is C^1 on C^2 and C^2 off ``Upsilon = {eta = 0} u {|zeta|^p = |eta|^q}``.
Everything here is vectorized over leading array axes; points are given as
separate ``zeta`` and ``eta`` arrays.

Derivatives use Wirtinger calculus, ``d/dzeta = (d/dx - i d/dy) / 2``.
The generalized Hessian contracts the real 4x4 Hessian of ``Q`` (in the
coordinates ``(Re zeta, Im zeta, Re eta, Im eta)``) against the pair of
directions ``w_j = W(omega1_j, omega2_j)`` and ``W((A omega1)_j, (B omega2)_j)``,
summed over ``j``.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .ellipticity import (
    PreconditionError,
    Lambda_of,
    apply_Ip,
    as_matrix,
    delta_p,
    lambda_of,
)
from .numerics import ParameterError, StructureError, convolve4

__all__ = [
    "Region",
    "RegionError",
    "DeltaTooLargeError",
    "BellmanParams",
    "BellmanPoint",
    "HessianDirection",
    "TauEstimate",
    "ConvexityReport",
    "classify",
    "Q_eval",
    "Q_branches",
    "Q_conj_gradient",
    "Q_gradient_products",
    "Q_hessian",
    "hessian_Fp",
    "grad_power_identity",
    "generalized_hessian",
    "tau_constants",
    "tau_of",
    "choose_delta",
    "convexity_ratios",
    "verify_convexity",
    "mollified_Q",
    "mollified_hessian",
    "mollified_tau",
    "quadratic_gap",
    "normal_contraction",
]

UPSILON_RTOL = 1e-14


class Region(enum.IntEnum):
    BelowDiag = 0
    AboveDiag = 1
    OnUpsilon = 2


class RegionError(ValueError):
    """A point on the non-smooth set was passed where second-order data is needed."""


class DeltaTooLargeError(ValueError):
    """The constant Gamma is not positive for the requested delta."""


@dataclass(frozen=True)
class BellmanParams:
    p: float
    delta: float

    def __post_init__(self):
        if not self.p >= 2:
            raise ParameterError(f"p must be >= 2, got {self.p}")
        if not 0 < self.delta < 1:
            raise ParameterError(f"delta must lie in (0, 1), got {self.delta}")

    @property
    def q(self) -> float:
        return self.p / (self.p - 1.0)


@dataclass(frozen=True)
class BellmanPoint:
    zeta: complex
    eta: complex
    region: Region

    @classmethod
    def of(cls, zeta, eta, p):
        return cls(complex(zeta), complex(eta), Region(int(classify(zeta, eta, p))))


@dataclass(frozen=True)
class HessianDirection:
    omega1: np.ndarray
    omega2: np.ndarray

    def __post_init__(self):
        w1 = np.atleast_1d(np.asarray(self.omega1, dtype=complex))
        w2 = np.atleast_1d(np.asarray(self.omega2, dtype=complex))
        if w1.shape != w2.shape:
            raise StructureError("omega1 and omega2 must have the same shape")
        if not (np.all(np.isfinite(w1)) and np.all(np.isfinite(w2))):
            raise StructureError("direction has non-finite entries")
        object.__setattr__(self, "omega1", w1)
        object.__setattr__(self, "omega2", w2)


@dataclass(frozen=True)
class TauEstimate:
    tau: float
    branch: str
    Gamma: float
    D: float


# ---------------------------------------------------------------------------
# Radial power building blocks
# ---------------------------------------------------------------------------

def _abs_pow(z, r):
    """``|z|^r`` with ``0^0 = 1``."""
    a = np.abs(z)
    if r == 0:
        return np.ones_like(a)
    return a**r


def _conj_grad_pow(z, r):
    """``d/d(conj z) |z|^r = (r/2) |z|^(r-2) z``, zero at the origin for r > 1."""
    if r == 0:
        return np.zeros_like(np.asarray(z, dtype=complex))
    z = np.asarray(z, dtype=complex)
    a = np.abs(z)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = 0.5 * r * a ** (r - 1) * np.where(a > 0, z / np.where(a > 0, a, 1.0), 0.0)
    return out


def _real_grad_pow(z, r):
    """Gradient of ``|z|^r`` in ``(x, y)``: twice the conjugate derivative."""
    g = 2.0 * _conj_grad_pow(z, r)
    return np.stack([g.real, g.imag], axis=-1)


def _real_hess_pow(z, r):
    """Hessian of ``|z|^r`` in ``(x, y)``: ``r |z|^(r-2) (I + (r-2) e e^T)``."""
    z = np.asarray(z, dtype=complex)
    a = np.abs(z)
    eye = np.broadcast_to(np.eye(2), z.shape + (2, 2))
    if r == 0:
        return np.zeros(z.shape + (2, 2))
    with np.errstate(divide="ignore", invalid="ignore"):
        safe = np.where(a > 0, a, 1.0)
        e = np.stack([z.real / safe, z.imag / safe], axis=-1)
        outer = e[..., :, None] * e[..., None, :]
        coef = r * np.where(a > 0, safe ** (r - 2), 0.0)
        H = coef[..., None, None] * (eye + (r - 2) * outer)
    at0 = a == 0
    if np.any(at0):
        if r == 2:
            H[at0] = 2.0 * np.eye(2)
        elif r > 2:
            H[at0] = 0.0
        else:
            H[at0] = np.inf
    return H


def _above_coefs(params):
    p, q, dl = params.p, params.q, params.delta
    return 1.0 + 2.0 * dl / p, 1.0 + dl * (2.0 / q - 1.0)


# ---------------------------------------------------------------------------
# Q and its derivatives
# ---------------------------------------------------------------------------

def classify(zeta, eta, p):
    """Region code (see :class:`Region`) of each point."""
    q = p / (p - 1.0)
    up = _abs_pow(zeta, p)
    vq = _abs_pow(eta, q)
    on = (np.abs(eta) == 0) | (np.abs(up - vq) <= UPSILON_RTOL * (1.0 + vq))
    out = np.where(up < vq, int(Region.BelowDiag), int(Region.AboveDiag))
    return np.where(on, int(Region.OnUpsilon), out)


def Q_branches(zeta, eta, params: BellmanParams):
    """Both branch formulas ``(below, above)`` evaluated everywhere."""
    p, q, dl = params.p, params.q, params.delta
    up, vq = _abs_pow(zeta, p), _abs_pow(eta, q)
    below = up + vq + dl * _abs_pow(zeta, 2) * _abs_pow(eta, 2 - q)
    above = up + vq + dl * ((2.0 / p) * up + (2.0 / q - 1.0) * vq)
    return below, above


def Q_eval(zeta, eta, params: BellmanParams):
    """Value of the Bellman function."""
    below, above = Q_branches(zeta, eta, params)
    up, vq = _abs_pow(zeta, params.p), _abs_pow(eta, params.q)
    out = np.where(up <= vq, below, above)
    return float(out) if np.ndim(out) == 0 else out


def _is_below(zeta, eta, params):
    return _abs_pow(zeta, params.p) <= _abs_pow(eta, params.q)


def Q_conj_gradient(zeta, eta, params: BellmanParams):
    """``(dQ/d conj(zeta), dQ/d conj(eta))``; defined everywhere (Q is C^1)."""
    p, q, dl = params.p, params.q, params.delta
    a, b = _above_coefs(params)
    zeta = np.asarray(zeta, dtype=complex)
    eta = np.asarray(eta, dtype=complex)
    gz_p, ge_q = _conj_grad_pow(zeta, p), _conj_grad_pow(eta, q)
    below_z = gz_p + dl * _abs_pow(eta, 2 - q) * zeta
    below_e = ge_q + dl * _abs_pow(zeta, 2) * _conj_grad_pow(eta, 2 - q)
    below = _is_below(zeta, eta, params)
    dz = np.where(below, below_z, a * gz_p)
    de = np.where(below, below_e, b * ge_q)
    return dz, de


def Q_gradient_products(zeta, eta, params: BellmanParams, *, check_region=True):
    """``(Re(dQ/dzeta * zeta), Re(dQ/deta * eta))`` from the branch formulas."""
    if check_region and params.p != 2 and np.any(classify(zeta, eta, params.p) == Region.OnUpsilon):
        raise RegionError("gradient products requested on Upsilon")
    p, q, dl = params.p, params.q, params.delta
    a, b = _above_coefs(params)
    up, vq = _abs_pow(zeta, p), _abs_pow(eta, q)
    mixed = _abs_pow(zeta, 2) * _abs_pow(eta, 2 - q)
    below = up <= vq
    gz = np.where(below, 0.5 * p * up + dl * mixed, a * 0.5 * p * up)
    ge = np.where(below, 0.5 * q * vq + dl * 0.5 * (2 - q) * mixed, b * 0.5 * q * vq)
    if np.ndim(gz) == 0:
        return float(gz), float(ge)
    return gz, ge


def Q_hessian(zeta, eta, params: BellmanParams):
    """Real 4x4 Hessian of ``Q`` in ``(Re zeta, Im zeta, Re eta, Im eta)``.

    Branch is chosen by ``|zeta|^p <= |eta|^q``; on the gluing set this is a
    one-sided value. Callers needing C^2 data exclude Upsilon first.
    """
    p, q, dl = params.p, params.q, params.delta
    a, b = _above_coefs(params)
    zeta = np.asarray(zeta, dtype=complex)
    eta = np.asarray(eta, dtype=complex)
    shape = np.broadcast_shapes(zeta.shape, eta.shape)
    zeta = np.broadcast_to(zeta, shape)
    eta = np.broadcast_to(eta, shape)
    Hp = _real_hess_pow(zeta, p)
    Hq = _real_hess_pow(eta, q)
    H = np.zeros(shape + (4, 4))
    below = _is_below(zeta, eta, params)

    Ha = np.zeros_like(H)
    Ha[..., :2, :2] = a * Hp
    Ha[..., 2:, 2:] = b * Hq

    Hb = np.zeros_like(H)
    v_r = _abs_pow(eta, 2 - q)
    u2 = _abs_pow(zeta, 2)
    Hb[..., :2, :2] = Hp + dl * 2.0 * v_r[..., None, None] * np.eye(2)
    Hb[..., 2:, 2:] = Hq + dl * u2[..., None, None] * _real_hess_pow(eta, 2 - q)
    cross = dl * _real_grad_pow(zeta, 2)[..., :, None] * _real_grad_pow(eta, 2 - q)[..., None, :]
    Hb[..., :2, 2:] = cross
    Hb[..., 2:, :2] = np.swapaxes(cross, -1, -2)

    H = np.where(below[..., None, None], Hb, Ha)
    return H


# ---------------------------------------------------------------------------
# Power functions and the chain rule
# ---------------------------------------------------------------------------

def _sign(z):
    z = np.asarray(z, dtype=complex)
    a = np.abs(z)
    return np.where(a > 0, z / np.where(a > 0, a, 1.0), 0.0)


def hessian_Fp(zeta, xi, p):
    """``V^-1(d^2 F_p(zeta) V(xi))`` for ``F_p = |.|^p``, componentwise in ``xi``.

    Equals ``(p^2/2) |zeta|^(p-2) sign(zeta) I_p(sign(conj zeta) xi)``.
    """
    if not p > 1:
        raise ParameterError("p must exceed 1")
    xi = np.asarray(xi, dtype=complex)
    if zeta == 0:
        if p == 2:
            return 2.0 * xi
        if p > 2:
            return np.zeros_like(xi)
        raise RegionError("Hessian of |zeta|^p is singular at 0 for p < 2")
    s = _sign(zeta)
    return 0.5 * p * p * abs(zeta) ** (p - 2) * s * apply_Ip(np.conj(s) * xi, p)


def _forward_diff(f, h):
    f = np.asarray(f, dtype=complex)
    return [np.diff(f, axis=k) / h for k in range(f.ndim)]


def _trim(arr, ndim, k):
    sl = tuple(slice(0, -1) if j != k else slice(None) for j in range(ndim))
    return arr[sl] if ndim > 1 else arr


def grad_power_identity(f, p, h, cells=None):
    """Max relative residual of the chain rule for ``|f|^(p-2) f`` on a grid.

    Left side: forward differences of ``|f|^(p-2) f``. Right side:
    ``(p/2)|f|^(p-2) sign f I_p(sign(conj f) Df)`` with the same forward
    differences ``Df``, evaluated at the left node of each difference.
    ``cells`` optionally restricts the comparison (boolean mask on the
    grid of difference nodes or an index array, 1-d grids).
    """
    if not p > 1:
        raise ParameterError("p must exceed 1")
    f = np.asarray(f, dtype=complex)
    absf = np.abs(f)
    if p < 2 and np.any(absf == 0):
        bad = np.argwhere(absf == 0).tolist()
        raise RegionError(f"|f| vanishes at cells {bad} and p < 2")
    g = _abs_pow(f, p - 2) * f
    lhs_all = _forward_diff(g, h)
    df_all = _forward_diff(f, h)
    num = den = 0.0
    for k, (lhs, df) in enumerate(zip(lhs_all, df_all)):
        base = np.take(f, np.arange(f.shape[k] - 1), axis=k)
        s = _sign(base)
        rhs = 0.5 * p * _abs_pow(base, p - 2) * s * apply_Ip(np.conj(s) * df, p)
        diff = np.abs(lhs - rhs)
        mag = np.abs(rhs)
        if cells is not None:
            diff, mag = diff[cells], mag[cells]
        num = max(num, float(np.max(diff)) if diff.size else 0.0)
        den = max(den, float(np.max(mag)) if mag.size else 0.0)
    if den == 0.0:
        return num
    return num / den


# ---------------------------------------------------------------------------
# Generalized Hessian
# ---------------------------------------------------------------------------

def _interleave(w1, w2):
    # (..., d) complex pair -> (..., d, 4) real: Re w1, Im w1, Re w2, Im w2
    return np.stack([w1.real, w1.imag, w2.real, w2.imag], axis=-1)


def _generalized_hessian_from(D2, A, B, omega1, omega2):
    omega1 = np.asarray(omega1, dtype=complex)
    omega2 = np.asarray(omega2, dtype=complex)
    Aw1 = np.einsum("ij,...j->...i", A, omega1)
    Bw2 = np.einsum("ij,...j->...i", B, omega2)
    w = _interleave(omega1, omega2)
    what = _interleave(Aw1, Bw2)
    return np.einsum("...jk,...kl,...jl->...", w, D2, what)


def generalized_hessian(A, B, zeta, eta, omega1, omega2, params: BellmanParams,
                        *, check_region=True):
    """``H_Q^{(A,B)}[(zeta, eta); (omega1, omega2)]``.

    ``omega1``, ``omega2`` have trailing axis ``d``; leading axes broadcast
    against ``zeta``, ``eta``.
    """
    A, B = as_matrix(A), as_matrix(B)
    if A.shape != B.shape:
        raise StructureError("A and B must have the same dimension")
    # at p = 2 both branches coincide with one quadratic, so Upsilon is harmless
    if check_region and params.p != 2 and np.any(classify(zeta, eta, params.p) == Region.OnUpsilon):
        raise RegionError("generalized Hessian requested on Upsilon")
    D2 = Q_hessian(zeta, eta, params)
    out = _generalized_hessian_from(D2, A, B, omega1, omega2)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# tau, Gamma, D and the choice of delta
# ---------------------------------------------------------------------------

def _delta_two_minus_q(B, q):
    # Exponent 2 - q lies in (0, 1): |1 - 2/(2-q)| = q / (2 - q).
    return delta_p(B, mu=q / (2.0 - q))


def tau_constants(params: BellmanParams, A, B):
    """``(Gamma, D)`` used below the diagonal; raises if ``Gamma <= 0``."""
    q, dl = params.q, params.delta
    extra = 0.0 if q == 2 else (2.0 - q) ** 2 * _delta_two_minus_q(B, q)
    Gamma = q * q * delta_p(B, q) / dl + extra
    if not Gamma > 0:
        raise DeltaTooLargeError(f"Gamma = {Gamma:.6g} <= 0 for delta = {dl}")
    lam = lambda_of(A)
    if not lam > 0:
        raise PreconditionError(f"lambda(A) = {lam:.6g} is not positive")
    return Gamma, 2.0 * math.sqrt(lam / Gamma)


def _tau_array(zeta, eta, params, D):
    p, q = params.p, params.q
    if p == 2:
        return np.ones(np.broadcast_shapes(np.shape(zeta), np.shape(eta)))
    below = _is_below(zeta, eta, params)
    return np.where(below, D * _abs_pow(eta, 2 - q), (p - 1.0) * _abs_pow(zeta, p - 2))


def tau_of(zeta, eta, params: BellmanParams, A, B) -> TauEstimate:
    """The weight ``tau(sigma)`` balancing the two directions at one point."""
    if params.p != 2 and classify(zeta, eta, params.p) == Region.OnUpsilon:
        raise RegionError("tau is only defined off Upsilon")
    Gamma, D = tau_constants(params, A, B)
    if params.p == 2:
        branch = "P2"
    elif _is_below(zeta, eta, params):
        branch = "Below"
    else:
        branch = "Above"
    tau = float(_tau_array(zeta, eta, params, D))
    return TauEstimate(tau, branch, Gamma, D)


def choose_delta(p, A, B) -> float:
    """A ``delta`` with ``lambda(A) Gamma / 4 > ((2-q) Lambda(A,B))^2``, halved for margin.

    ``Gamma(delta) = c1/delta + c2`` is decreasing, so the inequality holds
    exactly for ``delta < delta* = c1 / (4R/lambda - c2)``.
    """
    if not p >= 2:
        raise ParameterError("p must be >= 2")
    A, B = as_matrix(A), as_matrix(B)
    dA, dB = delta_p(A, p), delta_p(B, p)
    if not min(dA, dB) > 0:
        raise PreconditionError(f"pair is not p-elliptic: Delta_p(A)={dA:.6g}, Delta_p(B)={dB:.6g}")
    lam = lambda_of(A)
    if not lam > 0:
        raise PreconditionError(f"lambda(A) = {lam:.6g} is not positive")
    q = p / (p - 1.0)
    if q == 2:
        return 0.5
    c1 = q * q * delta_p(B, q)
    c2 = (2.0 - q) ** 2 * _delta_two_minus_q(B, q)
    R = ((2.0 - q) * max(Lambda_of(A), Lambda_of(B))) ** 2
    denom = 4.0 * R / lam - c2
    if not denom > 0:
        return 0.5
    return min(0.5, 0.5 * c1 / denom)


# ---------------------------------------------------------------------------
# Sampled convexity certificate
# ---------------------------------------------------------------------------

_BRANCH_NAMES = {int(Region.BelowDiag): "Below", int(Region.AboveDiag): "Above"}


def convexity_ratios(A, B, zeta, eta, omega1, omega2, params: BellmanParams):
    """Pointwise ratios ``(r_hess, r_gz, r_ge)`` against the ``tau`` weights."""
    A, B = as_matrix(A), as_matrix(B)
    _, D = tau_constants(params, A, B)
    tau = _tau_array(zeta, eta, params, D)
    H = generalized_hessian(A, B, zeta, eta, omega1, omega2, params, check_region=False)
    gz, ge = Q_gradient_products(zeta, eta, params, check_region=False)
    n1 = np.sum(np.abs(omega1) ** 2, axis=-1)
    n2 = np.sum(np.abs(omega2) ** 2, axis=-1)
    r_h = H / (tau * n1 + n2 / tau)
    r_z = gz / (tau * np.abs(zeta) ** 2)
    r_e = ge * tau / np.abs(eta) ** 2
    return r_h, r_z, r_e


def _log_uniform(rng, size, lo=1e-3, hi=1e3):
    return np.exp(rng.uniform(math.log(lo), math.log(hi), size))


def _sample_points(rng, n, d, p):
    def draw(m):
        zeta = _log_uniform(rng, m) * np.exp(2j * math.pi * rng.uniform(size=m))
        eta = _log_uniform(rng, m) * np.exp(2j * math.pi * rng.uniform(size=m))
        return zeta, eta

    zeta, eta = draw(n)
    while True:
        bad = classify(zeta, eta, p) == Region.OnUpsilon
        if not np.any(bad):
            break
        zeta[bad], eta[bad] = draw(int(bad.sum()))
    g1 = rng.normal(size=(n, d)) + 1j * rng.normal(size=(n, d))
    g2 = rng.normal(size=(n, d)) + 1j * rng.normal(size=(n, d))
    omega1 = g1 / np.linalg.norm(g1, axis=1, keepdims=True) * _log_uniform(rng, n)[:, None]
    omega2 = g2 / np.linalg.norm(g2, axis=1, keepdims=True) * _log_uniform(rng, n)[:, None]
    return zeta, eta, omega1, omega2


@dataclass
class ConvexityReport:
    c_hess: float
    c_gz: float
    c_ge: float
    worst_points: dict
    branch_minima: dict = field(default_factory=dict)
    seed: int = 0
    n_samples: int = 0

    def __iter__(self):
        return iter((self.c_hess, self.c_gz, self.c_ge, self.worst_points))

    def csv_rows(self):
        """Rows ``(seed, n_samples, branch, c_hess, c_gz, c_ge, argmin point)``."""
        rows = [(self.seed, self.n_samples, "all", self.c_hess, self.c_gz, self.c_ge,
                 _fmt_point(self.worst_points.get("hess")))]
        for name, (ch, cz, ce, pt) in sorted(self.branch_minima.items()):
            rows.append((self.seed, self.n_samples, name, ch, cz, ce, _fmt_point(pt)))
        return rows


def _fmt_point(pt):
    if pt is None:
        return ""
    z, e = pt["zeta"], pt["eta"]
    return f"({z.real:.17g}{z.imag:+.17g}j;{e.real:.17g}{e.imag:+.17g}j)"


_CHUNK = 8192


def _chunk_minima(args):
    A, B, params, n, d, seq = args
    rng = np.random.default_rng(seq)
    zeta, eta, w1, w2 = _sample_points(rng, n, d, params.p)
    r_h, r_z, r_e = convexity_ratios(A, B, zeta, eta, w1, w2, params)
    if params.p == 2:
        branch = np.full(n, -1)
    else:
        branch = np.where(_is_below(zeta, eta, params), int(Region.BelowDiag), int(Region.AboveDiag))
    out = {}
    for key in (None, int(Region.BelowDiag), int(Region.AboveDiag), -1):
        sel = np.ones(n, bool) if key is None else branch == key
        if not np.any(sel):
            continue
        idx = np.flatnonzero(sel)
        entry = []
        for r in (r_h, r_z, r_e):
            k = idx[np.argmin(r[idx])]
            entry.append((float(r[k]), {"zeta": complex(zeta[k]), "eta": complex(eta[k]),
                                        "omega1": w1[k].copy(), "omega2": w2[k].copy()}))
        out[key] = entry
    return out


def verify_convexity(A, B, params: BellmanParams, n_samples=100_000, seed=0, threads=1):
    """Minimal sampled ratios of the three estimates over random ``(sigma, omega)``.

    Magnitudes of ``zeta``, ``eta``, ``omega1``, ``omega2`` are log-uniform in
    ``[1e-3, 1e3]`` with uniform phases. Work is split into fixed chunks
    with spawned seed streams, so results do not depend on ``threads``.
    """
    A, B = as_matrix(A), as_matrix(B)
    if A.shape != B.shape:
        raise StructureError("A and B must have the same dimension")
    d = A.shape[0]
    counts = [_CHUNK] * (n_samples // _CHUNK)
    if n_samples % _CHUNK:
        counts.append(n_samples % _CHUNK)
    seqs = np.random.SeedSequence(seed).spawn(len(counts))
    jobs = [(A, B, params, n, d, s) for n, s in zip(counts, seqs)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_chunk_minima, jobs))
    else:
        parts = [_chunk_minima(j) for j in jobs]

    merged = {}
    for part in parts:
        for key, entry in part.items():
            if key not in merged:
                merged[key] = entry
            else:
                merged[key] = [e if e[0] <= m[0] else m for e, m in zip(entry, merged[key])]
    (ch, ph), (cz, pz), (ce, pe) = merged[None]
    worst = {"hess": ph, "gz": pz, "ge": pe}
    names = {int(Region.BelowDiag): "Below", int(Region.AboveDiag): "Above", -1: "P2"}
    branch_minima = {
        names[k]: (v[0][0], v[1][0], v[2][0], v[0][1]) for k, v in merged.items() if k is not None
    }
    return ConvexityReport(ch, cz, ce, worst, branch_minima, seed=seed, n_samples=n_samples)


# ---------------------------------------------------------------------------
# Mollified quantities
# ---------------------------------------------------------------------------

def _split(pts):
    return pts[:, 0] + 1j * pts[:, 1], pts[:, 2] + 1j * pts[:, 3]


def _center(zeta, eta):
    return np.array([complex(zeta).real, complex(zeta).imag, complex(eta).real, complex(eta).imag])


def mollified_Q(zeta, eta, params: BellmanParams, kappa, nodes=16):
    """``(Q * phi_kappa)(zeta, eta)`` by tensor quadrature on R^4."""
    return convolve4(lambda pts: Q_eval(*_split(pts), params), _center(zeta, eta), kappa, nodes)


def mollified_hessian(A, B, zeta, eta, omega1, omega2, params: BellmanParams, kappa,
                      nodes=16, method="kernel"):
    """Generalized Hessian of ``Q * phi_kappa`` at ``(zeta, eta)``.

    ``method="kernel"`` integrates the generalized Hessian of ``Q`` against
    the mollifier (Q is C^1, so second derivatives commute with the
    convolution). ``method="fd"`` takes central second differences of the
    mollified function itself, with step ``kappa / 8``.
    """
    A, B = as_matrix(A), as_matrix(B)
    omega1 = np.atleast_1d(np.asarray(omega1, dtype=complex))
    omega2 = np.atleast_1d(np.asarray(omega2, dtype=complex))
    x0 = _center(zeta, eta)
    if method == "kernel":
        def integrand(pts):
            z, e = _split(pts)
            D2 = Q_hessian(z, e, params)
            return _generalized_hessian_from(D2, A, B, omega1[None, :], omega2[None, :])
        return convolve4(integrand, x0, kappa, nodes)
    if method != "fd":
        raise ParameterError(f"unknown method {method!r}")
    step = kappa / 8.0

    def psi(x):
        return convolve4(lambda pts: Q_eval(*_split(pts), params), x, kappa, nodes)

    D2 = np.zeros((4, 4))
    f0 = psi(x0)
    E = np.eye(4) * step
    for i in range(4):
        D2[i, i] = (psi(x0 + E[i]) - 2 * f0 + psi(x0 - E[i])) / step**2
        for j in range(i + 1, 4):
            v = (psi(x0 + E[i] + E[j]) - psi(x0 + E[i] - E[j])
                 - psi(x0 - E[i] + E[j]) + psi(x0 - E[i] - E[j])) / (4 * step**2)
            D2[i, j] = D2[j, i] = v
    return float(_generalized_hessian_from(D2, A, B, omega1, omega2))


def mollified_tau(zeta, eta, params: BellmanParams, A, B, kappa, nodes=16):
    """``((tau * phi_kappa)(sigma), (tau^-1 * phi_kappa)(sigma))``."""
    _, D = tau_constants(params, as_matrix(A), as_matrix(B))
    x0 = _center(zeta, eta)
    t = convolve4(lambda pts: _tau_array(*_split(pts), params, D), x0, kappa, nodes)
    ti = convolve4(lambda pts: 1.0 / _tau_array(*_split(pts), params, D), x0, kappa, nodes)
    return t, ti


# ---------------------------------------------------------------------------
# Elementary pieces
# ---------------------------------------------------------------------------

def quadratic_gap(a, b, c):
    """Best ``(C, tau)`` with ``a x^2 - 2bxy + c y^2 >= C (tau x^2 + y^2/tau)``.

    Returns ``None`` unless ``a, c > 0`` and ``ac - b^2 > 0``.
    """
    if a > 0 and c > 0 and a * c - b * b > 0:
        return math.sqrt(a * c) - abs(b), math.sqrt(a / c)
    return None


def normal_contraction(kind, z):
    """The contractions ``P`` (radial cut at 1), ``T`` (positive real part) and ``Sign``."""
    z = np.asarray(z, dtype=complex)
    key = str(kind).upper()
    if key == "P":
        out = np.minimum(1.0, np.abs(z)) * _sign(z)
    elif key == "T":
        out = np.maximum(z.real, 0.0) + 0j
    elif key == "SIGN":
        out = _sign(z)
    else:
        raise ParameterError(f"unknown contraction {kind!r}")
    return complex(out) if out.ndim == 0 else out
