"""Numerical kernels shared by the rest of the package.

Small dense symmetric eigenproblems (Jacobi rotations), complex sparse
solves (preconditioned BiCGSTAB with a dense LU fallback), the weighted
projection onto an L^p unit ball, and a radial bump mollifier on R^4 with
tensor-product quadrature.
"""

from __future__ import annotations

import functools
import math

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import quad

__all__ = [
    "StructureError",
    "ParameterError",
    "SolverError",
    "as_symmetric",
    "sym_eig_min",
    "sym_eig_max",
    "as_operator",
    "bicgstab",
    "solve_sparse",
    "LUSolver",
    "project_lp_ball",
    "Mollifier",
    "mollifier_value",
    "convolve4",
]

DENSE_FALLBACK_MAX_DIM = 2000


class StructureError(ValueError):
    """Input has the wrong shape, symmetry or sparsity structure."""


class ParameterError(ValueError):
    """A scalar parameter is outside its admissible range."""


class SolverError(RuntimeError):
    """An iterative or direct solve did not reach the requested residual."""

    def __init__(self, message, residual=float("nan")):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual


# ---------------------------------------------------------------------------
# Dense symmetric eigenproblems
# ---------------------------------------------------------------------------

def as_symmetric(S) -> np.ndarray:
    """Validate a real symmetric matrix (exact symmetry as stored)."""
    S = np.asarray(S)
    if np.iscomplexobj(S):
        raise StructureError("expected a real matrix")
    S = S.astype(float, copy=False)
    if S.ndim != 2 or S.shape[0] != S.shape[1] or S.shape[0] < 1:
        raise StructureError(f"expected a non-empty square matrix, got shape {S.shape}")
    if not np.array_equal(S, S.T):
        raise StructureError("matrix is not exactly symmetric")
    if not np.all(np.isfinite(S)):
        raise StructureError("matrix has non-finite entries")
    return S


def _round_robin(n):
    """Brent-Luk tournament: n-1 rounds of disjoint index pairs covering all pairs."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        pairs = []
        for k in range(m // 2):
            a, b = players[k], players[m - 1 - k]
            if a < n and b < n:
                pairs.append((min(a, b), max(a, b)))
        rounds.append(pairs)
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


@functools.lru_cache(maxsize=64)
def _rounds_as_arrays(n):
    out = []
    for pairs in _round_robin(n):
        if pairs:
            idx = np.array(pairs, dtype=int)
            out.append((idx[:, 0], idx[:, 1]))
    return tuple(out)


def jacobi_eigh(S, max_sweeps=60):
    """Eigen-decomposition of a real symmetric matrix by cyclic Jacobi rotations.

    Each sweep visits every off-diagonal pair once, grouped into rounds of
    disjoint pairs so a round is a single orthogonal similarity.

    Returns
    -------
    w : (n,) ndarray, ascending eigenvalues
    V : (n, n) ndarray, orthonormal eigenvectors in columns
    """
    a = as_symmetric(S).copy()
    n = a.shape[0]
    V = np.eye(n)
    if n == 1:
        return a.diagonal().copy(), V
    scale = np.linalg.norm(a)
    if scale == 0.0:
        return np.zeros(n), V
    tol = np.finfo(float).eps * scale
    rounds = _rounds_as_arrays(n)
    for _ in range(max_sweeps):
        if np.linalg.norm(a - np.diag(a.diagonal())) <= tol:
            break
        for ip, iq in rounds:
            apq = a[ip, iq]
            active = np.abs(apq) > 1e-300
            if not np.any(active):
                continue
            app, aqq = a[ip, ip], a[iq, iq]
            c = np.ones_like(apq)
            s = np.zeros_like(apq)
            theta = (aqq[active] - app[active]) / (2.0 * apq[active])
            t = np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            t[theta == 0.0] = 1.0
            c[active] = 1.0 / np.sqrt(t * t + 1.0)
            s[active] = t * c[active]
            J = np.eye(n)
            J[ip, ip] = c
            J[iq, iq] = c
            J[ip, iq] = s
            J[iq, ip] = -s
            a = J.T @ a @ J
            a = 0.5 * (a + a.T)
            V = V @ J
    w = a.diagonal().copy()
    order = np.argsort(w, kind="stable")
    return w[order], V[:, order]


def sym_eig_min(S):
    """Smallest eigenvalue of a real symmetric matrix and a unit eigenvector.

    >>> sym_eig_min([[2.0, 1.0], [1.0, 2.0]])[0]
    1.0000000000000002
    """
    w, V = jacobi_eigh(S)
    v = V[:, 0]
    return float(w[0]), v / np.linalg.norm(v)


def sym_eig_max(S):
    """Largest eigenvalue of a real symmetric matrix and a unit eigenvector."""
    w, V = jacobi_eigh(S)
    v = V[:, -1]
    return float(w[-1]), v / np.linalg.norm(v)


# ---------------------------------------------------------------------------
# Sparse complex linear systems
# ---------------------------------------------------------------------------

def as_operator(M) -> sp.csr_matrix:
    """Canonical complex CSR storage: sorted indices, no duplicate entries."""
    if sp.issparse(M):
        out = sp.csr_matrix(M, dtype=complex, copy=True)
    else:
        arr = np.asarray(M)
        if arr.ndim != 2:
            raise StructureError(f"expected a 2-d operator, got shape {arr.shape}")
        out = sp.csr_matrix(arr.astype(complex))
    if out.shape[0] != out.shape[1]:
        raise StructureError(f"operator must be square, got shape {out.shape}")
    out.sum_duplicates()
    out.sort_indices()
    return out


def bicgstab(M, b, tol=1e-10, maxiter=None, x0=None):
    """Right-preconditioned BiCGSTAB with the inverse diagonal as preconditioner.

    Returns ``(x, relres, converged)`` where ``relres`` is the true relative
    residual of the returned iterate.
    """
    M = as_operator(M)
    b = np.asarray(b, dtype=complex)
    n = M.shape[0]
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n, dtype=complex), 0.0, True
    if maxiter is None:
        maxiter = 10 * n + 100
    diag = M.diagonal()
    dinv = np.where(diag != 0, 1.0 / np.where(diag != 0, diag, 1.0), 1.0)

    x = np.zeros(n, dtype=complex) if x0 is None else np.array(x0, dtype=complex)
    r = b - M @ x
    r_hat = r.copy()
    rho_old = alpha = omega = 1.0 + 0j
    v = np.zeros(n, dtype=complex)
    p = np.zeros(n, dtype=complex)
    best_x, best_res = x.copy(), np.linalg.norm(r) / bnorm
    for _ in range(maxiter):
        rho = np.vdot(r_hat, r)
        if rho == 0 or omega == 0:
            break
        beta = (rho / rho_old) * (alpha / omega)
        p = r + beta * (p - omega * v)
        p_hat = dinv * p
        v = M @ p_hat
        denom = np.vdot(r_hat, v)
        if denom == 0:
            break
        alpha = rho / denom
        s = r - alpha * v
        if np.linalg.norm(s) / bnorm <= tol:
            x = x + alpha * p_hat
            r = s
        else:
            s_hat = dinv * s
            t = M @ s_hat
            tt = np.vdot(t, t)
            if tt == 0:
                break
            omega = np.vdot(t, s) / tt
            x = x + alpha * p_hat + omega * s_hat
            r = s - omega * t
        rho_old = rho
        res = np.linalg.norm(r) / bnorm
        if res < best_res:
            best_x, best_res = x.copy(), res
        if res <= tol:
            break
    true_res = np.linalg.norm(b - M @ best_x) / bnorm
    return best_x, float(true_res), bool(true_res <= tol)


def solve_sparse(M, b, tol=1e-10, maxiter=None):
    """Solve ``M x = b`` to relative residual ``tol``.

    BiCGSTAB first; for dimensions up to 2000 a dense LU factorization is
    used when the iteration stalls or breaks down.
    """
    if not tol > 0:
        raise ParameterError("tol must be positive")
    M = as_operator(M)
    b = np.asarray(b, dtype=complex)
    if b.shape != (M.shape[0],):
        raise StructureError(f"right-hand side has shape {b.shape}, expected ({M.shape[0]},)")
    x, res, ok = bicgstab(M, b, tol=tol, maxiter=maxiter)
    if ok:
        return x
    if M.shape[0] <= DENSE_FALLBACK_MAX_DIM:
        try:
            lu = scipy.linalg.lu_factor(M.toarray(), check_finite=True)
            x = scipy.linalg.lu_solve(lu, b)
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise SolverError(f"dense fallback failed: {exc}", res) from exc
        res = float(np.linalg.norm(b - M @ x) / np.linalg.norm(b))
        if res <= tol:
            return x
    raise SolverError("BiCGSTAB did not converge", res)


class LUSolver:
    """Reusable sparse LU factorization for repeated solves with one matrix."""

    def __init__(self, M):
        self.matrix = as_operator(M)
        self._lu = spla.splu(self.matrix.tocsc())

    def solve(self, b):
        b = np.asarray(b, dtype=complex)
        return self._lu.solve(b)

    __call__ = solve


# ---------------------------------------------------------------------------
# Projection onto the weighted L^p unit ball
# ---------------------------------------------------------------------------

def _weighted_pnorm(u, p, w):
    return float(np.sum(w * np.abs(u) ** p) ** (1.0 / p))


def _shrink_moduli(a, c, p, iters=200):
    """Solve r + c r^(p-1) = a for r in [0, a], elementwise (monotone in r)."""
    lo = np.zeros_like(a)
    hi = a.copy()
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        g = mid + c * mid ** (p - 1) - a
        lo = np.where(g < 0, mid, lo)
        hi = np.where(g < 0, hi, mid)
        if np.all(hi - lo <= 4 * np.finfo(float).eps * np.maximum(a, 1e-300)):
            break
    return 0.5 * (lo + hi)


def project_lp_ball(u, p, cell_volume=1.0, max_iter=200):
    """Weighted-L^2 orthogonal projection of ``u`` onto ``{v : ||v||_p <= 1}``.

    Both norms use the uniform weight ``cell_volume``. The minimizer keeps
    the phase of every entry and shrinks its modulus ``a`` to ``r`` with
    ``r + nu * (p/2) * r**(p-1) = a``; the multiplier ``nu`` is found by
    bisection so that the result lies on the unit sphere. Zero entries stay
    exactly zero.
    """
    if not p > 1:
        raise ParameterError(f"p must exceed 1, got {p}")
    if not cell_volume > 0:
        raise ParameterError("cell_volume must be positive")
    u = np.asarray(u, dtype=complex)
    w = float(cell_volume)
    if _weighted_pnorm(u, p, w) <= 1.0:
        return u.copy()
    a = np.abs(u)
    phase = np.zeros_like(u)
    nz = a > 0
    phase[nz] = u[nz] / a[nz]

    def pnorm_at(nu):
        r = _shrink_moduli(a, 0.5 * nu * p, p)
        return _weighted_pnorm(r, p, w), r

    lo, hi = 0.0, max(float(np.sqrt(w) * np.linalg.norm(u)), 1.0)
    while pnorm_at(hi)[0] > 1.0:
        lo, hi = hi, 2.0 * hi
    r = None
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        val, r = pnorm_at(mid)
        if val > 1.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * hi:
            break
    _, r = pnorm_at(hi)
    # Final radial rescale removes the residual bisection error on the sphere.
    r = r / _weighted_pnorm(r, p, w)
    return phase * r


# ---------------------------------------------------------------------------
# Mollifier on R^4
# ---------------------------------------------------------------------------

@functools.lru_cache(maxsize=None)
def _bump_normalization():
    # |S^3| = 2 pi^2; integrate the radial profile once.
    radial, _ = quad(lambda r: r**3 * math.exp(-1.0 / (1.0 - r * r)), 0.0, 1.0,
                     epsabs=1e-15, epsrel=1e-13, limit=200)
    return 1.0 / (2.0 * math.pi**2 * radial)


class Mollifier:
    """Radial bump ``phi_kappa(y) = kappa^-4 c exp(-1/(1-|y/kappa|^2))``."""

    def __init__(self, kappa):
        if not kappa > 0:
            raise ParameterError("kappa must be positive")
        self.kappa = float(kappa)
        self.normalization = _bump_normalization()

    def __call__(self, y):
        z2 = np.sum((np.asarray(y, dtype=float) / self.kappa) ** 2, axis=-1)
        out = np.zeros_like(z2, dtype=float)
        inside = z2 < 1.0
        out[inside] = self.normalization * np.exp(-1.0 / (1.0 - z2[inside]))
        return out / self.kappa**4


def mollifier_value(y, kappa):
    """Value of the scaled bump at ``y`` (last axis of length 4)."""
    return Mollifier(kappa)(y)


@functools.lru_cache(maxsize=32)
def _unit_ball_rule(nodes_per_axis):
    x, w = np.polynomial.legendre.leggauss(nodes_per_axis)
    grids = np.meshgrid(x, x, x, x, indexing="ij")
    Y = np.stack(grids, axis=-1).reshape(-1, 4)
    W = np.prod(np.stack(np.meshgrid(w, w, w, w, indexing="ij"), axis=-1).reshape(-1, 4), axis=1)
    z2 = np.sum(Y * Y, axis=1)
    keep = z2 < 1.0
    Y, W, z2 = Y[keep], W[keep], z2[keep]
    W = W * np.exp(-1.0 / (1.0 - z2))
    W = W / W.sum()
    Y.setflags(write=False)
    W.setflags(write=False)
    return Y, W


def mollifier_rule(kappa, nodes_per_axis=16):
    """Nodes and weights of the discrete kernel used by :func:`convolve4`.

    Weights are Gauss-Legendre tensor weights times the bump, normalized
    to total mass one, so constants are reproduced exactly and (by the
    symmetry of the node set) so are affine functions at the center.
    """
    if nodes_per_axis < 5:
        raise ParameterError("nodes_per_axis must be at least 5")
    if not kappa > 0:
        raise ParameterError("kappa must be positive")
    Y, W = _unit_ball_rule(int(nodes_per_axis))
    return kappa * Y, W


def convolve4(f, x, kappa, nodes_per_axis=16):
    """Quadrature of ``integral f(x - y) phi_kappa(y) dy`` over R^4.

    ``f`` must accept an ``(N, 4)`` array and return ``N`` values.
    """
    Y, W = mollifier_rule(kappa, nodes_per_axis)
    pts = np.asarray(x, dtype=float)[None, :] - Y
    vals = np.asarray(f(pts), dtype=float)
    bad = ~np.isfinite(vals)
    if np.any(bad):
        k = int(np.argmax(bad))
        raise FloatingPointError(f"integrand is not finite at node {pts[k].tolist()}")
    return float(np.dot(W, vals))
