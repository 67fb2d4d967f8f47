"""Crank-Nicolson semigroup and resolvent solves."""

from __future__ import annotations

import cmath
import math

import numpy as np
import scipy.sparse as sp

from ..ellipticity import PreconditionError
from ..numerics import LUSolver, SolverError
from .operator import DiscreteOperator

STEP_RTOL = 1e-12


def default_steps(L: DiscreteOperator, t) -> int:
    return max(16, math.ceil(t / L.domain.h))


def positive_steps(L: DiscreteOperator, t) -> int:
    """Substeps with ``dt * max|L_ii| / 2 <= 1``.

    Then ``I - dt L / 2`` keeps the sign pattern of an M-matrix, which makes
    each step positivity preserving and L^inf-contractive for real
    coefficients in 1-d.
    """
    diag = np.abs(L.matrix.diagonal())
    dmax = float(diag.max()) if diag.size else 0.0
    return max(default_steps(L, t), math.ceil(t * dmax / 2.0))


class CrankNicolson:
    """Reusable stepper for a fixed substep ``dt``."""

    def __init__(self, L: DiscreteOperator, dt):
        self.L = L
        self.dt = float(dt)
        eye = sp.identity(L.n, dtype=complex, format="csc")
        half = 0.5 * self.dt * L.matrix
        self._lhs = (eye + half).tocsc()
        self._rhs = (eye - half).tocsr()
        self._lu = LUSolver(self._lhs)

    def step(self, u, n=1, first_index=0):
        for k in range(n):
            b = self._rhs @ u
            u = self._lu.solve(b)
            r = self._lhs @ u - b
            nb = np.linalg.norm(b)
            res = np.linalg.norm(r) / nb if nb > 0 else np.linalg.norm(r)
            if not res <= 1e3 * STEP_RTOL or not np.all(np.isfinite(u)):
                raise SolverError(f"Crank-Nicolson step {first_index + k} failed", residual=res)
        return u


def semigroup_apply(L: DiscreteOperator, f, t, n_steps=None):
    """``T_t f`` by ``n_steps`` uniform Crank-Nicolson substeps.

    ``f`` is a vector on free cells, or a 2-d array whose columns are
    evolved together. ``n_steps`` defaults to ``max(16, ceil(t/h))``;
    pass ``"positive"`` for the positivity-preserving count.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    f = np.asarray(f, dtype=complex)
    if t == 0:
        return f.copy()
    if n_steps is None:
        n_steps = default_steps(L, t)
    elif n_steps == "positive":
        n_steps = positive_steps(L, t)
    if int(n_steps) < 1:
        raise ValueError("n_steps must be >= 1")
    n_steps = int(n_steps)
    return CrankNicolson(L, t / n_steps).step(f, n_steps)


def sector_distance(zeta, phase, omega0) -> float:
    """Distance from ``zeta`` to the closed sector ``|arg z - phase| <= omega0``."""
    z = complex(zeta) * cmath.exp(-1j * phase)
    if z == 0:
        return 0.0
    ang = abs(cmath.phase(z))
    if ang <= omega0:
        return 0.0
    if ang - omega0 >= math.pi / 2:
        return abs(z)
    return abs(z) * math.sin(ang - omega0)


def resolvent_apply(L: DiscreteOperator, zeta, f, check=True):
    """Solve ``(zeta - L_h) x = f`` for ``zeta`` outside the numerical-range sector.

    With ``check`` the bound ``|x|_2 <= |f|_2 / dist(zeta, sector)`` is
    asserted up to ``1e-9`` relative.
    """
    omega0 = L.omega0
    dist = sector_distance(zeta, L.phase, omega0)
    if not dist > 0:
        raise PreconditionError(
            f"zeta = {complex(zeta)} lies in the closed sector of half-angle {omega0:.6g} "
            f"around direction {L.phase:.6g}"
        )
    f = np.asarray(f, dtype=complex)
    M = (complex(zeta) * sp.identity(L.n, dtype=complex, format="csc") - L.matrix).tocsc()
    x = LUSolver(M).solve(f)
    if check:
        nf = np.linalg.norm(f, axis=0)
        nx = np.linalg.norm(x, axis=0)
        if np.any(nx > nf / dist * (1 + 1e-9)):
            raise SolverError(
                f"resolvent bound violated: |x| = {np.max(nx):.6g} > |f|/dist = {np.max(nf) / dist:.6g}"
            )
    return x
