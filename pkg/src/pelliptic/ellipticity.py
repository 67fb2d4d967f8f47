"""Ellipticity and p-ellipticity constants of complex matrices.

All constants reduce to extreme eigenvalues of real symmetric matrices
obtained by identifying C^d with R^{2d}. For a matrix ``A`` and ``mu >= 0``
the quadratic form ``xi -> Re <A xi, xi + mu conj(xi)>`` is represented
exactly by a 2d x 2d real symmetric matrix, so ``delta_p`` is a smallest
eigenvalue rather than a sampled minimum.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import ParameterError, StructureError, sym_eig_max, sym_eig_min

__all__ = [
    "PreconditionError",
    "as_matrix",
    "MatrixField",
    "EllipticityReport",
    "mu_of",
    "lambda_of",
    "Lambda_of",
    "real_form_embedding",
    "delta_p",
    "delta_p_field",
    "pair_constants",
    "p_range",
    "rotation_angle",
    "sector_angle",
    "sector_angles",
    "ellipticity_report",
    "apply_Ip",
    "identify_V",
    "identify_V_inv",
    "identify_W",
    "identify_W_inv",
    "matrix_from_json",
    "matrix_to_json",
    "load_matrix",
]


class PreconditionError(ValueError):
    """An operation was called outside its domain (e.g. non-accretive input)."""


def as_matrix(A) -> np.ndarray:
    """Coerce to a finite square complex array; scalars become 1x1."""
    A = np.asarray(A, dtype=complex)
    if A.ndim == 0:
        A = A.reshape(1, 1)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
        raise StructureError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise StructureError("matrix has non-finite entries")
    return A


@dataclass(frozen=True)
class MatrixField:
    """One d x d complex matrix per active cell, stored as ``(n_cells, d, d)``."""

    matrices: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrices, dtype=complex)
        if m.ndim == 2:
            m = m[None]
        if m.ndim != 3 or m.shape[1] != m.shape[2]:
            raise StructureError(f"matrix field must have shape (n, d, d), got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise StructureError("matrix field has non-finite entries")
        object.__setattr__(self, "matrices", m)

    @classmethod
    def constant(cls, A, n_cells):
        A = as_matrix(A)
        return cls(np.broadcast_to(A, (n_cells,) + A.shape).copy())

    @property
    def d(self):
        return self.matrices.shape[1]

    def __len__(self):
        return self.matrices.shape[0]

    def __iter__(self):
        return iter(self.matrices)

    def unique(self):
        """Distinct cell matrices (constants only depend on these)."""
        if len(self) == 0:
            return self.matrices
        flat = self.matrices.reshape(len(self), -1)
        _, idx = np.unique(flat, axis=0, return_index=True)
        return self.matrices[np.sort(idx)]


def _cells(A):
    if isinstance(A, MatrixField):
        if len(A) == 0:
            raise StructureError("empty matrix field")
        return A.unique()
    return as_matrix(A)[None]


def mu_of(p) -> float:
    """``|1 - 2/p|``."""
    if p == 0:
        raise ParameterError("exponent 0 is not admissible")
    if math.isinf(p):
        return 1.0
    return abs(1.0 - 2.0 / p)


# ---------------------------------------------------------------------------
# Real embeddings
# ---------------------------------------------------------------------------

def _block(R, S):
    return np.block([[R, -S], [S, R]])


def real_form_embedding(A, mu=0.0) -> np.ndarray:
    """Real symmetric ``M`` with ``<M V(xi), V(xi)> = Re <A xi, xi + mu conj(xi)>``.

    With ``A = R + iS`` and ``xi = x + iy``, ``Re <A xi, xi>`` has block
    matrix ``[[R, -S], [S, R]]`` and ``Re <A xi, conj(xi)>`` has
    ``[[R, -S], [-S, -R]]``; ``M`` is the symmetric part of the sum.
    """
    if mu < 0:
        raise ParameterError("mu must be nonnegative")
    A = as_matrix(A)
    R, S = A.real, A.imag
    K = _block(R, S) + mu * np.block([[R, -S], [-S, -R]])
    return 0.5 * (K + K.T)


def _hermitian_embedding(H):
    # Real embedding of a Hermitian matrix; each eigenvalue appears twice.
    K = _block(H.real, H.imag)
    return 0.5 * (K + K.T)


def _lambda_single(A):
    return sym_eig_min(real_form_embedding(A, 0.0))[0]


def _Lambda_single(A):
    top = sym_eig_max(_hermitian_embedding(A.conj().T @ A))[0]
    return math.sqrt(max(top, 0.0))


def _delta_single(A, mu):
    return sym_eig_min(real_form_embedding(A, mu))[0]


def lambda_of(A) -> float:
    """Accretivity constant ``min_{|xi|=1} Re <A xi, xi>`` (minimum over cells)."""
    return min(_lambda_single(c) for c in _cells(A))


def Lambda_of(A) -> float:
    """Operator norm of ``A`` (maximum over cells)."""
    return max(_Lambda_single(c) for c in _cells(A))


def delta_p(A, p=None, *, mu=None) -> float:
    """p-ellipticity constant ``Delta_p(A)``.

    Pass either the exponent ``p`` or the coefficient ``mu = |1 - 2/p|``
    directly; ``mu > 1`` is allowed (it corresponds to exponents in (0, 1)).
    """
    if (p is None) == (mu is None):
        raise ParameterError("give exactly one of p or mu")
    m = mu_of(p) if mu is None else float(mu)
    if m < 0:
        raise ParameterError("mu must be nonnegative")
    return min(_delta_single(c, m) for c in _cells(A))


def delta_p_field(F: MatrixField, p) -> float:
    """``Delta_p`` of a matrix field: the minimum over its cells."""
    if not isinstance(F, MatrixField):
        F = MatrixField(F)
    if len(F) == 0:
        raise StructureError("empty matrix field")
    return delta_p(F, p)


def _dim(A):
    return A.d if isinstance(A, MatrixField) else as_matrix(A).shape[0]


def pair_constants(A, B, p):
    """``(Delta_p(A, B), lambda(A, B), Lambda(A, B))`` for a pair of coefficients."""
    if _dim(A) != _dim(B):
        raise StructureError(f"dimension mismatch: {_dim(A)} vs {_dim(B)}")
    return (
        min(delta_p(A, p), delta_p(B, p)),
        min(lambda_of(A), lambda_of(B)),
        max(Lambda_of(A), Lambda_of(B)),
    )


# ---------------------------------------------------------------------------
# Derived ranges and angles
# ---------------------------------------------------------------------------

def p_range(A, tol=1e-9):
    """Maximal interval ``(p_min, p_max)`` around 2 on which ``Delta_p(A) > 0``.

    ``g(mu) = Delta(A; mu)`` is a pointwise minimum of affine functions of
    ``mu``, hence concave; with ``g(0) > 0`` it changes sign at most once on
    ``[0, 1]`` and bisection finds the root ``mu*``. Then
    ``p_max = 2 / (1 - mu*)`` and ``p_min`` is its conjugate.
    """
    lam = lambda_of(A)
    if not lam > 0:
        raise PreconditionError(f"A is not accretive: lambda(A) = {lam:.6g}")
    cells = _cells(A)

    def g(mu):
        return min(_delta_single(c, mu) for c in cells)

    scale = 1.0 + Lambda_of(A)
    if g(1.0) >= -1e-12 * scale:
        mu_star = 1.0
    else:
        lo, hi = 0.0, 1.0
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if g(mid) > 0:
                lo = mid
            else:
                hi = mid
        mu_star = 0.5 * (lo + hi)
    if mu_star >= 1.0 - 1e-12:
        return 1.0, math.inf
    p_max = 2.0 / (1.0 - mu_star)
    return p_max / (p_max - 1.0), p_max


def _rotated(A, eps):
    if isinstance(A, MatrixField):
        return MatrixField(np.exp(1j * eps) * A.unique())
    return np.exp(1j * eps) * as_matrix(A)


def rotation_angle(A, p, tol=1e-6):
    """Largest ``theta`` in ``[0, pi/2]`` with ``Delta_p(e^{+-i theta} A) > 0``.

    Testing only the exponent ``p`` suffices for every ``r`` with
    ``|1 - 2/r| <= |1 - 2/p|``: the defining form is non-increasing in mu.
    """
    d0 = delta_p(A, p)
    if not d0 > 0:
        raise PreconditionError(f"A is not p-elliptic: Delta_p(A) = {d0:.6g}")

    def h(eps):
        return min(delta_p(_rotated(A, eps), p), delta_p(_rotated(A, -eps), p))

    lo, hi = 0.0, math.pi / 2
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if h(mid) > 0:
            lo = mid
        else:
            hi = mid
    return lo


def sector_angles(A):
    """``(arctan(Lambda/lambda), arctan(lambda/Lambda))``."""
    lam, Lam = lambda_of(A), Lambda_of(A)
    if not lam > 0:
        raise PreconditionError(f"A is not accretive: lambda(A) = {lam:.6g}")
    return math.atan(Lam / lam), math.atan(lam / Lam)


def sector_angle(A) -> float:
    """Half-angle ``arctan(Lambda/lambda)`` of a sector containing the numerical range."""
    return sector_angles(A)[0]


@dataclass(frozen=True)
class EllipticityReport:
    lambda_: float
    Lambda: float
    delta_p: float
    mu: float
    omega0: float
    omega0_literal: float
    p_min: float
    p_max: float
    theta: float
    p: float
    notes: tuple = field(default=())

    def as_dict(self):
        return {
            "p": self.p,
            "lambda": self.lambda_,
            "Lambda": self.Lambda,
            "delta_p": self.delta_p,
            "mu": self.mu,
            "omega0": self.omega0,
            "omega0_literal": self.omega0_literal,
            "p_min": self.p_min,
            "p_max": self.p_max,
            "theta": self.theta,
        }


def ellipticity_report(A, p) -> EllipticityReport:
    """All constants of ``A`` at exponent ``p``; undefined entries are NaN."""
    lam, Lam = lambda_of(A), Lambda_of(A)
    dp = delta_p(A, p)
    notes = []
    if lam > 0:
        omega0, omega0_lit = sector_angles(A)
        p_min, p_max = p_range(A)
        notes.append("omega0 uses arctan(Lambda/lambda); omega0_literal is arctan(lambda/Lambda)")
    else:
        omega0 = omega0_lit = p_min = p_max = math.nan
        notes.append("not accretive")
    theta = rotation_angle(A, p) if dp > 0 else math.nan
    return EllipticityReport(lam, Lam, dp, mu_of(p), omega0, omega0_lit,
                             p_min, p_max, theta, float(p), tuple(notes))


# ---------------------------------------------------------------------------
# I_p and identification maps
# ---------------------------------------------------------------------------

def apply_Ip(xi, p):
    """``xi + (1 - 2/p) conj(xi)``."""
    if not p > 1:
        raise ParameterError("p must exceed 1")
    xi = np.asarray(xi, dtype=complex)
    return xi + (1.0 - 2.0 / p) * np.conj(xi)


def identify_V(z):
    """``x + iy -> (x, y)`` for a complex vector."""
    z = np.asarray(z, dtype=complex)
    return np.concatenate([z.real, z.imag], axis=-1)


def identify_V_inv(x):
    x = np.asarray(x, dtype=float)
    d = x.shape[-1] // 2
    return x[..., :d] + 1j * x[..., d:]


def identify_W(w1, w2):
    """``(w1, w2) -> (Re w1, Im w1, Re w2, Im w2)``."""
    return np.concatenate([identify_V(w1), identify_V(w2)], axis=-1)


def identify_W_inv(x):
    x = np.asarray(x, dtype=float)
    d = x.shape[-1] // 4
    return identify_V_inv(x[..., : 2 * d]), identify_V_inv(x[..., 2 * d:])


# ---------------------------------------------------------------------------
# JSON matrix format
# ---------------------------------------------------------------------------

def matrix_from_json(doc) -> np.ndarray:
    """Parse ``{"d": int, "entries": [[[re, im], ...], ...]}``."""
    try:
        d = int(doc["d"])
        rows = doc["entries"]
        A = np.array([[complex(e[0], e[1]) for e in row] for row in rows], dtype=complex)
    except (KeyError, TypeError, IndexError, ValueError) as exc:
        raise StructureError(f"malformed matrix document: {exc}") from exc
    if A.shape != (d, d):
        raise StructureError(f"matrix document declares d={d} but has shape {A.shape}")
    return as_matrix(A)


def matrix_to_json(A) -> dict:
    A = as_matrix(A)
    return {
        "d": A.shape[0],
        "entries": [[[float(z.real), float(z.imag)] for z in row] for row in A],
    }


def _cell_key(key):
    return tuple(int(k) for k in str(key).split(","))


def field_from_json(doc, cell_indices):
    """Field document ``{"cells": {"i,j": matrix}, "default": matrix}``.

    ``cell_indices`` lists the grid index tuple of each active cell in order.
    """
    if "cells" not in doc and "d" in doc:
        A = matrix_from_json(doc)
        return MatrixField.constant(A, len(cell_indices))
    cells = {_cell_key(k): matrix_from_json(v) for k, v in doc.get("cells", {}).items()}
    default = matrix_from_json(doc["default"]) if "default" in doc else None
    mats = []
    for idx in cell_indices:
        idx = tuple(int(i) for i in idx)
        if idx in cells:
            mats.append(cells[idx])
        elif default is not None:
            mats.append(default)
        else:
            raise StructureError(f"no matrix for cell {idx} and no default given")
    dims = {m.shape[0] for m in mats}
    if len(dims) > 1:
        raise StructureError(f"matrix field mixes dimensions {sorted(dims)}")
    return MatrixField(np.array(mats))


def load_matrix(path):
    """Load a constant-matrix JSON file."""
    with open(Path(path)) as fh:
        return matrix_from_json(json.load(fh))
