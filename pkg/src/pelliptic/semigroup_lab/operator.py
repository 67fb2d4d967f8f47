"""Assembly of the discrete operator ``e^{i phi}(-div A grad + V)``."""

from __future__ import annotations

import cmath
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from ..ellipticity import MatrixField, PreconditionError, as_matrix, sector_angle
from ..numerics import StructureError
from .domain import GridDomain


def _gradient_matrix(domain: GridDomain):
    """Forward differences ``(n_active * d, n_active)``; missing neighbours give 0."""
    d = domain.space_dim
    act = domain.active_index
    pos = -np.ones(domain.mask.size, dtype=np.int64)
    pos[act] = np.arange(act.size)
    grid_pos = pos.reshape(domain.shape)
    rows, cols, vals = [], [], []
    inv_h = 1.0 / domain.h
    fwd = np.zeros((act.size, d), dtype=bool)
    for a, cell in enumerate(np.argwhere(domain.mask)):
        for k in range(d):
            nb = cell.copy()
            nb[k] += 1
            if nb[k] >= domain.shape[k] or not domain.mask[tuple(nb)]:
                continue
            fwd[a, k] = True
            r = a * d + k
            rows += [r, r]
            cols += [grid_pos[tuple(nb)], a]
            vals += [inv_h, -inv_h]
    G = sp.csr_matrix((vals, (rows, cols)), shape=(act.size * d, act.size))
    return G, fwd, grid_pos


def _as_field(A, domain: GridDomain) -> MatrixField:
    n = domain.active_index.size
    if isinstance(A, MatrixField):
        if len(A) == domain.mask.size and n != domain.mask.size:
            A = MatrixField(A.matrices[domain.active_index])
        if len(A) != n:
            raise StructureError(f"matrix field has {len(A)} cells, grid has {n} active cells")
        F = A
    else:
        F = MatrixField.constant(as_matrix(A), n)
    if F.d != domain.space_dim:
        raise StructureError(f"coefficient dimension {F.d} does not match grid dimension {domain.space_dim}")
    return F


def _cell_averaged(F: MatrixField, fwd, domain: GridDomain, grid_pos):
    """Mean of A over a cell and its active forward neighbours."""
    mats = F.matrices
    out = mats.copy()
    cells = np.argwhere(domain.mask)
    for a, cell in enumerate(cells):
        acc = mats[a].copy()
        cnt = 1
        for k in np.flatnonzero(fwd[a]):
            nb = cell.copy()
            nb[k] += 1
            acc += mats[grid_pos[tuple(nb)]]
            cnt += 1
        out[a] = acc / cnt
    return out


def _potential_on_active(V, domain: GridDomain):
    if callable(V):
        V = V(*domain.coordinates())
    V = np.asarray(V, dtype=float)
    n = domain.active_index.size
    if V.ndim == 0:
        V = np.full(n, float(V))
    elif V.shape == domain.shape:
        V = V.ravel()[domain.active_index]
    elif V.shape != (n,):
        raise StructureError(f"potential of shape {V.shape} does not fit grid {domain.shape}")
    # values at pinned cells never enter the operator
    elim = domain.eliminated.ravel()[domain.active_index]
    V = np.where(elim, 0.0, V)
    if not np.all(np.isfinite(V)):
        raise PreconditionError("potential has non-finite values on free cells")
    bad = np.flatnonzero(V < 0)
    if bad.size:
        cells = [tuple(int(i) for i in np.unravel_index(domain.active_index[b], domain.shape)) for b in bad]
        raise PreconditionError(f"negative potential at cells {cells}")
    return V


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    """``L_h`` acting on vectors indexed by the free cells of ``domain``.

    ``<L u, v>_h = sum_c h^dim (<A_c G u, G v> + V |u v|)`` rotated by
    ``e^{i phase}``, where ``G`` is the forward-difference gradient and
    ``A_c`` the mean of the coefficient over the cells it couples.
    """

    domain: GridDomain
    A_field: MatrixField
    V: np.ndarray  # on active cells
    phase: float
    matrix: sp.csr_matrix
    G: sp.csr_matrix  # free vector -> (n_active * d) gradient components
    Ahat: sp.csr_matrix
    L0: sp.csr_matrix  # unrotated gradient part

    @property
    def n(self):
        return self.matrix.shape[0]

    @property
    def V_free(self):
        d = self.domain
        pos = np.searchsorted(d.active_index, d.free_index)
        return self.V[pos]

    @property
    def rotation(self) -> complex:
        return cmath.exp(1j * self.phase)

    @property
    def potential_part(self) -> sp.csr_matrix:
        return sp.diags(self.V_free.astype(complex)).tocsr()

    def gradient(self, u) -> np.ndarray:
        """Cell gradients, shape ``(n_active, d)`` (or ``(n_active, d, k)`` for batches)."""
        g = self.G @ np.asarray(u, dtype=complex)
        d = self.domain.space_dim
        return g.reshape((-1, d) + g.shape[1:])

    def energy_density(self, u):
        """``|grad u|^2 + V|u|^2`` per active cell."""
        g = self.gradient(u)
        grad2 = np.sum(np.abs(g) ** 2, axis=1)
        full = np.zeros((self.V.size,) + np.shape(u)[1:], dtype=complex)
        pos = np.searchsorted(self.domain.active_index, self.domain.free_index)
        full[pos] = u
        return grad2 + self.V.reshape((-1,) + (1,) * (full.ndim - 1)) * np.abs(full) ** 2

    @property
    def omega0(self) -> float:
        """Half-angle of the sector holding the numerical range before rotation."""
        return sector_angle(self.A_field)

    def with_phase(self, phase) -> "DiscreteOperator":
        M = (cmath.exp(1j * phase) * (self.L0 + self.potential_part)).tocsr()
        return replace(self, phase=float(phase), matrix=M)

    def with_potential(self, V) -> "DiscreteOperator":
        Vact = _potential_on_active(V, self.domain)
        op = replace(self, V=Vact)
        M = (op.rotation * (op.L0 + op.potential_part)).tocsr()
        return replace(op, matrix=M)

    def __matmul__(self, u):
        return self.matrix @ u


def assemble(domain: GridDomain, A_field, V=0.0, phase=0.0) -> DiscreteOperator:
    """Assemble ``L_h`` for coefficient ``A_field`` and potential ``V >= 0``.

    ``A_field`` is a constant matrix (scalars allowed in 1-d) or a
    :class:`MatrixField` over the active cells.
    """
    F = _as_field(A_field, domain)
    Vact = _potential_on_active(V, domain)
    Gfull, fwd, grid_pos = _gradient_matrix(domain)
    act_pos_of_free = np.searchsorted(domain.active_index, domain.free_index)
    G = Gfull[:, act_pos_of_free].tocsr()
    Ac = _cell_averaged(F, fwd, domain, grid_pos)
    Ahat = sp.block_diag(list(Ac), format="csr")
    L0 = (G.T @ Ahat @ G).tocsr()
    L0.sum_duplicates()
    L0.eliminate_zeros()
    rot = cmath.exp(1j * phase)
    M = (rot * (L0 + sp.diags(Vact[act_pos_of_free].astype(complex)))).tocsr()
    return DiscreteOperator(domain, F, Vact, float(phase), M, G, Ahat, L0)


def lp_norm(f, p, h, dim=1) -> float:
    """Discrete ``(sum |f_i|^p h^dim)^(1/p)``; ``p = inf`` gives the max norm."""
    f = np.abs(np.asarray(f))
    if p == np.inf:
        return float(f.max()) if f.size else 0.0
    if not p >= 1:
        raise ValueError(f"p must lie in [1, inf], got {p}")
    w = h**dim
    return float((np.sum(f**p) * w) ** (1.0 / p))
