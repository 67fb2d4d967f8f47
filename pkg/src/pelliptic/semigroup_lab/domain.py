"""Masked grids with Dirichlet/Neumann face labels."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from ..numerics import StructureError

DIRICHLET = "dirichlet"
NEUMANN = "neumann"
_LABELS = (DIRICHLET, NEUMANN)

# side name -> (axis, direction); the outer sides of the array
SIDES = {"left": (0, -1), "right": (0, 1), "bottom": (1, -1), "top": (1, 1)}


def _side_name(axis, direction):
    for name, key in SIDES.items():
        if key == (axis, direction):
            return name
    raise StructureError(f"no side for axis {axis}, direction {direction}")


@dataclass(frozen=True, eq=False)
class GridDomain:
    """Cells are grid nodes ``x = index * h``; ``mask`` marks active cells.

    A boundary face of an active cell is a side whose neighbour is either
    outside the array or inactive. Faces on the outer sides take the label
    of that side, faces next to holes take ``boundary["interior"]``. Entries
    of ``gamma`` (``((i, j), side)`` pairs) force individual faces to
    Dirichlet. An active cell touching a Dirichlet face is *eliminated*:
    its value is pinned to zero. The remaining active cells carry unknowns.
    """

    h: float
    mask: np.ndarray
    boundary: dict = field(default_factory=dict)
    gamma: tuple = ()

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        if mask.ndim not in (1, 2):
            raise StructureError(f"only 1-d and 2-d grids are supported, got {mask.ndim}-d")
        if not mask.any():
            raise StructureError("mask has no active cells")
        if not self.h > 0:
            raise StructureError(f"mesh width must be positive, got {self.h}")
        labels = {}
        for key, val in dict(self.boundary).items():
            key, val = str(key).lower(), str(val).lower()
            if val not in _LABELS:
                raise StructureError(f"unknown boundary label {val!r} for {key!r}")
            labels[key] = val
        needed = [n for n, (ax, _) in SIDES.items() if ax < mask.ndim]
        missing = [n for n in needed if n not in labels]
        if missing:
            raise StructureError(f"unlabelled boundary sides: {missing}")
        labels.setdefault("interior", NEUMANN)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "boundary", labels)
        gamma = tuple((tuple(int(i) for i in np.atleast_1d(c)), str(s).lower()) for c, s in self.gamma)
        object.__setattr__(self, "gamma", gamma)
        n_comp = ndimage.label(mask)[1]
        if n_comp > 1:
            warnings.warn(f"mask has {n_comp} connected components", stacklevel=2)
        object.__setattr__(self, "_eliminated", self._compute_eliminated())

    # -- basic geometry -----------------------------------------------------
    @property
    def space_dim(self) -> int:
        return self.mask.ndim

    @property
    def shape(self):
        return self.mask.shape

    @property
    def cell_volume(self) -> float:
        return self.h**self.space_dim

    @property
    def active_index(self) -> np.ndarray:
        """Flat (C-order) indices of active cells."""
        return np.flatnonzero(self.mask.ravel())

    @property
    def active_cells(self):
        return [tuple(int(i) for i in idx) for idx in np.argwhere(self.mask)]

    @property
    def eliminated(self) -> np.ndarray:
        """Boolean grid of active cells pinned to zero."""
        return self._eliminated

    @property
    def free(self) -> np.ndarray:
        return self.mask & ~self._eliminated

    @property
    def free_index(self) -> np.ndarray:
        return np.flatnonzero(self.free.ravel())

    @property
    def n_free(self) -> int:
        return int(self.free.sum())

    def coordinates(self):
        """Node coordinates, one array per axis, of grid shape."""
        axes = [np.arange(n) * self.h for n in self.shape]
        return np.meshgrid(*axes, indexing="ij")

    @property
    def case(self) -> str:
        """``"dirichlet"``, ``"neumann"`` or ``"mixed"`` by the labels in use."""
        used = {lab for _, lab in self.boundary_faces()}
        if used == {DIRICHLET}:
            return DIRICHLET
        if used <= {NEUMANN}:
            return NEUMANN
        return "mixed"

    # -- faces ----------------------------------------------------------------
    def _inside(self, idx):
        return all(0 <= i < n for i, n in zip(idx, self.shape))

    def boundary_faces(self):
        """All ``((cell, side), label)`` pairs for boundary faces of active cells."""
        forced = set(self.gamma)
        out = []
        for cell in self.active_cells:
            for ax in range(self.space_dim):
                for direction in (-1, 1):
                    nb = list(cell)
                    nb[ax] += direction
                    nb = tuple(nb)
                    side = _side_name(ax, direction)
                    if not self._inside(nb):
                        label = self.boundary[side]
                    elif not self.mask[nb]:
                        label = self.boundary["interior"]
                    else:
                        continue
                    if (cell, side) in forced:
                        label = DIRICHLET
                    out.append(((cell, side), label))
        return out

    @property
    def gamma_set(self):
        """The Dirichlet-labelled boundary faces."""
        return [face for face, lab in self.boundary_faces() if lab == DIRICHLET]

    def _compute_eliminated(self):
        elim = np.zeros(self.shape, dtype=bool)
        known = {face for face, _ in self.boundary_faces()}
        for face in self.gamma:
            if face not in known:
                raise StructureError(f"gamma face {face} is not a boundary face of an active cell")
        for (cell, _), lab in self.boundary_faces():
            if lab == DIRICHLET:
                elim[cell] = True
        if not (self.mask & ~elim).any():
            raise StructureError("every active cell is pinned by a Dirichlet face")
        return elim

    # -- fields -----------------------------------------------------------------
    def restrict(self, values) -> np.ndarray:
        """Grid-shaped (or callable of coordinates) data -> vector on free cells."""
        if callable(values):
            values = values(*self.coordinates())
        values = np.asarray(values, dtype=complex)
        if values.ndim == 0:
            values = np.full(self.shape, complex(values))
        if values.shape == self.shape:
            return values.ravel()[self.free_index].copy()
        if values.shape == (self.n_free,):
            return values.copy()
        raise StructureError(f"field of shape {values.shape} does not fit grid {self.shape}")

    def extend(self, u, fill=0.0) -> np.ndarray:
        """Vector on free cells -> grid array (eliminated cells are 0, inactive ``fill``)."""
        u = np.asarray(u)
        out = np.full(self.mask.size, fill, dtype=complex)
        out[self.active_index] = 0.0
        out[self.free_index] = u
        return out.reshape(self.shape)

    @classmethod
    def interval(cls, n_cells, left=DIRICHLET, right=DIRICHLET, length=1.0):
        """``n_cells`` nodes on ``[0, length]`` with ``h = length/(n_cells-1)``."""
        return cls(length / (n_cells - 1), np.ones(n_cells, bool), {"left": left, "right": right})

    @classmethod
    def rectangle(cls, nx, ny, h, labels=None, mask=None, gamma=()):
        labels = labels or {s: DIRICHLET for s in SIDES}
        m = np.ones((nx, ny), bool) if mask is None else np.asarray(mask, bool)
        return cls(h, m, labels, tuple(gamma))
