"""JSON problem descriptions and CSV output."""

from __future__ import annotations

import csv
import io
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..ellipticity import MatrixField, as_matrix, field_from_json, matrix_from_json
from ..numerics import StructureError
from .domain import GridDomain
from .operator import DiscreteOperator, assemble


@dataclass
class Problem:
    domain: GridDomain
    A: MatrixField
    B: MatrixField
    V: np.ndarray
    W: np.ndarray
    phase: float
    f: np.ndarray  # on free cells
    g: np.ndarray

    def operators(self) -> tuple[DiscreteOperator, DiscreteOperator]:
        return (assemble(self.domain, self.A, self.V, self.phase),
                assemble(self.domain, self.B, self.W, self.phase))


def _mask(doc, dim):
    m = doc.get("mask")
    if m is None:
        raise StructureError("problem needs a 'mask'")
    if isinstance(m, dict):
        shape = tuple(int(s) for s in m["shape"])
        arr = np.ones(shape, dtype=bool)
        for cell in m.get("holes", []):
            arr[tuple(cell)] = False
    else:
        arr = np.asarray(m, dtype=bool)
    if arr.ndim != dim:
        raise StructureError(f"mask is {arr.ndim}-d but dim = {dim}")
    return arr


def _coef(doc, domain, base):
    if doc is None:
        return None
    if isinstance(doc, dict) and "file" in doc:
        path = Path(doc["file"])
        if not path.is_absolute() and base is not None:
            path = base / path
        with open(path) as fh:
            doc = json.load(fh)
    if isinstance(doc, (int, float)):
        return MatrixField.constant(as_matrix(float(doc)), len(domain.active_cells))
    if isinstance(doc, dict) and "cells" in doc:
        return field_from_json(doc, domain.active_cells)
    if isinstance(doc, dict) and "d" in doc:
        return MatrixField.constant(matrix_from_json(doc), len(domain.active_cells))
    return MatrixField.constant(as_matrix(np.asarray(doc, dtype=complex)), len(domain.active_cells))


def potential_from_json(doc, domain: GridDomain):
    """``{"kind": "constant"|"table"|"inverse_distance", ...}`` -> grid values."""
    if doc is None:
        return np.zeros(domain.shape)
    if isinstance(doc, (int, float)):
        return np.full(domain.shape, float(doc))
    kind = doc.get("kind", "constant")
    if kind == "constant":
        return np.full(domain.shape, float(doc.get("value", 0.0)))
    if kind == "table":
        vals = np.asarray(doc["values"], dtype=float)
        if vals.shape != domain.shape:
            raise StructureError(f"potential table has shape {vals.shape}, grid is {domain.shape}")
        return vals
    if kind == "inverse_distance":
        X = domain.coordinates()
        pt = np.atleast_1d(np.asarray(doc.get("point", [0.0] * domain.space_dim), dtype=float))
        r = np.sqrt(sum((x - c) ** 2 for x, c in zip(X, pt)))
        power = float(doc.get("power", 1.0))
        with np.errstate(divide="ignore"):
            return float(doc.get("scale", 1.0)) / r**power
    raise StructureError(f"unknown potential kind {kind!r}")


def data_from_json(doc, domain: GridDomain, default_modes=(1,)):
    """Initial data: sine products, constants, explicit values or seeded noise."""
    X = domain.coordinates()
    lengths = [(n - 1) * domain.h for n in domain.shape]
    if doc is None:
        doc = {"kind": "sine", "modes": list(default_modes)}
    kind = doc.get("kind", "sine")
    if kind == "sine":
        u = np.zeros(domain.shape, dtype=complex)
        coefs = doc.get("coefficients", [1.0] * len(doc.get("modes", [1])))
        for k, c in zip(doc.get("modes", [1]), coefs):
            c = complex(*c) if isinstance(c, (list, tuple)) else complex(c)
            term = np.ones(domain.shape)
            for x, ell in zip(X, lengths):
                term = term * np.sin(np.pi * k * x / ell)
            u += c * term
    elif kind == "constant":
        u = np.full(domain.shape, complex(doc.get("value", 1.0)))
    elif kind == "values":
        re = np.asarray(doc["re"], dtype=float)
        im = np.asarray(doc.get("im", np.zeros_like(re)), dtype=float)
        u = re + 1j * im
    elif kind == "random":
        rng = np.random.default_rng(int(doc.get("seed", 0)))
        u = rng.normal(size=domain.shape) + 1j * rng.normal(size=domain.shape)
    else:
        raise StructureError(f"unknown data kind {kind!r}")
    return domain.restrict(u * float(doc.get("scale", 1.0)))


def load_problem(source) -> Problem:
    """Read a problem from a path or an already parsed dict."""
    base = None
    if isinstance(source, (str, Path)):
        path = Path(source)
        base = path.parent
        with open(path) as fh:
            doc = json.load(fh)
    else:
        doc = dict(source)
    dim = int(doc.get("dim", 1))
    if dim not in (1, 2):
        raise StructureError(f"dim must be 1 or 2, got {dim}")
    mask = _mask(doc, dim)
    boundary = doc.get("boundary", {})
    gamma = [(tuple(face["cell"]), face["side"]) for face in doc.get("gamma", [])]
    domain = GridDomain(float(doc["h"]), mask, boundary, tuple(gamma))
    A = _coef(doc.get("A", 1.0 if dim == 1 else np.eye(dim).tolist()), domain, base)
    B = _coef(doc.get("B"), domain, base) if "B" in doc else A
    V = potential_from_json(doc.get("V"), domain)
    W = potential_from_json(doc["W"], domain) if "W" in doc else V
    f = data_from_json(doc.get("f"), domain)
    g = data_from_json(doc.get("g"), domain)
    return Problem(domain, A, B, V, W, float(doc.get("phase", 0.0)), f, g)


def fmt(x) -> str:
    """17 significant digits for reals, ``re+imj`` for complex."""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (complex, np.complexfloating)):
        x = complex(x)
        return f"{x.real:.17g}{x.imag:+.17g}j"
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


def to_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


def write_output(text, out=None):
    """Write to ``out`` (a path) or standard output for ``None``/``"-"``."""
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)
