"""Axis-aligned box domains, boundary frames and the cross-product algebra.

The box is discretized with cell-vertex collocated nodes, ``N_i + 1`` per
axis. Every box face carries a constant orthonormal frame ``(tau1, tau2, nu)``;
nodes on edges and corners belong to every incident face and are integrated
face by face.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConfigError, NonUnitNormal, NotStarShaped

# J_j w = e_j x w, so that curl u = sum_j J_j d_j u.
J_BASIS = np.array(
    [
        [[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]],
        [[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [-1.0, 0.0, 0.0]],
        [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
    ]
)


def J_of(xi):
    """Cross-product matrix ``sum_j xi_j J_j``; ``J_of(xi) @ w == xi x w``.

    Accepts a single vector or a stack of vectors with trailing dimension 3.
    """
    xi = np.asarray(xi, dtype=float)
    return np.einsum("...j,jab->...ab", xi, J_BASIS)


def _check_unit(nu):
    nu = np.asarray(nu, dtype=float)
    err = np.abs(np.linalg.norm(nu, axis=-1) - 1.0)
    if np.any(err > 1e-10):
        raise NonUnitNormal(f"normal is not a unit vector (| |nu| - 1 | = {err.max():.3e})")
    return nu


def R_of(nu):
    """Inverse of ``J(nu)`` on the tangent plane, vanishing on ``span{nu}``.

    Since ``J(nu)^2 = nu nu^T - I``, the inverse on the tangent plane is
    ``-J(nu)``, which also annihilates ``nu``.
    """
    nu = _check_unit(nu)
    return -J_of(nu)


def tangential_trace(u, nu):
    """Tangential trace ``u x nu``."""
    _check_unit(nu)
    return np.cross(u, nu)


def tangential_component(u, nu):
    """Tangential component ``nu x (u x nu) = u - (u . nu) nu``."""
    nu = _check_unit(nu)
    return np.cross(nu, np.cross(u, nu))


@dataclass(frozen=True)
class Face:
    """One face of the box together with its constant frame."""

    axis: int
    side: int  # -1 for the lower face, +1 for the upper face
    normal: np.ndarray
    tau1: np.ndarray
    tau2: np.ndarray
    tangent_axes: tuple

    @property
    def name(self):
        return f"{'-' if self.side < 0 else '+'}{'xyz'[self.axis]}"

    def index(self, shape):
        """Index tuple selecting the face nodes from a ``(..., n1, n2, n3)`` array."""
        sl = [slice(None)] * 3
        sl[self.axis] = 0 if self.side < 0 else shape[self.axis] - 1
        return (Ellipsis, *sl)


@dataclass(frozen=True)
class BoxDomain:
    lower: tuple = (0.0, 0.0, 0.0)
    extents: tuple = (1.0, 1.0, 1.0)
    cells: tuple = (16, 16, 16)
    x0: tuple = None

    def __post_init__(self):
        lower = tuple(float(v) for v in self.lower)
        extents = tuple(float(v) for v in self.extents)
        cells = tuple(int(v) for v in self.cells)
        if len(lower) != 3 or len(extents) != 3 or len(cells) != 3:
            raise ConfigError("domain vectors must have three entries")
        if min(extents) <= 0:
            raise ConfigError("domain extents must be positive")
        if min(cells) < 4:
            raise ConfigError("at least 4 cells per axis are required")
        if self.x0 is None:
            x0 = tuple(lo + 0.5 * ext for lo, ext in zip(lower, extents))
        else:
            x0 = tuple(float(v) for v in self.x0)
        for lo, ext, c in zip(lower, extents, x0):
            if not lo < c < lo + ext:
                raise ConfigError(f"star center {x0} is not strictly inside the box")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "extents", extents)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "x0", x0)

    @property
    def spacing(self):
        return tuple(e / n for e, n in zip(self.extents, self.cells))

    @property
    def h_min(self):
        return min(self.spacing)

    @property
    def shape(self):
        return tuple(n + 1 for n in self.cells)

    @property
    def volume(self):
        return float(np.prod(self.extents))

    def translated(self, shift):
        shift = np.asarray(shift, dtype=float)
        return BoxDomain(
            tuple(np.add(self.lower, shift)), self.extents, self.cells, tuple(np.add(self.x0, shift))
        )

    def with_cells(self, cells):
        if np.isscalar(cells):
            cells = (cells,) * 3
        return BoxDomain(self.lower, self.extents, tuple(cells), self.x0)

    def axis_coords(self, axis):
        return self.lower[axis] + self.spacing[axis] * np.arange(self.shape[axis])

    @cached_property
    def _points(self):
        grids = np.meshgrid(*(self.axis_coords(a) for a in range(3)), indexing="ij")
        pts = np.stack(grids, axis=-1)
        pts.setflags(write=False)
        return pts

    def points(self):
        """Node coordinates, shape ``(n1, n2, n3, 3)``."""
        return self._points

    def contains(self, x, tol=1e-12):
        x = np.asarray(x, dtype=float)
        lo = np.asarray(self.lower) - tol
        hi = np.asarray(self.lower) + np.asarray(self.extents) + tol
        return bool(np.all((x >= lo) & (x <= hi)))

    @cached_property
    def faces(self):
        out = []
        for axis in range(3):
            b, c = (axis + 1) % 3, (axis + 2) % 3
            for side in (-1, 1):
                nu = np.zeros(3)
                nu[axis] = side
                t1, t2 = np.eye(3)[b], np.eye(3)[c]
                if side < 0:
                    t1, t2 = t2, t1
                out.append(Face(axis, side, nu, t1, t2, (b, c) if side > 0 else (c, b)))
        return tuple(out)

    def boundary_mask(self):
        mask = np.zeros(self.shape, dtype=bool)
        for face in self.faces:
            mask[face.index(self.shape)] = True
        return mask

    def interior_mask(self):
        return ~self.boundary_mask()

    def collar_depth(self):
        """Graph distance of every node to the nearest boundary face."""
        idx = np.meshgrid(*(np.arange(n) for n in self.shape), indexing="ij")
        depth = np.full(self.shape, np.iinfo(np.int64).max)
        for a in range(3):
            depth = np.minimum(depth, np.minimum(idx[a], self.shape[a] - 1 - idx[a]))
        return depth


def multiplier(domain, x):
    """Star-shape multiplier field ``m(x) = x - x0``."""
    return np.asarray(x, dtype=float) - np.asarray(domain.x0)


def check_star_shaped(domain):
    """Return ``eta_bar = min_Gamma nu . m`` over all boundary nodes."""
    pts = domain.points()
    eta_bar = np.inf
    for face in domain.faces:
        m = multiplier(domain, pts[face.index(domain.shape)[1:]])
        eta_bar = min(eta_bar, float(np.min(m @ face.normal)))
    if eta_bar <= 0:
        raise NotStarShaped(f"domain is not strictly star-shaped about {domain.x0}: eta_bar = {eta_bar}")
    return eta_bar


def frame_decomposition_error(domain, u):
    """Max error of ``u = (u.nu) nu + sum_i (u.tau_i) tau_i`` over the faces.

    ``u`` is a field of shape ``(3, n1, n2, n3)``.
    """
    err = 0.0
    for face in domain.faces:
        w = np.moveaxis(u[face.index(domain.shape)], 0, -1)
        rebuilt = sum(np.multiply.outer(w @ v, v) for v in (face.normal, face.tau1, face.tau2))
        err = max(err, float(np.max(np.abs(rebuilt - w))))
    return err
