"""Second-order summation-by-parts operators on the collocated box grid.

In one dimension with ``N + 1`` nodes and spacing ``h``::

    W  = h diag(1/2, 1, ..., 1, 1/2)
    Q  = tridiag(-1/2, 0, 1/2) with Q[0, 0] = -1/2, Q[N, N] = 1/2
    D1 = W^{-1} Q

so that ``W D1 + D1^T W = Q + Q^T = diag(-1, 0, ..., 0, 1)`` holds exactly.
Three-dimensional operators are tensor products; fields are stored as
``(3, n1, n2, n3)`` arrays (component first) and scalars as ``(n1, n2, n3)``.
"""

from fractions import Fraction
from functools import cached_property
from itertools import product

import numpy as np
import scipy.sparse as sp


def sbp_q_matrix(n_nodes):
    """Integer-scaled ``2 Q`` (entries in {-1, 0, 1}) as a dense int array."""
    q2 = np.zeros((n_nodes, n_nodes), dtype=np.int64)
    for i in range(1, n_nodes - 1):
        q2[i, i - 1], q2[i, i + 1] = -1, 1
    q2[0, 0], q2[0, 1] = -1, 1
    q2[-1, -2], q2[-1, -1] = -1, 1
    return q2


def sbp_weights(n_nodes, h):
    w = np.full(n_nodes, float(h))
    w[0] = w[-1] = 0.5 * h
    return w


def check_sbp_exact(n_nodes):
    """Verify ``W D1 + D1^T W = B`` in rational arithmetic (with ``h = 1``)."""
    q2 = sbp_q_matrix(n_nodes)
    w = [Fraction(1, 2)] + [Fraction(1)] * (n_nodes - 2) + [Fraction(1, 2)]
    for i in range(n_nodes):
        for j in range(n_nodes):
            d_ij = Fraction(int(q2[i, j]), 2) / w[i]
            d_ji = Fraction(int(q2[j, i]), 2) / w[j]
            lhs = w[i] * d_ij + d_ji * w[j]
            rhs = -1 if i == j == 0 else (1 if i == j == n_nodes - 1 else 0)
            if lhs != rhs:
                return False
    return True


def multi_indices(order):
    """All 3D multi-indices with ``|alpha| <= order``."""
    return [a for a in product(range(order + 1), repeat=3) if sum(a) <= order]


class SbpOperators:
    """SBP derivative, quadrature and boundary operators for a :class:`BoxDomain`."""

    def __init__(self, domain):
        self.domain = domain
        self.shape = domain.shape
        self.h = domain.spacing
        self.w1d = [sbp_weights(n, h) for n, h in zip(self.shape, self.h)]
        self.weights = np.einsum("i,j,k->ijk", *self.w1d)
        for n in self.shape:
            if not check_sbp_exact(n):  # pragma: no cover - construction guard
                raise AssertionError("SBP property violated")

    def D1_matrix(self, axis):
        """Dense 1D first-derivative matrix along ``axis``."""
        n = self.shape[axis]
        return (sbp_q_matrix(n) * 0.5) / self.w1d[axis][:, None]

    def diff(self, u, axis):
        """Apply ``D1`` along spatial ``axis`` (0, 1, 2) of ``u[..., n1, n2, n3]``."""
        ax = u.ndim - 3 + axis
        u = np.asarray(u)
        h = self.h[axis]
        out = np.empty_like(u, dtype=float)
        n = u.shape[ax]
        idx = lambda s: tuple(slice(None) if k != ax else s for k in range(u.ndim))
        out[idx(slice(1, n - 1))] = (u[idx(slice(2, n))] - u[idx(slice(0, n - 2))]) / (2.0 * h)
        out[idx(0)] = (u[idx(1)] - u[idx(0)]) / h
        out[idx(n - 1)] = (u[idx(n - 1)] - u[idx(n - 2)]) / h
        return out

    def diff_multi(self, u, alpha):
        for axis, count in enumerate(alpha):
            for _ in range(count):
                u = self.diff(u, axis)
        return u

    def grad(self, phi):
        return np.stack([self.diff(phi, a) for a in range(3)])

    def div(self, F):
        return self.diff(F[0], 0) + self.diff(F[1], 1) + self.diff(F[2], 2)

    def curl(self, F):
        d = self.diff
        return np.stack(
            [
                d(F[2], 1) - d(F[1], 2),
                d(F[0], 2) - d(F[2], 0),
                d(F[1], 0) - d(F[0], 1),
            ]
        )

    # quadrature

    def integrate(self, f):
        """Volume quadrature of a scalar (or componentwise summed) grid array."""
        f = np.asarray(f)
        if f.ndim > 3:
            f = f.reshape(-1, *self.shape).sum(axis=0)
        return float(np.sum(self.weights * f))

    def inner(self, u, v):
        return self.integrate(np.sum(u * v, axis=0) if u.ndim == 4 else u * v)

    def norm2(self, u):
        return self.inner(u, u)

    def norm(self, u):
        return float(np.sqrt(self.norm2(u)))

    def face_weights(self, face):
        a, b = sorted(face.tangent_axes)
        return np.outer(self.w1d[a], self.w1d[b])

    def face_values(self, u, face):
        """Values of ``u[..., n1, n2, n3]`` on ``face`` (2D trailing shape)."""
        return u[face.index(self.shape)]

    def boundary_integral(self, fn):
        """Sum over faces of the face quadrature of ``fn(face) -> 2D array``."""
        return float(sum(np.sum(self.face_weights(f) * fn(f)) for f in self.domain.faces))

    def normal_weight(self, face):
        """Quadrature weight along the normal axis at the face (``h / 2``)."""
        return self.w1d[face.axis][0]

    def sobolev_norm2(self, u, order):
        """Discrete ``H^order`` squared norm: sum of ``||D^alpha u||_W^2``."""
        if order == 0:
            return self.norm2(u)
        return float(sum(self.norm2(self.diff_multi(u, a)) for a in multi_indices(order)))

    # sparse assembly, node ordering is C order of (n1, n2, n3)

    @cached_property
    def n_nodes(self):
        return int(np.prod(self.shape))

    def sparse_diff(self, axis):
        mats = [sp.identity(n, format="csr") for n in self.shape]
        mats[axis] = sp.csr_matrix(self.D1_matrix(axis))
        return sp.kron(sp.kron(mats[0], mats[1]), mats[2], format="csr")

    @cached_property
    def sparse_D(self):
        return [self.sparse_diff(a) for a in range(3)]

    @cached_property
    def sparse_curl(self):
        """Sparse curl acting on component-major flattened fields (3N x 3N)."""
        D = self.sparse_D
        Z = None
        return sp.bmat(
            [[Z, -D[2], D[1]], [D[2], Z, -D[0]], [-D[1], D[0], Z]], format="csr"
        )

    @cached_property
    def sparse_div(self):
        return sp.hstack(self.sparse_D, format="csr")

    @cached_property
    def sparse_grad(self):
        return sp.vstack(self.sparse_D, format="csr")

    # artificial dissipation

    def undivided_second(self, axis):
        """Undivided second differences ``u[i-1] - 2 u[i] + u[i+1]`` on interior rows."""
        n = self.shape[axis]
        return sp.diags([1.0, -2.0, 1.0], [0, 1, 2], shape=(n - 2, n), format="csr")

    @cached_property
    def sparse_dissipation(self):
        """Scalar ``A = -sum_a h_a^{-1} W_a^{-1} Dd_a^T Dd_a`` (kron over axes).

        ``A`` is symmetric negative semidefinite in the ``W`` inner product and
        consistent of order ``h^2`` (it approximates ``-h^2 d^4/dx^4``), while
        grid-scale oscillations are damped at a rate ``~ 16 / h^2``.
        """
        total = None
        for axis in range(3):
            Dd = self.undivided_second(axis)
            core = sp.diags(1.0 / self.w1d[axis]) @ (Dd.T @ Dd) / self.h[axis]
            mats = [sp.identity(n, format="csr") for n in self.shape]
            mats[axis] = core.tocsr()
            term = sp.kron(sp.kron(mats[0], mats[1]), mats[2], format="csr")
            total = term if total is None else total + term
        return -total
