"""Discrete energy, coupling and potential functionals with their gradients.

A state is a pair of free-node vectors.  Internally everything works on the
stacked vector ``x = [u1, u2]``; :class:`State` is the public wrapper.
Quadratic forms:

* ``A = diag(K + M b1, K + M b2)`` gives E(u) = x.A.x / 2 and the norm.
* ``B = [[M V1, M gamma], [M gamma, M V2]]`` gives J(u) = x.B.x / 2.

The nonlinear term is mass-lumped, P(u) = sum_i w_i W(x_i, u1_i, u2_i), so its
gradient ``p(u)_i = w_i grad W`` is exactly the derivative of P.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import NotPositiveDefinite
from .grid import Grid
from .model import Nonlinearity, PotentialSet, ProblemSpec


@dataclass(eq=False)
class State:
    u1: np.ndarray
    u2: np.ndarray

    def __post_init__(self):
        self.u1 = np.asarray(self.u1, dtype=float)
        self.u2 = np.asarray(self.u2, dtype=float)
        if self.u1.shape != self.u2.shape or self.u1.ndim != 1:
            raise ValueError("state components must be 1-d vectors of equal length")

    @property
    def flat(self) -> np.ndarray:
        return np.concatenate([self.u1, self.u2])

    @classmethod
    def from_flat(cls, x) -> "State":
        x = np.asarray(x, dtype=float)
        n = x.size // 2
        return cls(x[:n].copy(), x[n:].copy())

    @classmethod
    def zeros(cls, n: int) -> "State":
        return cls(np.zeros(n), np.zeros(n))

    def __add__(self, other: "State") -> "State":
        return State(self.u1 + other.u1, self.u2 + other.u2)

    def __sub__(self, other: "State") -> "State":
        return State(self.u1 - other.u1, self.u2 - other.u2)

    def __mul__(self, c: float) -> "State":
        return State(c * self.u1, c * self.u2)

    __rmul__ = __mul__

    def __neg__(self) -> "State":
        return State(-self.u1, -self.u2)


def _tridiag_banded(m: sp.spmatrix) -> np.ndarray:
    m = sp.dia_matrix(m)
    n = m.shape[0]
    ab = np.zeros((2, n))
    ab[1] = m.diagonal(0)
    ab[0, 1:] = m.diagonal(1)
    return ab


class FunctionalContext:
    """Assembled forms for one problem; immutable after construction."""

    def __init__(self, grid: Grid, potentials: PotentialSet, nl: Nonlinearity, stiffness=None):
        self.grid = grid
        self.potentials = potentials
        self.nl = nl
        self.n = grid.size
        w = grid.quad_weights
        K = grid.stiffness if stiffness is None else sp.csr_matrix(stiffness)
        self.K = K
        self.w = w
        self.blocks = (
            (K + sp.diags(w * potentials.b1)).tocsr(),
            (K + sp.diags(w * potentials.b2)).tocsr(),
        )
        self.A = sp.block_diag(self.blocks, format="csr")
        mV1, mV2, mg = (sp.diags(w * v) for v in (potentials.V1, potentials.V2, potentials.gamma))
        self.B = sp.bmat([[mV1, mg], [mg, mV2]], format="csr")
        self._chol = []
        for i, blk in enumerate(self.blocks):
            if abs(blk - blk.T).max() > 0 or (blk.nnz and _bandwidth(blk) > 1):
                raise NotPositiveDefinite("energy block is not symmetric tridiagonal", block=i)
            try:
                self._chol.append(sla.cholesky_banded(_tridiag_banded(blk)))
            except np.linalg.LinAlgError as exc:
                raise NotPositiveDefinite(
                    f"Cholesky of energy block {i + 1} failed; the potential floor is violated", block=i
                ) from exc

    @classmethod
    def from_problem(cls, problem: ProblemSpec, stiffness=None) -> "FunctionalContext":
        return cls(problem.grid, problem.potentials, problem.nonlinearity, stiffness=stiffness)

    # flat-vector kernels -------------------------------------------------

    def split(self, x):
        return x[: self.n], x[self.n:]

    def energy(self, x) -> float:
        return 0.5 * float(x @ (self.A @ x))

    def coupling(self, x) -> float:
        return 0.5 * float(x @ (self.B @ x))

    def potential(self, x) -> float:
        u1, u2 = self.split(x)
        return float(self.w @ self.nl.energy(u1, u2))

    def psi(self, x, lam: float) -> float:
        Ax = self.A @ x
        Bx = self.B @ x
        return 0.5 * float(x @ (Ax - lam * Bx)) - self.potential(x)

    def nonlinear_gradient(self, x) -> np.ndarray:
        u1, u2 = self.split(x)
        gt, gs = self.nl.gradient(u1, u2)
        return np.concatenate([self.w * gt, self.w * gs])

    def residual(self, x, lam: float) -> np.ndarray:
        return self.A @ x - lam * (self.B @ x) - self.nonlinear_gradient(x)

    def solve_A(self, r) -> np.ndarray:
        r1, r2 = self.split(np.asarray(r, dtype=float))
        return np.concatenate([
            sla.cho_solve_banded((self._chol[0], False), r1),
            sla.cho_solve_banded((self._chol[1], False), r2),
        ])

    def gradient(self, x, lam: float) -> np.ndarray:
        """Sobolev (A-Riesz) representative of the derivative of Psi."""
        return self.solve_A(self.residual(x, lam))

    def norm(self, x) -> float:
        return float(np.sqrt(max(x @ (self.A @ x), 0.0)))

    def inner(self, x, y) -> float:
        return float(x @ (self.A @ y))

    def dual_norm(self, r) -> float:
        """sqrt(r . A^{-1} r), the norm of a dual-space residual."""
        return float(np.sqrt(max(r @ self.solve_A(r), 0.0)))

    def component_norms(self, x) -> tuple[float, float]:
        u1, u2 = self.split(x)
        return (float(np.sqrt(max(u1 @ (self.blocks[0] @ u1), 0.0))),
                float(np.sqrt(max(u2 @ (self.blocks[1] @ u2), 0.0))))

    def nonlinear_hessian(self, x) -> sp.csr_matrix:
        u1, u2 = self.split(x)
        htt, hts, hss = self.nl.hessian(u1, u2)
        w = self.w
        dtt, dts, dss = (sp.diags(w * np.broadcast_to(h, (self.n,))) for h in (htt, hts, hss))
        return sp.bmat([[dtt, dts], [dts, dss]], format="csr")

    def jacobian(self, x, lam: float) -> sp.csc_matrix:
        return (self.A - lam * self.B - self.nonlinear_hessian(x)).tocsc()


def _bandwidth(m) -> int:
    coo = sp.coo_matrix(m)
    return int(np.abs(coo.row - coo.col).max()) if coo.nnz else 0


def _flat(ctx: FunctionalContext, u) -> np.ndarray:
    x = u.flat if isinstance(u, State) else np.asarray(u, dtype=float)
    if x.shape != (2 * ctx.n,):
        raise ValueError(f"state has {x.size} entries, expected {2 * ctx.n}")
    return x


def energy_E(ctx: FunctionalContext, u) -> float:
    return ctx.energy(_flat(ctx, u))


def functional_J(ctx: FunctionalContext, u) -> float:
    return ctx.coupling(_flat(ctx, u))


def functional_P(ctx: FunctionalContext, u) -> float:
    return ctx.potential(_flat(ctx, u))


def psi(ctx: FunctionalContext, u, lam: float) -> float:
    """Psi = E - lam J - P."""
    return ctx.psi(_flat(ctx, u), lam)


def dual_residual(ctx: FunctionalContext, u, lam: float) -> State:
    """Nodal residual ``A u - lam B u - p(u)``; zero exactly at discrete weak solutions."""
    return State.from_flat(ctx.residual(_flat(ctx, u), lam))


def sobolev_gradient(ctx: FunctionalContext, u, lam: float) -> State:
    return State.from_flat(ctx.gradient(_flat(ctx, u), lam))
