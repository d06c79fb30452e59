"""The indefinite pencil E'(u) = mu J'(u) and the cone geometry built on it.

With ``A = L L^T`` the pencil ``A u = mu B u`` becomes the symmetric problem
``S y = nu y``, ``S = L^{-1} B L^{-T}``, ``u = L^{-T} y`` and ``mu = 1/nu``.
Only ``nu > 0`` gives a finite positive ``mu``; ``nu = 0`` directions are the
"mu = infinity" zero modes of B and ``nu < 0`` is kept for diagnostics.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.optimize as sopt
import scipy.sparse.linalg as spla

from .errors import DimensionTooLarge, ResonanceError, SpectrumTooShort
from .functionals import FunctionalContext, State
from .model import ProblemSpec

DENSE_LIMIT = 2000
ZERO_MODE_RTOL = 1e-10
RESONANCE_TOL = 1e-9
ORACLE_MAX_DIM = 12


@dataclass(eq=False)
class EigenSeq:
    mus: np.ndarray
    vectors: np.ndarray          # (k, 2n), J(v_k) = 1
    neg_mus: np.ndarray
    n_zero_modes: int
    residuals: np.ndarray
    complete: bool               # every positive eigenvalue was computed
    positive_V_fails: bool = False

    def state(self, k: int) -> State:
        return State.from_flat(self.vectors[k])

    def __len__(self) -> int:
        return int(self.mus.size)

    def to_table(self, ctx: FunctionalContext) -> list[dict]:
        rows = []
        for k, (mu, v, res) in enumerate(zip(self.mus, self.vectors, self.residuals), start=1):
            rows.append({"n": k, "mu": float(mu), "E": ctx.energy(v), "J": ctx.coupling(v),
                         "residual": float(res)})
        return rows


def solve_pencil(ctx: FunctionalContext, k_max: int = 10, *, dense_limit: int = DENSE_LIMIT) -> EigenSeq:
    """Smallest ``k_max`` positive eigenvalues of ``A u = mu B u``."""
    dim = 2 * ctx.n
    if dim <= dense_limit:
        nus, vecs, complete = _dense_nus(ctx)
    else:
        nus, vecs, complete = _iterative_nus(ctx, k_max)
    scale = max(np.abs(nus).max(initial=0.0), np.finfo(float).tiny)
    tol = ZERO_MODE_RTOL * scale
    pos = np.flatnonzero(nus > tol)
    pos = pos[np.argsort(-nus[pos], kind="stable")]
    n_pos = pos.size
    pos = pos[:k_max]
    complete = complete and pos.size == n_pos
    mus = 1.0 / nus[pos]
    V = vecs[:, pos].T * np.sqrt(2.0 / nus[pos])[:, None]
    neg = nus[nus < -tol]
    neg_mus = np.sort(1.0 / neg)[::-1] if neg.size else np.zeros(0)
    n_zero = int(np.count_nonzero(np.abs(nus) <= tol)) if dim <= dense_limit else 0

    residuals = np.empty(mus.size)
    for k in range(mus.size):
        Av = ctx.A @ V[k]
        residuals[k] = np.linalg.norm(Av - mus[k] * (ctx.B @ V[k])) / np.linalg.norm(Av)
    return EigenSeq(mus, V, neg_mus, n_zero, residuals, complete, positive_V_fails=(n_pos == 0))


def _dense_nus(ctx: FunctionalContext):
    L = sla.block_diag(*(np.linalg.cholesky(b.toarray()) for b in ctx.blocks))
    B = ctx.B.toarray()
    T = sla.solve_triangular(L, B, lower=True)
    S = sla.solve_triangular(L, T.T, lower=True)
    S = 0.5 * (S + S.T)
    nus, Y = np.linalg.eigh(S)
    U = sla.solve_triangular(L.T, Y, lower=False)
    return nus, U, True


def _iterative_nus(ctx: FunctionalContext, k_max: int):
    # largest nu of B u = nu A u are the smallest positive mu
    k = min(k_max + 2, 2 * ctx.n - 2)
    nus, U = spla.eigsh(ctx.B.tocsc(), k=k, M=ctx.A.tocsc(), which="LA")
    return nus, U, False


def minmax_oracle(ctx: FunctionalContext, n: int, *, n_starts: int = 12, seed: int = 0) -> float:
    """Courant-Fischer value: min over n-dim subspaces U with J > 0 on U of max_U E/J.

    Independent of :func:`solve_pencil`: random J-positive subspaces are
    refined by quasi-Newton descent of the subspace objective.
    """
    dim = 2 * ctx.n
    if dim > ORACLE_MAX_DIM:
        raise DimensionTooLarge(f"oracle limited to {ORACLE_MAX_DIM} unknowns, got {dim}")
    if not 1 <= n <= dim:
        raise ValueError(f"subspace dimension {n} outside [1, {dim}]")
    A = ctx.A.toarray()
    B = ctx.B.toarray()
    rng = np.random.default_rng(seed)

    def objective(q):
        Q = q.reshape(dim, n)
        BQ = B @ Q
        AQ = A @ Q
        Bu = Q.T @ BQ
        try:
            Lb = np.linalg.cholesky(0.5 * (Bu + Bu.T))
        except np.linalg.LinAlgError:
            return np.inf, np.zeros_like(q)
        Au = Q.T @ AQ
        M = sla.solve_triangular(Lb, sla.solve_triangular(Lb, Au, lower=True).T, lower=True)
        vals, vecs = np.linalg.eigh(0.5 * (M + M.T))
        f = vals[-1]
        c = sla.solve_triangular(Lb.T, vecs[:, -1], lower=False)
        grad = 2.0 * np.outer(AQ @ c - f * (BQ @ c), c)
        return f, grad.ravel()

    best = np.inf
    starts = 0
    attempts = 0
    while starts < n_starts and attempts < 200 * n_starts:
        attempts += 1
        Q0 = _random_positive_subspace(A, B, n, rng)
        if Q0 is None:
            continue
        starts += 1
        out = sopt.minimize(objective, Q0.ravel(), jac=True, method="BFGS",
                            options={"gtol": 1e-11, "maxiter": 2000})
        best = min(best, float(out.fun))
        # restart once from the optimum with an orthonormalised basis
        Qn = np.linalg.qr(out.x.reshape(dim, n))[0]
        out = sopt.minimize(objective, Qn.ravel(), jac=True, method="BFGS",
                            options={"gtol": 1e-12, "maxiter": 2000})
        best = min(best, float(out.fun))
    if not np.isfinite(best):
        raise ValueError(f"no {n}-dimensional subspace with J > 0 was found")
    return best


def _random_positive_subspace(A, B, n, rng, tries: int = 50):
    """n random vectors, B-orthogonalised, each with positive J."""
    dim = A.shape[0]
    basis: list[np.ndarray] = []
    for _ in range(tries * n):
        v = rng.standard_normal(dim)
        for b in basis:
            v -= (b @ B @ v) / (b @ B @ b) * b
        if v @ B @ v > 1e-8 * (v @ A @ v):
            basis.append(v / np.sqrt(v @ A @ v))
            if len(basis) == n:
                return np.column_stack(basis)
    return None


@dataclass(eq=False)
class ConeGeometry:
    m: int
    mu_m: float | None
    mu_m1: float | None
    basis_minus: np.ndarray = field(repr=False)   # (m, 2n)
    e_vector: np.ndarray | None = field(repr=False, default=None)
    upper: np.ndarray | None = field(repr=False, default=None)  # eigenvectors m+1, m+2, ...


def locate_lambda(seq: EigenSeq, lam: float, *, resonance_tol: float = RESONANCE_TOL) -> ConeGeometry:
    """Index m with mu_m <= lam < mu_{m+1} and the bracketing data."""
    if lam < 0:
        raise ValueError("locate_lambda expects lam >= 0; apply sign_normalize first")
    mus = seq.mus
    m = int(np.count_nonzero(mus <= lam))
    if m == mus.size:
        if mus.size == 0:
            return ConeGeometry(0, None, None, np.zeros((0, seq.vectors.shape[1])), None, seq.vectors[:0])
        raise SpectrumTooShort(
            f"lambda={lam} exceeds the {mus.size} computed eigenvalues (max {mus[-1]:.6g}); increase k_max",
            lam=lam, mu_max=float(mus[-1]),
        )
    mu_next = float(mus[m])
    if abs(mu_next - lam) <= resonance_tol * max(1.0, abs(mu_next)):
        raise ResonanceError(f"lambda={lam} is resonant with mu_{m + 1}={mu_next}", lam=lam, m=m, mu=mu_next)
    return ConeGeometry(
        m=m,
        mu_m=float(mus[m - 1]) if m else None,
        mu_m1=mu_next,
        basis_minus=seq.vectors[:m].copy(),
        e_vector=seq.vectors[m].copy(),
        upper=seq.vectors[m:].copy(),
    )


def sign_normalize(problem: ProblemSpec) -> ProblemSpec:
    """Flip (lam, V1, V2, gamma) -> (-lam, -V1, -V2, -gamma) when lam < 0."""
    if problem.lam >= 0:
        return problem
    return ProblemSpec(problem.grid, problem.potentials.negated(), problem.nonlinearity, -problem.lam)


class Cone(enum.Enum):
    IN_CMINUS = "in_cminus"
    IN_CPLUS = "in_cplus"
    BOTH = "both"
    NEITHER = "neither"


def cone_test(geom: ConeGeometry, ctx: FunctionalContext, u) -> Cone:
    x = u.flat if isinstance(u, State) else np.asarray(u, dtype=float)
    E, J = ctx.energy(x), ctx.coupling(x)
    tol = 1e-10 * (1.0 + E)
    if geom.m == 0:
        in_minus = E <= tol
    else:
        in_minus = E <= geom.mu_m * J + tol
    in_plus = True if geom.mu_m1 is None else E >= geom.mu_m1 * J - tol
    if in_minus and in_plus:
        return Cone.BOTH
    if in_minus:
        return Cone.IN_CMINUS
    if in_plus:
        return Cone.IN_CPLUS
    return Cone.NEITHER
