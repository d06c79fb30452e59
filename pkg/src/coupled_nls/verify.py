"""Independent checks of the discretisation and the solver output.

Nothing here reuses the assembled matrices of :class:`FunctionalContext`
where an independent route exists: the strong-form residual rebuilds the
stencil from node coordinates, and the brute-force oracle uses dense linear
algebra on tiny grids.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .errors import DimensionTooLarge
from .functionals import FunctionalContext, State
from .grid import GridMode, sphere_area

BRUTE_FORCE_MAX_DIM = 12


def _flat(u) -> np.ndarray:
    return u.flat if isinstance(u, State) else np.asarray(u, dtype=float)


# --- strong form -------------------------------------------------------------

def _laplacian_strong(ctx: FunctionalContext, v: np.ndarray) -> np.ndarray:
    """-Laplacian of a free-node vector (zero Dirichlet data), per unit volume."""
    grid = ctx.grid
    nodes = grid.nodes
    full = np.zeros(nodes.size)
    full[grid.free] = v
    if grid.spec.mode is GridMode.RADIAL:
        N = grid.spec.dimension
        S = sphere_area(N)
        out = np.zeros(nodes.size)
        for i in grid.free:
            flux = 0.0
            if i + 1 < nodes.size:
                rf = 0.5 * (nodes[i] + nodes[i + 1])
                flux += S * rf ** (N - 1) * (full[i] - full[i + 1]) / (nodes[i + 1] - nodes[i])
            if i > 0:
                rf = 0.5 * (nodes[i] + nodes[i - 1])
                flux += S * rf ** (N - 1) * (full[i] - full[i - 1]) / (nodes[i] - nodes[i - 1])
            r_lo = max(nodes[i] - 0.5 * (nodes[i] - nodes[i - 1]) if i > 0 else 0.0, 0.0)
            r_hi = nodes[i] + 0.5 * (nodes[i + 1] - nodes[i]) if i + 1 < nodes.size else nodes[i]
            vol = S / N * (r_hi**N - r_lo**N)
            out[i] = flux / vol
        return out[grid.free]
    h = nodes[1] - nodes[0]
    lap = (2 * full[1:-1] - full[:-2] - full[2:]) / h**2
    return lap[grid.free - 1]


def residual_check(ctx: FunctionalContext, u, lam: float) -> tuple[float, float]:
    """Quadrature-weighted L2 norms of the two strong-form equation residuals."""
    x = _flat(u)
    u1, u2 = x[: ctx.n], x[ctx.n:]
    pot = ctx.potentials
    gt, gs = ctx.nl.gradient(u1, u2)
    r1 = _laplacian_strong(ctx, u1) + (pot.b1 - lam * pot.V1) * u1 - gt - lam * pot.gamma * u2
    r2 = _laplacian_strong(ctx, u2) + (pot.b2 - lam * pot.V2) * u2 - gs - lam * pot.gamma * u1
    w = ctx.w
    return float(np.sqrt(w @ r1**2)), float(np.sqrt(w @ r2**2))


def stencil_consistency(ctx: FunctionalContext, count: int = 20, seed: int = 0, lam: float = 0.3) -> float:
    """Worst relative gap between the assembled residual and the strong form times weights."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(count):
        x = rng.standard_normal(2 * ctx.n)
        weak = ctx.residual(x, lam)
        u1, u2 = x[: ctx.n], x[ctx.n:]
        pot = ctx.potentials
        gt, gs = ctx.nl.gradient(u1, u2)
        r1 = _laplacian_strong(ctx, u1) + (pot.b1 - lam * pot.V1) * u1 - gt - lam * pot.gamma * u2
        r2 = _laplacian_strong(ctx, u2) + (pot.b2 - lam * pot.V2) * u2 - gs - lam * pot.gamma * u1
        strong = np.concatenate([ctx.w * r1, ctx.w * r2])
        worst = max(worst, float(np.abs(weak - strong).max() / np.abs(strong).max()))
    return worst


def smooth_state(ctx: FunctionalContext, rng, scale: float = 1.0) -> np.ndarray:
    """Random superposition of Gaussians in both components."""
    x = ctx.grid.x
    R = ctx.grid.spec.radius
    out = []
    for _ in range(2):
        f = np.zeros(x.size)
        for _ in range(3):
            c = rng.uniform(-R / 4, R / 4) if ctx.grid.spec.mode is GridMode.FULL_LINE else rng.uniform(0, R / 4)
            f += rng.uniform(-1, 1) * np.exp(-(((x - c) / rng.uniform(0.5, 2.0)) ** 2))
        out.append(scale * f)
    return np.concatenate(out)


def residual_ratio(ctx: FunctionalContext, u, lam: float) -> float:
    """Strong-form L2 norm divided by the dual residual norm."""
    x = _flat(u)
    r1, r2 = residual_check(ctx, x, lam)
    d = ctx.dual_norm(ctx.residual(x, lam))
    return math.hypot(r1, r2) / d if d > 0 else float("nan")


# --- derivative checks ---------------------------------------------------------

def _fd4(f, x, v, eps):
    return (f(x - 2 * eps * v) - 8 * f(x - eps * v) + 8 * f(x + eps * v) - f(x + 2 * eps * v)) / (12 * eps)


def fd_gradient_check(ctx: FunctionalContext, count: int = 1000, scale: float = 1.0, *, lam: float = 0.7,
                      seed: int = 0, eps: float = 1e-3) -> float:
    """Worst relative error of E, J, P, Psi derivatives against fourth-order differences."""
    rng = np.random.default_rng(seed)
    funcs = (
        (ctx.energy, lambda x, v: float(v @ (ctx.A @ x))),
        (ctx.coupling, lambda x, v: float(v @ (ctx.B @ x))),
        (ctx.potential, lambda x, v: float(v @ ctx.nonlinear_gradient(x))),
        (lambda x: ctx.psi(x, lam), lambda x, v: float(v @ ctx.residual(x, lam))),
    )
    worst = 0.0
    for k in range(count):
        x = smooth_state(ctx, rng, scale) if k % 2 else scale * rng.standard_normal(2 * ctx.n)
        v = rng.standard_normal(2 * ctx.n)
        v /= max(np.abs(v).max(), 1e-300)
        step = eps * (1.0 + np.abs(x).max())
        for f, df in funcs:
            an = df(x, v)
            fd = _fd4(f, x, v, step)
            denom = max(abs(an), 1e-12 * (1.0 + abs(f(x))))
            worst = max(worst, abs(fd - an) / denom)
    return worst


def monotonicity_suite(ctx: FunctionalContext, count: int = 1000, seed: int = 0) -> float:
    """min over random pairs of <E'(u) - E'(v), u - v> - sum_i (|u_i|_i - |v_i|_i)^2.

    States are drawn with A-norms spread log-normally around 1 so that the
    slack is compared against an absolute tolerance at a fixed scale.
    """
    rng = np.random.default_rng(seed)

    def draw():
        x = rng.standard_normal(2 * ctx.n) if rng.random() < 0.5 else smooth_state(ctx, rng)
        return x * (rng.lognormal(0.0, 1.0) / ctx.norm(x))

    worst = math.inf
    for k in range(count):
        u = draw()
        mode = k % 4
        if mode == 0:
            v = draw()
        elif mode == 1:
            v = rng.uniform(-3, 3) * u + 1e-3 * draw()
        elif mode == 2:
            v = np.zeros_like(u)
        else:
            v = np.concatenate([u[: ctx.n], np.zeros(ctx.n)]) + draw()
        lhs = float((ctx.A @ u - ctx.A @ v) @ (u - v))
        nu, nv = ctx.component_norms(u), ctx.component_norms(v)
        rhs = (nu[0] - nv[0]) ** 2 + (nu[1] - nv[1]) ** 2
        worst = min(worst, lhs - rhs)
    return worst


# --- brute force ---------------------------------------------------------------

@dataclass
class BruteForceResult:
    points: list[np.ndarray] = field(repr=False)
    levels: list[float]
    matched_index: int | None = None
    distance: float | None = None
    level_gap: float | None = None

    @property
    def matched(self) -> bool:
        return self.matched_index is not None

    def to_dict(self) -> dict:
        return {"n_critical_points": len(self.points), "levels": self.levels, "matched": self.matched,
                "matched_index": self.matched_index, "distance": self.distance, "level_gap": self.level_gap}


def _dense_newton(A, B, ctx, x, lam, tol=1e-13, max_steps=60):
    n = ctx.n
    for _ in range(max_steps):
        F = ctx.residual(x, lam)
        nF = np.linalg.norm(F)
        if nF <= tol * (1 + np.linalg.norm(A @ x)):
            return x
        htt, hts, hss = (np.broadcast_to(h, (n,)) for h in ctx.nl.hessian(x[:n], x[n:]))
        H = np.block([[np.diag(ctx.w * htt), np.diag(ctx.w * hts)],
                      [np.diag(ctx.w * hts), np.diag(ctx.w * hss)]])
        try:
            dx = np.linalg.solve(A - lam * B - H, -F)
        except np.linalg.LinAlgError:
            return None
        s = 1.0
        while s > 1e-6:
            if np.linalg.norm(ctx.residual(x + s * dx, lam)) < (1 - 1e-4 * s) * nF:
                break
            s *= 0.5
        else:
            return None
        x = x + s * dx
        if not np.all(np.isfinite(x)) or np.abs(x).max() > 1e8:
            return None
    return None


def enumerate_critical_points(ctx: FunctionalContext, lam: float, *, n_seeds: int = 4096, seed: int = 0,
                              amplitude: float | None = None, dedup_tol: float = 1e-6) -> list[np.ndarray]:
    """Dense multistart Newton from a scrambled Sobol lattice of seeds."""
    dim = 2 * ctx.n
    if dim > BRUTE_FORCE_MAX_DIM:
        raise DimensionTooLarge(f"brute force limited to {BRUTE_FORCE_MAX_DIM} unknowns, got {dim}")
    A, B = ctx.A.toarray(), ctx.B.toarray()
    if amplitude is None:
        ev = np.linalg.eigvalsh(A - lam * B)
        amplitude = 3.0 * math.sqrt(max(abs(ev).max(), 1.0) / ctx.w.min())
    lattice = 2 * qmc.Sobol(dim, scramble=True, seed=seed).random(n_seeds) - 1
    # cycle the lattice through amplitude shells so small and large states are both seeded
    shells = np.geomspace(amplitude / 100, amplitude, 8)
    seeds = lattice * shells[np.arange(n_seeds) % shells.size, None]
    found: list[np.ndarray] = []
    for s0 in seeds:
        x = _dense_newton(A, B, ctx, s0, lam)
        if x is None:
            continue
        if all(ctx.norm(x - y) > dedup_tol * (1 + ctx.norm(y)) for y in found):
            found.append(x)
    found.sort(key=lambda y: (ctx.psi(y, lam), ctx.norm(y)))
    return found


def brute_force_solution_check(small_ctx: FunctionalContext, lam: float, point=None, *, n_seeds: int = 4096,
                               seed: int = 0, tol: float = 1e-6) -> BruteForceResult:
    """Enumerate critical points and, if ``point`` is given, locate it among them."""
    pts = enumerate_critical_points(small_ctx, lam, n_seeds=n_seeds, seed=seed)
    res = BruteForceResult(pts, [small_ctx.psi(p, lam) for p in pts])
    if point is not None and pts:
        x = _flat(point)
        dists = [small_ctx.norm(x - p) for p in pts]
        k = int(np.argmin(dists))
        res.distance = float(dists[k])
        res.level_gap = float(abs(small_ctx.psi(x, lam) - res.levels[k]))
        if dists[k] <= tol * (1 + small_ctx.norm(pts[k])):
            res.matched_index = k
    return res


# --- report ----------------------------------------------------------------------

@dataclass
class VerificationReport:
    checks: dict

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks.values())

    def to_dict(self) -> dict:
        return {"passed": self.passed, "checks": self.checks}


def run_suites(ctx: FunctionalContext, lam: float = 0.0, *, point=None, count: int = 1000, seed: int = 0,
               hypotheses=None) -> VerificationReport:
    """All suites on one problem; ``point`` adds residual checks for a solver output."""
    checks: dict = {}
    worst = fd_gradient_check(ctx, count, lam=lam if lam else 0.7, seed=seed)
    checks["fd_gradient"] = {"value": worst, "tol": 1e-6, "passed": worst <= 1e-6}
    slack = monotonicity_suite(ctx, count, seed)
    checks["monotonicity"] = {"value": slack, "tol": -1e-10, "passed": slack >= -1e-10}
    gap = stencil_consistency(ctx, seed=seed)
    checks["stencil_consistency"] = {"value": gap, "tol": 1e-10, "passed": gap <= 1e-10}
    if hypotheses is not None:
        checks["hypotheses"] = {"value": hypotheses.to_dict(), "passed": hypotheses.passed}
    if point is not None:
        r1, r2 = residual_check(ctx, point, lam)
        checks["strong_residual"] = {"value": [r1, r2], "tol": 1e-6, "passed": max(r1, r2) <= 1e-6}
    return VerificationReport(checks)
