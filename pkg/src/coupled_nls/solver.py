"""Min-max search for nontrivial critical points of Psi = E - lam J - P.

Pipeline for one lambda (see :func:`find_critical_point`):

1. flip signs so that lam >= 0 and solve the pencil;
2. bracket lam between consecutive eigenvalues (index ``m``);
3. pick the small sphere radius ``r_plus`` (Psi >= alpha > 0 on the upper
   cone) and the large radius ``r_minus`` (Psi <= 0 on the far boundary);
4. global stage: a deformed mountain-pass path (m = 0) or a deformed mesh of
   the linking set Q (m >= 1);
5. local stage: local min-max over half-spaces ``span(v_1..v_m) + R+ v``
   seeded from the global stage's maximiser;
6. damped Newton on the dual residual.

All gradients used by the descent stages are Sobolev gradients, i.e. the
residual mapped back through ``A^{-1}``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.optimize as sopt
import scipy.sparse.linalg as spla

from .errors import GeometryFailure, NotConverged, SolverError
from .functionals import FunctionalContext, State
from .model import ProblemSpec
from .pencil import ConeGeometry, EigenSeq, locate_lambda, sign_normalize, solve_pencil

log = logging.getLogger(__name__)

ARMIJO_C = 1e-4
TRIVIAL_NORM = 1e-8
FROZEN_TOL = 1e-10


@dataclass
class SolverConfig:
    r_plus: float | None = None
    r_minus: float | None = None
    flow_step: float = 1.0
    max_iters: int = 3000
    residual_tol: float = 1e-10
    newton_switch_tol: float = 1e-3
    multistart: int = 6
    path_points: int = 33
    probe_count: int = 256
    k_max: int = 12
    newton_max_steps: int = 40
    mesh_sweeps: int = 40
    seed: int = 0

    def __post_init__(self):
        if self.r_plus is not None and self.r_plus <= 0:
            raise ValueError("r_plus must be positive")
        if self.r_plus is not None and self.r_minus is not None and not self.r_minus > self.r_plus:
            raise ValueError("r_minus must exceed r_plus")
        if not 0 < self.residual_tol < self.newton_switch_tol:
            raise ValueError("need 0 < residual_tol < newton_switch_tol")
        if self.path_points < 3:
            raise ValueError("path_points must be >= 3")


@dataclass(eq=False)
class CriticalPoint:
    state: State
    lam: float
    level: float
    residual: float
    m: int
    iterations: int
    component_norms: tuple[float, float]
    cerami_trace: list[tuple[float, float]] = field(default_factory=list)
    newton_steps: int = 0
    method: str = ""
    alpha: float | None = None
    r_plus: float | None = None
    r_minus: float | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def norm(self) -> float:
        return math.hypot(*self.component_norms)

    @property
    def nontrivial(self) -> bool:
        return self.norm >= TRIVIAL_NORM and self.level > 0

    def record(self) -> dict:
        return {
            "lambda": self.lam,
            "m": self.m,
            "level": self.level,
            "residual": self.residual,
            "iterations": self.iterations,
            "newton_steps": self.newton_steps,
            "method": self.method,
            "norm_u1": self.component_norms[0],
            "norm_u2": self.component_norms[1],
            "nontrivial": self.nontrivial,
            "alpha": self.alpha,
            "r_plus": self.r_plus,
            "r_minus": self.r_minus,
            "cerami_trace": [list(t) for t in self.cerami_trace],
            "diagnostics": self.diagnostics,
        }


# --- small helpers ---------------------------------------------------------

def _unit(ctx: FunctionalContext, x: np.ndarray) -> np.ndarray:
    nrm = ctx.norm(x)
    if nrm == 0:
        raise ValueError("cannot normalise the zero state")
    return x / nrm


def _orthonormal_rows(ctx: FunctionalContext, rows: np.ndarray) -> np.ndarray:
    """Gram-Schmidt in the A inner product."""
    out = []
    for r in rows:
        v = np.array(r, dtype=float)
        for q in out:
            v -= ctx.inner(q, v) * q
        nrm = ctx.norm(v)
        if nrm > 1e-12:
            out.append(v / nrm)
    return np.array(out).reshape(len(out), -1) if out else np.zeros((0, 2 * ctx.n))


def _project_off(ctx: FunctionalContext, basis: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Remove the A-projection of x on the A-orthonormal rows of ``basis``."""
    if basis.shape[0] == 0:
        return x
    return x - basis.T @ (basis @ (ctx.A @ x))


def _psi_rows(ctx: FunctionalContext, X: np.ndarray, lam: float) -> np.ndarray:
    """Psi evaluated on each row of X."""
    AX = (ctx.A @ X.T).T
    BX = (ctx.B @ X.T).T
    quad = 0.5 * np.einsum("ij,ij->i", X, AX - lam * BX)
    n = ctx.n
    W = ctx.nl.energy(X[:, :n], X[:, n:])
    return quad - W @ ctx.w


def ground_direction(ctx: FunctionalContext, iters: int = 60) -> np.ndarray:
    """Smooth positive unit direction (w, w): inverse iteration on A against the mass."""
    x = np.concatenate([ctx.w, ctx.w])
    for _ in range(iters):
        x = ctx.solve_A(np.concatenate([ctx.w, ctx.w]) * x)
        x /= np.abs(x).max()
    return _unit(ctx, x)


def armijo_step(ctx: FunctionalContext, x, lam: float, g=None, step: float = 1.0, psi0=None,
                min_step: float = 1e-12):
    """Backtracking Sobolev-gradient step.

    Returns ``(x_new, psi_new, step)`` with
    ``Psi(x_new) <= Psi(x) - c step |g|_A^2``, or ``None`` when no step of
    size >= ``min_step`` is accepted.
    """
    if g is None:
        g = ctx.gradient(x, lam)
    if psi0 is None:
        psi0 = ctx.psi(x, lam)
    g2 = ctx.inner(g, g)
    while step >= min_step:
        x_new = x - step * g
        p_new = ctx.psi(x_new, lam)
        if p_new <= psi0 - ARMIJO_C * step * g2:
            return x_new, p_new, step
        step *= 0.5
    return None


def sobolev_descent(ctx: FunctionalContext, x0, lam: float, steps: int, flow_step: float = 1.0):
    """Plain Armijo descent; returns the list of Psi values along the iterates."""
    x = np.asarray(x0, dtype=float).copy()
    vals = [ctx.psi(x, lam)]
    step = flow_step
    for _ in range(steps):
        out = armijo_step(ctx, x, lam, step=min(2 * step, flow_step), psi0=vals[-1])
        if out is None:
            break
        x, p, step = out
        vals.append(p)
    return x, vals


# --- linking radii ---------------------------------------------------------

def _bump_profiles(ctx: FunctionalContext, count: int, rng) -> np.ndarray:
    x = ctx.grid.x
    R = ctx.grid.spec.radius
    h = ctx.grid.spec.spacing
    radial = ctx.grid.spec.mode.value == "radial"
    out = np.empty((count, x.size))
    for i in range(count):
        f = np.zeros(x.size)
        for _ in range(rng.integers(1, 4)):
            c = rng.uniform(0, R / 3) if radial else rng.uniform(-R / 3, R / 3)
            width = math.exp(rng.uniform(math.log(min(2 * h, R / 3)), math.log(R / 3) + 1e-12))
            f += rng.uniform(0.2, 1.0) * np.exp(-(((x - c) / width) ** 2))
        out[i] = f
    return out


def cplus_probes(ctx: FunctionalContext, geom: ConeGeometry, count: int = 256, seed: int = 0) -> np.ndarray:
    """Unit states in the upper cone: eigen-combinations above mu_m plus smooth
    random states A-orthogonal to the lower eigenvectors."""
    rng = np.random.default_rng(seed)
    basis = _orthonormal_rows(ctx, geom.basis_minus)
    probes = []
    upper = geom.upper if geom.upper is not None else np.zeros((0, 2 * ctx.n))
    upper = np.array([_unit(ctx, v) for v in upper[:8]]).reshape(-1, 2 * ctx.n)
    probes.extend(upper)
    n_combo = count // 2 if upper.shape[0] > 1 else 0
    while len(probes) < n_combo:
        k = upper.shape[0]
        wts = rng.exponential(size=k) / (1.0 + np.arange(k))
        probes.append(_unit(ctx, wts @ upper))
    need = count - len(probes)
    if need > 0:
        f = _bump_profiles(ctx, 2 * need, rng)
        for i in range(need):
            mode = rng.integers(3)
            coef = rng.uniform(-1, 1)
            if mode == 0:
                x = np.concatenate([f[2 * i], coef * f[2 * i]])
            elif mode == 1:
                x = np.concatenate([f[2 * i], coef * f[2 * i + 1]])
            else:
                x = np.concatenate([coef * f[2 * i + 1], f[2 * i]])
            x = _project_off(ctx, basis, x)
            if ctx.norm(x) > 1e-12:
                probes.append(_unit(ctx, x))
    return np.array(probes[:count])


def _min_on_sphere(ctx, probes, lam, r):
    return float(_psi_rows(ctx, r * probes, lam).min())


def sphere_descent(ctx: FunctionalContext, basis: np.ndarray, lam: float, r: float, v0,
                   iters: int = 400, tol: float = 1e-9) -> tuple[np.ndarray, float]:
    """Local minimum of v -> Psi(r v) over unit states A-orthogonal to ``basis``.

    Projected Sobolev-gradient descent with normalisation as retraction and
    Armijo control.  Returns ``(v, Psi(r v))``.
    """
    v = _unit(ctx, _project_off(ctx, basis, np.asarray(v0, dtype=float)))
    f = ctx.psi(r * v, lam)
    step = 1.0
    for _ in range(iters):
        g = r * _project_off(ctx, basis, ctx.gradient(r * v, lam))
        g -= ctx.inner(g, v) * v
        g2 = ctx.inner(g, g)
        if math.sqrt(g2) <= tol * (1.0 + abs(f)):
            break
        step = min(2 * step, 1e3)
        while step > 1e-14:
            v_new = _unit(ctx, v - step * g)
            f_new = ctx.psi(r * v_new, lam)
            if f_new <= f - ARMIJO_C * step * g2:
                break
            step *= 0.5
        else:
            break
        if f - f_new <= 1e-15 * (1.0 + abs(f)):
            v, f = v_new, f_new
            break
        v, f = v_new, f_new
    return v, f


def _refined_min(ctx, basis, probes, lam, r, n_seeds=4):
    """Sampled minimum over probes, then improved by sphere descent from the best few."""
    vals = _psi_rows(ctx, r * probes, lam)
    best_v = probes[int(np.argmin(vals))]
    best = float(vals.min())
    for i in np.argsort(vals, kind="stable")[:n_seeds]:
        v, f = sphere_descent(ctx, basis, lam, r, probes[i])
        if f < best:
            best, best_v = f, v
    return best, best_v


def estimate_r_plus(ctx: FunctionalContext, geom: ConeGeometry, lam: float, probe_count: int = 256,
                    seed: int = 0, radii=None, refine: bool = True) -> tuple[float, float]:
    """Radius maximising the minimum of Psi on the upper cone sphere.

    Probes are scanned over a geometric radius grid.  With ``refine`` the
    minimum at each candidate radius is pushed down by sphere descent, so
    alpha is an attained value of Psi on the sphere instead of a sampled
    upper bound of the infimum.  Returns ``(r_plus, alpha)``.
    """
    if geom.mu_m1 is not None and not lam < geom.mu_m1:
        raise GeometryFailure("lambda must lie strictly below mu_{m+1}")
    probes = cplus_probes(ctx, geom, probe_count, seed)
    radii = np.geomspace(1e-3, 1e3, 61) if radii is None else np.asarray(radii)
    mins = np.array([_min_on_sphere(ctx, probes, lam, r) for r in radii])
    k = int(np.argmax(mins))
    if mins[k] <= 0:
        raise GeometryFailure(
            "no radius with positive sampled minimum of Psi on the upper cone; "
            "lambda may be too close to mu_{m+1} or the nonlinearity too strong",
            best=float(mins[k]),
        )
    if not refine:
        return float(radii[k]), float(mins[k])
    basis = _orthonormal_rows(ctx, geom.basis_minus)
    extra = []

    def refined(r):
        f, v = _refined_min(ctx, basis, np.vstack([probes] + extra[-4:]), lam, r)
        extra.append(v[None, :])
        return f

    # refinement lowers the minimum most at large radii, so search mostly below the sampled optimum
    cand = radii[max(k - 20, 0): k + 4]
    rmins = np.array([refined(r) for r in cand[::-1]])[::-1]
    j = int(np.argmax(rmins))
    r_best, a_best = float(cand[j]), float(rmins[j])
    if 0 < j < cand.size - 1:
        res = sopt.minimize_scalar(lambda s: -refined(math.exp(s)),
                                   bounds=(math.log(cand[j - 1]), math.log(cand[j + 1])),
                                   method="bounded", options={"xatol": 1e-3})
        if -res.fun > a_best:
            r_best, a_best = math.exp(res.x), float(-res.fun)
    if a_best <= 0:
        raise GeometryFailure("refined minimum of Psi on the upper cone sphere is not positive",
                              best=a_best)
    return r_best, a_best


def _linking_basis(ctx: FunctionalContext, geom: ConeGeometry, e: np.ndarray):
    basis = _orthonormal_rows(ctx, geom.basis_minus)
    e_hat = _unit(ctx, _project_off(ctx, basis, e))
    return basis, e_hat


def _far_directions(m: int, count: int, rng) -> np.ndarray:
    """Unit coefficient vectors (a_1..a_m, t) with t >= 0."""
    dirs = [np.eye(m + 1)[m]]
    for k in range(m):
        for ang in np.linspace(0, np.pi, 13)[1:-1]:
            d = np.zeros(m + 1)
            d[k], d[m] = math.cos(ang), math.sin(ang)
            dirs.append(d)
    while len(dirs) < count:
        d = rng.standard_normal(m + 1)
        d[m] = abs(d[m])
        dirs.append(d / np.linalg.norm(d))
    return np.array(dirs)


def estimate_r_minus(ctx: FunctionalContext, geom: ConeGeometry, e, r_plus: float, lam: float,
                     n_dirs: int = 256, seed: int = 0, growth: float = 1.2, cap: float = 1e4) -> float:
    """Smallest grid radius beyond which sampled Psi <= 0 on (C_- + R+ e) for three
    consecutive radii."""
    rng = np.random.default_rng(seed + 1)
    basis, e_hat = _linking_basis(ctx, geom, e)
    frame = np.vstack([basis, e_hat])
    D = _far_directions(basis.shape[0], n_dirs, rng) @ frame
    radii = r_plus * 1.05 * growth ** np.arange(0, int(math.log(cap) / math.log(growth)) + 1)
    ok = [float(_psi_rows(ctx, r * D, lam).max()) <= 0 for r in radii]
    for i in range(len(radii) - 2):
        if ok[i] and ok[i + 1] and ok[i + 2]:
            return float(radii[i])
    raise GeometryFailure("Psi stays positive on the far linking boundary below the radius cap; "
                          "the nonlinearity may not be superquadratic", cap=float(radii[-1]))


def linking_sandwich(ctx: FunctionalContext, geom: ConeGeometry, e, lam: float, r_plus: float,
                     r_minus: float, count: int = 256, seed: int = 0) -> dict:
    """Sampled sup of Psi over D_- u H against the sampled inf over S_+."""
    rng = np.random.default_rng(seed + 2)
    basis, e_hat = _linking_basis(ctx, geom, e)
    m = basis.shape[0]
    pts = [np.zeros(2 * ctx.n)]
    if m:
        for _ in range(count // 2):
            a = rng.standard_normal(m)
            pts.append(rng.uniform(0, r_minus) * (a / np.linalg.norm(a)) @ basis)
    frame = np.vstack([basis, e_hat])
    H = r_minus * (_far_directions(m, count, rng) @ frame)
    low = np.vstack([np.array(pts), H])
    probes = cplus_probes(ctx, geom, max(count, 200), seed)
    sup_low = float(_psi_rows(ctx, low, lam).max())
    inf_plus, _ = _refined_min(ctx, basis, probes, lam, r_plus)
    return {"sup_boundary": sup_low, "inf_sphere": inf_plus, "n_boundary": int(low.shape[0]),
            "n_sphere": int(probes.shape[0]), "holds": sup_low < inf_plus}


# --- local min-max ---------------------------------------------------------

class _Slice:
    """Psi restricted to span(basis) + t v, in coefficients c = (a, t)."""

    def __init__(self, ctx, lam, basis, v):
        self.ctx, self.lam = ctx, lam
        self.Phi = np.vstack([basis, v])          # (m+1, 2n)
        self.APhi = (ctx.A @ self.Phi.T).T
        self.BPhi = (ctx.B @ self.Phi.T).T

    def state(self, c):
        return c @ self.Phi

    def value_grad(self, c):
        x = self.state(c)
        r = self.ctx.residual(x, self.lam)
        return self.ctx.psi(x, self.lam), self.Phi @ r

    def hessian(self, c):
        x = self.state(c)
        H = self.ctx.nonlinear_hessian(x)
        HPhi = (H @ self.Phi.T).T
        return self.Phi @ (self.APhi - self.lam * self.BPhi - HPhi).T


def _ray_max(ctx, lam, v, t_grid=None):
    t_grid = np.geomspace(1e-3, 1e4, 141) if t_grid is None else t_grid
    vals = _psi_rows(ctx, t_grid[:, None] * v[None, :], lam)
    k = int(np.argmax(vals))
    return float(t_grid[k]), float(vals[k])


def _slice_max(sl: _Slice, c0):
    """Maximise Psi on a slice from c0; returns (c, value)."""
    res = sopt.minimize(lambda c: tuple(-np.asarray(z) for z in sl.value_grad(c)), c0, jac=True,
                        method="BFGS", options={"gtol": 1e-10, "maxiter": 500})
    c = res.x
    f = -res.fun
    for _ in range(4):
        H = sl.hessian(c)
        val, grad = sl.value_grad(c)
        try:
            np.linalg.cholesky(-H)
        except np.linalg.LinAlgError:
            break
        c_new = c - np.linalg.solve(H, grad)
        f_new = sl.value_grad(c_new)[0]
        if f_new < val - 1e-14 * (1 + abs(val)):
            break
        c, f = c_new, f_new
    return c, f


def local_minimax(ctx: FunctionalContext, lam: float, basis: np.ndarray, v0: np.ndarray, cfg: SolverConfig,
                  trace: list | None = None, tol: float | None = None):
    """Local min-max over half-spaces [L, v] = span(basis) + R+ v.

    Maximises Psi on the current half-space, then moves the top direction v
    against the Sobolev gradient at the maximiser with Armijo control.
    Returns ``(x, iterations)``.
    """
    tol = cfg.newton_switch_tol if tol is None else tol
    m = basis.shape[0]
    v = _project_off(ctx, basis, v0)
    if ctx.norm(v) < 1e-12:
        raise NotConverged("seed direction lies in the lower eigenspace")
    v = _unit(ctx, v)
    t0, _ = _ray_max(ctx, lam, v)
    c = np.zeros(m + 1)
    c[m] = t0
    sl = _Slice(ctx, lam, basis, v)
    c, f = _slice_max(sl, c)
    step = cfg.flow_step
    for it in range(cfg.max_iters):
        if c[m] < 0:
            v, c[m] = -v, -c[m]
            sl = _Slice(ctx, lam, basis, v)
        x = sl.state(c)
        if ctx.norm(x) < TRIVIAL_NORM:
            raise NotConverged("local min-max collapsed to the trivial state", trivial=True)
        g = ctx.gradient(x, lam)
        g = _project_off(ctx, np.vstack([basis, v]), g)
        res = ctx.norm(ctx.gradient(x, lam))
        if trace is not None:
            trace.append((f, (1 + ctx.norm(x)) * res))
        if res <= tol:
            return x, it
        g2 = ctx.inner(g, g)
        t = c[m]
        step = min(2 * step, cfg.flow_step)
        while True:
            v_new = _unit(ctx, v - (step / t) * g)
            sl_new = _Slice(ctx, lam, basis, v_new)
            c_try = c.copy()
            c_new, f_new = _slice_max(sl_new, c_try)
            if f_new <= f - ARMIJO_C * step * g2:
                break
            step *= 0.5
            if step < 1e-12:
                raise NotConverged("local min-max line search failed", residual=res, level=f)
        v, sl, c, f = v_new, sl_new, c_new, f_new
    raise NotConverged("local min-max exceeded max_iters", level=f)


# --- Newton -----------------------------------------------------------------

def _smallest_singular_estimate(J) -> float:
    try:
        if J.shape[0] <= 400:
            return float(np.abs(np.linalg.eigvalsh(J.toarray())).min())
        val = spla.eigsh(J, k=1, sigma=0.0, which="LM", return_eigenvectors=False)
        return float(abs(val[0]))
    except Exception:  # noqa: BLE001 - diagnostic only
        return float("nan")


def newton_refine(ctx: FunctionalContext, u0, lam: float, *, tol: float = 1e-10, max_steps: int = 40,
                  m: int = -1, method: str = "newton") -> CriticalPoint:
    """Damped Newton on ``A u - lam B u - p(u) = 0`` with merit |residual|_{A^-1}."""
    x = (u0.flat if isinstance(u0, State) else np.asarray(u0, dtype=float)).copy()
    F = ctx.residual(x, lam)
    res = ctx.dual_norm(F)
    trace = [(ctx.psi(x, lam), (1 + ctx.norm(x)) * res)]
    steps = 0
    while res > tol:
        if steps >= max_steps:
            raise NotConverged("Newton exceeded its step budget", residual=res, trace=trace)
        J = ctx.jacobian(x, lam)
        accepted = False
        for reg in (0.0, 1e-10, 1e-8, 1e-6, 1e-4):
            Jr = J if reg == 0 else (J + reg * ctx.A).tocsc()
            try:
                with np.errstate(all="ignore"):
                    dx = spla.splu(Jr).solve(-F)
            except RuntimeError:
                continue
            if not np.all(np.isfinite(dx)):
                continue
            s = 1.0
            while s > 1e-4:
                x_new = x + s * dx
                F_new = ctx.residual(x_new, lam)
                res_new = ctx.dual_norm(F_new)
                if res_new < (1 - 1e-4 * s) * res:
                    accepted = True
                    break
                s *= 0.5
            if accepted:
                break
        if not accepted:
            raise NotConverged("Newton step-halving failed", residual=res,
                               smallest_singular_value=_smallest_singular_estimate(J), trace=trace)
        x, F, res = x_new, F_new, res_new
        steps += 1
        trace.append((ctx.psi(x, lam), (1 + ctx.norm(x)) * res))
    return CriticalPoint(
        state=State.from_flat(x), lam=lam, level=ctx.psi(x, lam), residual=res, m=m, iterations=steps,
        component_norms=ctx.component_norms(x), cerami_trace=trace, newton_steps=steps, method=method,
    )


# --- global stages ------------------------------------------------------------

def _resample_path(ctx, path, count):
    seg = np.array([ctx.norm(path[i + 1] - path[i]) for i in range(len(path) - 1)])
    s = np.concatenate([[0.0], np.cumsum(seg)])
    target = np.linspace(0, s[-1], count)
    out = []
    for t in target:
        k = min(int(np.searchsorted(s, t, side="right")) - 1, len(path) - 2)
        lam_ = 0.0 if seg[k] == 0 else (t - s[k]) / seg[k]
        out.append((1 - lam_) * path[k] + lam_ * path[k + 1])
    out[0], out[-1] = path[0], path[-1]
    return out


def _finish(ctx, x, lam, cfg, *, m, method, iters, trace, basis=None):
    """Local min-max down to the Newton switch, then Newton."""
    iterations = iters
    if ctx.norm(ctx.gradient(x, lam)) > cfg.newton_switch_tol:
        b = np.zeros((0, 2 * ctx.n)) if basis is None else basis
        x, it = local_minimax(ctx, lam, b, x, cfg, trace)
        iterations += it
    cp = newton_refine(ctx, x, lam, tol=cfg.residual_tol, max_steps=cfg.newton_max_steps, m=m, method=method)
    cp.iterations += iterations
    cp.cerami_trace = trace + cp.cerami_trace
    return cp


def mountain_pass(ctx: FunctionalContext, cfg: SolverConfig, lam: float, geom: ConeGeometry,
                  e=None) -> CriticalPoint:
    """Path deformation from 0 to r_minus e (branch m = 0)."""
    if geom.m != 0:
        raise ValueError("mountain_pass handles m = 0; use linking_flow")
    e_hat = _unit(ctx, e if e is not None else (geom.e_vector if geom.e_vector is not None
                                                 else ground_direction(ctx)))
    if cfg.r_minus is None:
        raise ValueError("cfg.r_minus must be set (see estimate_r_minus)")
    P = cfg.path_points
    path = [s * cfg.r_minus * e_hat for s in np.linspace(0, 1, P)]
    vals = [ctx.psi(x, lam) for x in path]
    if vals[-1] > FROZEN_TOL:
        raise GeometryFailure("path endpoint has Psi > 0; r_minus too small", psi_end=vals[-1])
    h0 = cfg.r_minus / (P - 1)
    step = cfg.flow_step
    trace: list = []
    best = (np.inf, None)
    stall = 0
    it = 0
    for it in range(cfg.max_iters):
        j = int(np.argmax(vals))
        if j in (0, len(path) - 1):
            raise GeometryFailure("path maximum reached an endpoint", index=j)
        x = path[j]
        g = ctx.gradient(x, lam)
        res = ctx.norm(g)
        trace.append((vals[j], (1 + ctx.norm(x)) * res))
        if res < best[0] * (1 - 1e-3):
            best, stall = (res, x.copy()), 0
        else:
            stall += 1
        if res <= cfg.newton_switch_tol or stall > 4 * P:
            break
        out = armijo_step(ctx, x, lam, g, step=min(2 * step, cfg.flow_step), psi0=vals[j])
        if out is None:
            break
        path[j], vals[j], step = out
        for k in (j + 1, j):
            if ctx.norm(path[k] - path[k - 1]) > 2 * h0:
                mid = 0.5 * (path[k] + path[k - 1])
                path.insert(k, mid)
                vals.insert(k, ctx.psi(mid, lam))
        if len(path) > 2 * P:
            path = _resample_path(ctx, path, P)
            vals = [ctx.psi(x, lam) for x in path]
        if vals[0] != 0.0 or vals[-1] > FROZEN_TOL:
            raise GeometryFailure("mountain-pass endpoints lost Psi <= 0")
    seed = best[1] if best[1] is not None else path[int(np.argmax(vals))]
    if ctx.norm(seed) < TRIVIAL_NORM:
        raise NotConverged("mountain pass collapsed to the trivial state", trivial=True)
    cp = _finish(ctx, seed, lam, cfg, m=0, method="mountain_pass", iters=it + 1, trace=trace)
    cp.diagnostics["path_points_final"] = len(path)
    return cp


def _q_mesh(m: int, n_radial: int = 6, n_dirs: int = 48, rng=None):
    """Coefficient mesh of the unit half-ball in R^{m+1} (last coordinate >= 0)
    and the mask of boundary points (sphere or t = 0 face)."""
    rng = np.random.default_rng(0) if rng is None else rng
    if m == 1:
        angles = np.linspace(0, np.pi, 2 * n_radial + 1)
        dirs = np.column_stack([np.cos(angles), np.sin(angles)])
    else:
        dirs = _far_directions(m, n_dirs, rng)
        flat = []
        for k in range(m):
            for sgn in (1.0, -1.0):
                d = np.zeros(m + 1)
                d[k] = sgn
                flat.append(d)
        dirs = np.vstack([dirs, flat])
    pts = [np.zeros(m + 1)]
    for rho in np.linspace(0, 1, n_radial + 1)[1:]:
        pts.extend(rho * dirs)
    pts = np.array(pts)
    boundary = (np.linalg.norm(pts, axis=1) >= 1 - 1e-12) | (np.abs(pts[:, m]) <= 1e-12)
    return pts, boundary


def linking_flow(ctx: FunctionalContext, cfg: SolverConfig, geom: ConeGeometry, lam: float,
                 alpha: float | None = None) -> CriticalPoint:
    """Deform a mesh of Q = {u + t e : u in span(v_1..v_m), t >= 0, |.| <= r_minus} (branch m >= 1).

    Boundary points (D_- and H) stay frozen and must keep Psi <= 0; interior
    points above alpha/2 take Armijo Sobolev steps.  Once the mesh maximiser
    settles it seeds the local min-max stage and Newton.
    """
    if geom.m < 1:
        raise ValueError("linking_flow handles m >= 1; use mountain_pass")
    if cfg.r_minus is None:
        raise ValueError("cfg.r_minus must be set (see estimate_r_minus)")
    basis, e_hat = _linking_basis(ctx, geom, geom.e_vector)
    frame = np.vstack([basis, e_hat])
    coeffs, frozen = _q_mesh(geom.m, rng=np.random.default_rng(cfg.seed))
    X = cfg.r_minus * (coeffs @ frame)
    vals = _psi_rows(ctx, X, lam)
    frozen_vals = vals[frozen].copy()
    frozen_max = float(frozen_vals.max())
    if frozen_max > FROZEN_TOL:
        raise GeometryFailure("frozen boundary of Q has Psi > 0; enlarge r_minus", frozen_max=frozen_max)
    level_cut = 0.5 * alpha if alpha is not None else 0.0
    steps = np.full(len(X), cfg.flow_step)
    trace: list = []
    invariant_max = frozen_max
    last_j, stable = -1, 0
    seed = None
    sweeps = 0
    for sweeps in range(1, cfg.mesh_sweeps + 1):
        active = np.flatnonzero(~frozen & (vals > level_cut))
        for i in active:
            out = armijo_step(ctx, X[i], lam, step=min(2 * steps[i], cfg.flow_step), psi0=vals[i])
            if out is not None:
                X[i], vals[i], steps[i] = out
        # frozen points never move; re-evaluate to guard the invariant
        invariant_max = max(invariant_max, float(_psi_rows(ctx, X[frozen], lam).max()))
        if invariant_max > FROZEN_TOL:
            raise GeometryFailure("frozen boundary invariant violated", frozen_max=invariant_max)
        j = int(np.argmax(vals))
        g = ctx.gradient(X[j], lam)
        res = ctx.norm(g)
        trace.append((float(vals[j]), (1 + ctx.norm(X[j])) * res))
        stable = stable + 1 if j == last_j else 0
        last_j = j
        seed = X[j].copy()
        if res <= cfg.newton_switch_tol or stable >= 3:
            break
    cp = _finish(ctx, seed, lam, cfg, m=geom.m, method="linking_flow", iters=sweeps, trace=trace, basis=basis)
    cp.diagnostics["frozen_max"] = invariant_max
    cp.diagnostics["mesh_points"] = int(len(X))
    return cp


# --- Cerami diagnostics ---------------------------------------------------------

@dataclass
class CeramiReport:
    levels: list[float]
    cerami: list[float]
    final_cerami: float
    norm_blowup: bool
    level_stagnation: bool
    nondecaying: bool
    trivial_attractor: bool

    def to_dict(self) -> dict:
        return asdict(self)


def cerami_monitor(trace, norms=None, *, window: int = 10) -> CeramiReport:
    """Flags for a trace of ``(Psi, (1 + |u|) |Psi'|)`` samples.

    ``norms`` (|u_k|) enables the norm-blowup flag: |u_k| growing tenfold
    while Psi stays bounded.
    """
    levels = [float(t[0]) for t in trace]
    cer = [float(t[1]) for t in trace]
    if not trace:
        return CeramiReport([], [], float("nan"), False, False, False, False)
    k = min(window, len(trace))
    tail_c = cer[-k:]
    head_c = cer[:k]
    nondecaying = len(trace) >= 2 * k and min(tail_c) > 0.5 * min(head_c)
    tail_l = levels[-k:]
    scale = 1.0 + max(abs(v) for v in levels)
    stagnation = len(trace) >= k and (max(tail_l) - min(tail_l)) <= 1e-12 * scale and tail_c[-1] > 1e-8
    blowup = False
    trivial = abs(levels[-1]) <= 1e-12 * scale
    if norms is not None and len(norms) >= 2:
        norms = [float(v) for v in norms]
        bounded = max(abs(v) for v in levels) < 10 * (1 + abs(levels[0]))
        blowup = bounded and norms[-1] > 10 * max(norms[0], 1e-300)
        trivial = trivial and norms[-1] < TRIVIAL_NORM
    return CeramiReport(levels, cer, cer[-1], blowup, stagnation, nondecaying, trivial)


# --- driver ------------------------------------------------------------------

def _seed_directions(ctx, geom, cfg):
    rng = np.random.default_rng(cfg.seed + 7)
    upper = geom.upper if geom.upper is not None and len(geom.upper) else None
    out = []
    if upper is not None and upper.shape[0] >= 2:
        a, b = _unit(ctx, upper[0]), _unit(ctx, upper[1])
        for th in np.linspace(0, np.pi, cfg.multistart + 1)[:-1]:
            out.append(math.cos(th) * a + math.sin(th) * b)
    elif upper is not None:
        out.append(_unit(ctx, upper[0]))
    else:
        out.append(ground_direction(ctx))
    while len(out) < 2 * cfg.multistart:
        if upper is not None:
            wts = rng.exponential(size=upper.shape[0])
            out.append(wts @ upper)
        else:
            out.append(cplus_probes(ctx, geom, 1, seed=int(rng.integers(1 << 30)))[0])
    return out


def find_critical_point(problem: ProblemSpec, cfg: SolverConfig | None = None, *,
                        ctx: FunctionalContext | None = None, seq: EigenSeq | None = None) -> CriticalPoint:
    """Full pipeline for one lambda; raises :class:`SolverError` subclasses on failure."""
    cfg = cfg or SolverConfig()
    original_lam = problem.lam
    problem = sign_normalize(problem)
    lam = problem.lam
    if ctx is None or original_lam < 0:
        ctx = FunctionalContext.from_problem(problem)
        seq = None
    if seq is None:
        seq = solve_pencil(ctx, cfg.k_max)
    geom = locate_lambda(seq, lam)
    e = geom.e_vector if geom.e_vector is not None else ground_direction(ctx)

    if cfg.r_plus is None:
        r_plus, alpha = estimate_r_plus(ctx, geom, lam, cfg.probe_count, cfg.seed)
    else:
        r_plus = cfg.r_plus
        alpha = _min_on_sphere(ctx, cplus_probes(ctx, geom, cfg.probe_count, cfg.seed), lam, r_plus)
        if alpha <= 0:
            raise GeometryFailure("configured r_plus gives a nonpositive sampled minimum", alpha=alpha)
    r_minus = cfg.r_minus if cfg.r_minus is not None else estimate_r_minus(ctx, geom, e, r_plus, lam,
                                                                            seed=cfg.seed)
    sandwich = linking_sandwich(ctx, geom, e, lam, r_plus, r_minus, count=max(cfg.probe_count, 200),
                                seed=cfg.seed)
    if not sandwich["holds"]:
        raise GeometryFailure("sampled linking inequality sup(D_- u H) < inf(S_+) fails", **sandwich)
    run_cfg = SolverConfig(**{**asdict(cfg), "r_plus": r_plus, "r_minus": r_minus})

    attempts = []
    candidates = []
    first = (lambda: mountain_pass(ctx, run_cfg, lam, geom, e)) if geom.m == 0 else \
        (lambda: linking_flow(ctx, run_cfg, geom, lam, alpha))
    basis = _orthonormal_rows(ctx, geom.basis_minus)
    tries = [first] + [
        (lambda d=d: _finish(ctx, d, lam, run_cfg, m=geom.m, method="multistart", iters=0, trace=[], basis=basis))
        for d in _seed_directions(ctx, geom, run_cfg)
    ]
    for attempt in tries:
        try:
            cp = attempt()
        except SolverError as exc:
            attempts.append(str(exc))
            log.debug("attempt failed: %s", exc)
            continue
        ok_level = cp.level >= alpha * (1 - 1e-2) if geom.m >= 1 else cp.level > 0
        if cp.nontrivial and cp.residual <= cfg.residual_tol and ok_level:
            candidates.append(cp)
            break
        attempts.append(f"{cp.method}: level={cp.level:.6g} residual={cp.residual:.3g} rejected")
    if not candidates:
        raise NotConverged("no nontrivial critical point accepted", attempts=attempts)
    cp = candidates[0]
    cp.lam = original_lam
    cp.m = geom.m
    cp.alpha, cp.r_plus, cp.r_minus = alpha, r_plus, r_minus
    cp.diagnostics.update({
        "sandwich": sandwich,
        "mu_m": geom.mu_m,
        "mu_m1": geom.mu_m1,
        "sign_flipped": original_lam < 0,
        "rejected_attempts": attempts,
    })
    return cp
