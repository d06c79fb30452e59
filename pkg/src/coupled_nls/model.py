"""Potentials, nonlinearities and sampled hypothesis certificates.

Every nonlinearity exposes vectorised ``energy``, ``gradient`` and
``hessian`` methods taking nodal arrays ``t`` (first component) and ``s``
(second component).  An optional ``idx`` selects which grid nodes the values
belong to; only position-dependent families (``PowerSum``) use it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .grid import Grid, GridMode, critical_exponent

FD_STEP = 1e-6


class Nonlinearity:
    """Base class for W(x, t, s) >= 0."""

    kind = "abstract"
    theta: float = 1.0
    p_growth: float = 4.0

    def energy(self, t, s, idx=None):
        raise NotImplementedError

    def gradient(self, t, s, idx=None):
        raise NotImplementedError

    def hessian(self, t, s, idx=None):
        """Second derivatives ``(W_tt, W_ts, W_ss)``.

        Default is a central difference of :meth:`gradient`.
        """
        t = np.asarray(t, dtype=float)
        s = np.asarray(s, dtype=float)
        dt = FD_STEP * (1.0 + np.abs(t))
        ds = FD_STEP * (1.0 + np.abs(s))
        gtp, gsp = self.gradient(t + dt, s, idx)
        gtm, gsm = self.gradient(t - dt, s, idx)
        htt = (gtp - gtm) / (2 * dt)
        hst = (gsp - gsm) / (2 * dt)
        gtp, gsp = self.gradient(t, s + ds, idx)
        gtm, gsm = self.gradient(t, s - ds, idx)
        hts = (gtp - gtm) / (2 * ds)
        hss = (gsp - gsm) / (2 * ds)
        return htt, 0.5 * (hts + hst), hss

    def check_admissible(self, dimension: int) -> None:
        crit = critical_exponent(dimension)
        if not 2.0 < self.p_growth < crit:
            raise ValueError(f"growth exponent {self.p_growth} outside (2, {crit})")
        if self.theta < 1.0:
            raise ValueError(f"theta must be >= 1, got {self.theta}")

    def describe(self) -> dict:
        return {"kind": self.kind, "theta": self.theta, "p_growth": self.p_growth}


class PowerSum(Nonlinearity):
    """W = c1(x)|t|^p1/p1 + c2(x)|s|^p2/p2 (linearly coupled systems)."""

    kind = "power_sum"

    def __init__(self, c1, c2, p1: float, p2: float, theta: float = 1.0):
        self.c1 = np.atleast_1d(np.asarray(c1, dtype=float))
        self.c2 = np.atleast_1d(np.asarray(c2, dtype=float))
        self.p1, self.p2 = float(p1), float(p2)
        self.theta = float(theta)
        self.p_growth = max(self.p1, self.p2)

    def _coeffs(self, idx):
        if idx is None:
            return self.c1 if self.c1.size > 1 else self.c1[0], self.c2 if self.c2.size > 1 else self.c2[0]
        c1 = self.c1[idx] if self.c1.size > 1 else self.c1[0]
        c2 = self.c2[idx] if self.c2.size > 1 else self.c2[0]
        return c1, c2

    def energy(self, t, s, idx=None):
        c1, c2 = self._coeffs(idx)
        return c1 * np.abs(t) ** self.p1 / self.p1 + c2 * np.abs(s) ** self.p2 / self.p2

    def gradient(self, t, s, idx=None):
        c1, c2 = self._coeffs(idx)
        t = np.asarray(t, dtype=float)
        s = np.asarray(s, dtype=float)
        return c1 * np.abs(t) ** (self.p1 - 2) * t, c2 * np.abs(s) ** (self.p2 - 2) * s

    def hessian(self, t, s, idx=None):
        c1, c2 = self._coeffs(idx)
        htt = c1 * (self.p1 - 1) * np.abs(t) ** (self.p1 - 2)
        hss = c2 * (self.p2 - 1) * np.abs(s) ** (self.p2 - 2)
        return htt, np.zeros(np.broadcast(t, s).shape), hss

    def check_admissible(self, dimension: int) -> None:
        crit = critical_exponent(dimension)
        for p in (self.p1, self.p2):
            if not 2.0 < p < crit:
                raise ValueError(f"power-sum exponent {p} outside (2, {crit})")
        if self.c1.min() <= 0 or self.c2.min() <= 0:
            raise ValueError("power-sum coefficients must be bounded below by a positive constant")
        super().check_admissible(dimension)

    def describe(self) -> dict:
        return {**super().describe(), "p1": self.p1, "p2": self.p2,
                "c1_min": float(self.c1.min()), "c2_min": float(self.c2.min())}


class QuarticCoupled(Nonlinearity):
    """W = t^4/4 + t^2 s^2/2 + s^4/4 = |z|^4/4."""

    kind = "quartic_coupled"
    p_growth = 4.0

    def __init__(self, theta: float = 1.0):
        self.theta = float(theta)

    def energy(self, t, s, idx=None):
        r2 = np.asarray(t) ** 2 + np.asarray(s) ** 2
        return 0.25 * r2 * r2

    def gradient(self, t, s, idx=None):
        t = np.asarray(t, dtype=float)
        s = np.asarray(s, dtype=float)
        r2 = t * t + s * s
        return r2 * t, r2 * s

    def hessian(self, t, s, idx=None):
        t = np.asarray(t, dtype=float)
        s = np.asarray(s, dtype=float)
        return 3 * t * t + s * s, 2 * t * s, t * t + 3 * s * s

    def check_admissible(self, dimension: int) -> None:
        if dimension > 3:
            raise ValueError("quartic coupling needs dimension <= 3 so that 4 < 2*")
        super().check_admissible(dimension)


class Custom(Nonlinearity):
    """User-supplied W(t, s) and its gradient; the Hessian defaults to finite differences."""

    kind = "custom"

    def __init__(
        self,
        energy: Callable,
        gradient: Callable,
        *,
        theta: float,
        p_growth: float = 4.0,
        hessian: Callable | None = None,
        name: str = "custom",
    ):
        self._energy = energy
        self._gradient = gradient
        self._hessian = hessian
        self.theta = float(theta)
        self.p_growth = float(p_growth)
        self.name = name

    def energy(self, t, s, idx=None):
        return np.asarray(self._energy(np.asarray(t, dtype=float), np.asarray(s, dtype=float)), dtype=float)

    def gradient(self, t, s, idx=None):
        gt, gs = self._gradient(np.asarray(t, dtype=float), np.asarray(s, dtype=float))
        return np.asarray(gt, dtype=float), np.asarray(gs, dtype=float)

    def hessian(self, t, s, idx=None):
        if self._hessian is not None:
            return self._hessian(np.asarray(t, dtype=float), np.asarray(s, dtype=float))
        return super().hessian(t, s, idx)

    def describe(self) -> dict:
        return {**super().describe(), "name": self.name}


def zero_nonlinearity() -> Custom:
    """W = 0: reduces the system to the linear pencil."""
    zero = lambda t, s: np.zeros(np.broadcast(t, s).shape)
    return Custom(
        zero,
        lambda t, s: (zero(t, s), zero(t, s)),
        hessian=lambda t, s: (zero(t, s),) * 3,
        theta=1.0,
        name="zero",
    )


def quadratic_nonlinearity() -> Custom:
    """W = |z|^2, which is not superquadratic."""
    return Custom(
        lambda t, s: t * t + s * s,
        lambda t, s: (2 * t, 2 * s),
        hessian=lambda t, s: (np.full(np.broadcast(t, s).shape, 2.0), np.zeros(np.broadcast(t, s).shape),
                              np.full(np.broadcast(t, s).shape, 2.0)),
        theta=1.0,
        name="quadratic",
    )


CUSTOM_REGISTRY: dict[str, Callable[[], Custom]] = {
    "zero": zero_nonlinearity,
    "quadratic": quadratic_nonlinearity,
}


def eval_W(nl: Nonlinearity, x_index: int, z) -> float:
    t, s = z
    return float(nl.energy(np.array([t], float), np.array([s], float), np.array([x_index]))[0])


def eval_gradW(nl: Nonlinearity, x_index: int, z) -> tuple[float, float]:
    t, s = z
    gt, gs = nl.gradient(np.array([t], float), np.array([s], float), np.array([x_index]))
    return float(gt[0]), float(gs[0])


def calW(nl: Nonlinearity, t, s, idx=None):
    """Vectorised grad W . z - 2 W."""
    gt, gs = nl.gradient(t, s, idx)
    return gt * t + gs * s - 2.0 * nl.energy(t, s, idx)


def eval_calW(nl: Nonlinearity, x_index: int, z) -> float:
    t, s = z
    return float(calW(nl, np.array([t], float), np.array([s], float), np.array([x_index]))[0])


# --- potentials -----------------------------------------------------------

def _constant(value: float = 1.0):
    return lambda r: np.full(np.shape(r), float(value))


def _harmonic(offset: float = 1.0, curvature: float = 1.0):
    return lambda r: offset + curvature * np.asarray(r) ** 2


def _gaussian_well(depth: float = 1.0, width: float = 1.0, offset: float = 0.0):
    return lambda r: offset - depth * np.exp(-((np.asarray(r) / width) ** 2))


def _step(inside: float = 1.0, outside: float = 0.0, radius: float = 1.0):
    return lambda r: np.where(np.abs(np.asarray(r)) <= radius, float(inside), float(outside))


POTENTIAL_FAMILIES = {
    "constant": _constant,
    "harmonic": _harmonic,
    "gaussian_well": _gaussian_well,
    "step": _step,
}


def potential_family(name: str, **params) -> Callable[[np.ndarray], np.ndarray]:
    try:
        factory = POTENTIAL_FAMILIES[name]
    except KeyError:
        raise ValueError(f"unknown potential family {name!r}; choose from {sorted(POTENTIAL_FAMILIES)}") from None
    return factory(**params)


@dataclass(eq=False)
class PotentialSet:
    b1: np.ndarray
    b2: np.ndarray
    V1: np.ndarray
    V2: np.ndarray
    gamma: np.ndarray
    b1_floor: float | None = None
    b2_floor: float | None = None

    def __post_init__(self):
        for name in ("b1", "b2", "V1", "V2", "gamma"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"potential {name} has non-finite values")
            setattr(self, name, arr)
        if self.b1_floor is None:
            self.b1_floor = float(self.b1.min())
        if self.b2_floor is None:
            self.b2_floor = float(self.b2.min())
        if not (self.b1_floor > 0 and self.b2_floor > 0):
            raise ValueError("b1, b2 must be bounded below by positive constants")
        if self.b1.min() < self.b1_floor or self.b2.min() < self.b2_floor:
            raise ValueError("b1/b2 dip below their declared floors")

    @classmethod
    def sample(cls, grid: Grid, b1, b2, V1, V2, gamma, **floors) -> "PotentialSet":
        """Sample callables ``f(r)`` (or constants) on the free nodes."""
        def on_grid(f):
            return grid.sample(f if callable(f) else _constant(f))
        return cls(on_grid(b1), on_grid(b2), on_grid(V1), on_grid(V2), on_grid(gamma), **floors)

    def negated(self) -> "PotentialSet":
        return PotentialSet(self.b1, self.b2, -self.V1, -self.V2, -self.gamma, self.b1_floor, self.b2_floor)


@dataclass(eq=False)
class ProblemSpec:
    grid: Grid
    potentials: PotentialSet
    nonlinearity: Nonlinearity
    lam: float = 0.0

    def __post_init__(self):
        n = self.grid.size
        for name in ("b1", "b2", "V1", "V2", "gamma"):
            if getattr(self.potentials, name).shape != (n,):
                raise ValueError(f"potential {name} does not match the {n} free nodes")
        if isinstance(self.nonlinearity, PowerSum):
            for c in (self.nonlinearity.c1, self.nonlinearity.c2):
                if c.size not in (1, n):
                    raise ValueError("power-sum coefficients must be scalar or nodal")
        self.nonlinearity.check_admissible(self.grid.spec.dimension)
        self.lam = float(self.lam)

    @property
    def grid_spec(self):
        return self.grid.spec

    def with_lambda(self, lam: float) -> "ProblemSpec":
        return ProblemSpec(self.grid, self.potentials, self.nonlinearity, lam)


def benchmark_problem(grid: Grid, kind: str = "quartic_coupled", lam: float = 0.0, **nl_params) -> ProblemSpec:
    """Canonical benchmark: b_i = 1 + r^2, V_i = 1, gamma = 1."""
    pots = PotentialSet.sample(grid, _harmonic(), _harmonic(), 1.0, 1.0, 1.0, b1_floor=1.0, b2_floor=1.0)
    if kind == "quartic_coupled":
        nl = QuarticCoupled(**nl_params)
    elif kind == "power_sum":
        params = {"c1": 1.0, "c2": 1.0, "p1": 4.0, "p2": 4.0, **nl_params}
        nl = PowerSum(**params)
    else:
        raise ValueError(f"unknown benchmark kind {kind!r}")
    return ProblemSpec(grid, pots, nl, lam)


# --- hypothesis certificates ---------------------------------------------

@dataclass
class SamplingPlan:
    n_rays: int = 24
    large_radii: np.ndarray = field(default_factory=lambda: np.geomspace(1.0, 1e3, 13))
    small_radii: np.ndarray = field(default_factory=lambda: np.geomspace(1e-1, 1e-6, 11))
    etas: np.ndarray = field(default_factory=lambda: np.linspace(0.0, 1.0, 101))
    n_nodes: int = 9
    floor_tol: float = 1e-12


@dataclass
class HypothesisResult:
    passed: bool
    detail: str


@dataclass
class HypothesisReport:
    results: dict[str, HypothesisResult]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results.values())

    def failures(self) -> list[str]:
        return [k for k, r in self.results.items() if not r.passed]

    def __getitem__(self, key: str) -> HypothesisResult:
        return self.results[key]

    def to_dict(self) -> dict:
        return {k: {"passed": r.passed, "detail": r.detail} for k, r in self.results.items()}


def _ray_samples(plan: SamplingPlan, radii: np.ndarray):
    angles = 2 * np.pi * np.arange(plan.n_rays) / plan.n_rays
    # shape (rays, radii)
    return (np.cos(angles)[:, None] * radii[None, :], np.sin(angles)[:, None] * radii[None, :])


def _is_even(v: np.ndarray) -> bool:
    return bool(np.allclose(v, v[::-1], rtol=0, atol=1e-12 * (1 + np.abs(v).max())))


def check_hypotheses(spec: ProblemSpec, samples: SamplingPlan | None = None) -> HypothesisReport:
    """Sampling-based certificates for the structural hypotheses.

    Failures are report entries; nothing here raises on a failed check.
    """
    plan = samples or SamplingPlan()
    pots, nl, grid = spec.potentials, spec.nonlinearity, spec.grid
    res: dict[str, HypothesisResult] = {}

    ok = bool(pots.b1.min() >= pots.b1_floor > 0 and pots.b2.min() >= pots.b2_floor > 0)
    res["B"] = HypothesisResult(ok, f"min b1={pots.b1.min():.6g} (floor {pots.b1_floor:.6g}), "
                                    f"min b2={pots.b2.min():.6g} (floor {pots.b2_floor:.6g})")
    n_pos = int(np.count_nonzero(pots.V1 > 0) + np.count_nonzero(pots.V2 > 0))
    res["positive_V"] = HypothesisResult(n_pos > 0, f"{n_pos} nodes with V1 > 0 or V2 > 0")

    nodes = np.unique(np.linspace(0, grid.size - 1, min(plan.n_nodes, grid.size)).round().astype(int))
    w1_neg, w1_growth, w2_bad, w3_bad, w3_axes, w4_bad, floor_min = [], [], [], [], 0.0, 0.0, np.inf
    crit = critical_exponent(grid.spec.dimension)
    for i in nodes:
        idx = np.array([i])
        T, S = _ray_samples(plan, plan.large_radii)
        W_big = nl.energy(T, S, idx)
        q = W_big / plan.large_radii[None, :] ** 2
        if W_big.min() < -plan.floor_tol:
            w1_neg.append(int(i))
        bound = W_big / (1.0 + plan.large_radii[None, :] ** nl.p_growth)
        if np.any(bound[:, -1] > bound[:, -2] * (1 + 1e-6) + 1e-12):
            w1_growth.append(int(i))
        if np.any(np.diff(q, axis=1) < -1e-12 * q[:, 1:]) or np.any(q[:, -1] <= q[:, 0] * (1 + 1e-3)):
            w2_bad.append(int(i))

        Ts, Ss = _ray_samples(plan, plan.small_radii)
        qs = nl.energy(Ts, Ss, idx) / plan.small_radii[None, :] ** 2
        if np.any(np.diff(qs, axis=1) > 1e-12 * qs[:, :-1] + 1e-300) or np.any(qs[:, -1] > qs[:, 0] * (1 - 1e-3)):
            w3_bad.append(int(i))
        probe = np.concatenate([-plan.large_radii[::-1], plan.small_radii, plan.large_radii])
        zeros = np.zeros_like(probe)
        gt0, _ = nl.gradient(zeros, probe, idx)
        _, gs0 = nl.gradient(probe, zeros, idx)
        w3_axes = max(w3_axes, float(np.abs(gt0).max()), float(np.abs(gs0).max()))

        radii = np.concatenate([plan.small_radii[::-1], plan.large_radii])
        T, S = _ray_samples(plan, radii)
        base = calW(nl, T, S, idx)
        floor_min = min(floor_min, float(base.min()))
        scaled = np.stack([calW(nl, eta * T, eta * S, idx) for eta in plan.etas])
        slack = nl.theta * base[None] - scaled
        if slack.min() < -plan.floor_tol * (1 + np.abs(scaled).max()):
            w4_bad.append(int(i))

    res["W1"] = HypothesisResult(
        not w1_neg and not w1_growth and 2 < nl.p_growth < crit,
        f"p={nl.p_growth}, 2*={crit}; negative W at nodes {w1_neg}; growth above |z|^p at nodes {w1_growth}",
    )
    res["W2"] = HypothesisResult(not w2_bad, f"W/|z|^2 not increasing to large |z| at nodes {w2_bad}")
    res["W3"] = HypothesisResult(
        not w3_bad and w3_axes <= 1e-12,
        f"W/|z|^2 not decreasing to 0 at nodes {w3_bad}; max |W_t(0,s)|,|W_s(t,0)| = {w3_axes:.3g}",
    )
    res["W4"] = HypothesisResult(not w4_bad, f"theta={nl.theta}; violations at nodes {w4_bad}")
    res["calW_floor"] = HypothesisResult(floor_min >= -plan.floor_tol, f"min grad W.z - 2W = {floor_min:.3g}")

    if grid.spec.mode is GridMode.RADIAL:
        sym = (True, True, True)
        how = "radial sampling"
    else:
        coeff_even = True
        if isinstance(nl, PowerSum):
            coeff_even = all(c.size == 1 or _is_even(c) for c in (nl.c1, nl.c2))
        sym = (_is_even(pots.b1) and _is_even(pots.b2),
               _is_even(pots.V1) and _is_even(pots.V2) and _is_even(pots.gamma),
               coeff_even)
        how = "evenness on the full line"
    res["B_radial"] = HypothesisResult(sym[0], how)
    res["V_radial"] = HypothesisResult(sym[1], how)
    res["W5"] = HypothesisResult(sym[2], how)
    return HypothesisReport(res)
