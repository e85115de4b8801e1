"""Discrete zero-sum game between the analyst (selection A_k) and the adversary (data-cost link p_k).

Objective, minimised over A and maximised over p:

    U(A, p) = gamma/(s th^2) (sum pi p/A - (sum pi p)^2/th) + (1-gamma)(1-th)(1 - sum pi p / th)

subject to sum pi_k phi_k A_k <= B/s - l and A, p in [0, 1]^K.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any, Sequence

import numpy as np
import numpy.typing as npt
from scipy import optimize

from .allocation import AllocationRule, budget_residual
from .errors import ConvergenceError, PreconditionError
from .market import MarketConfig, ParticipationProfile
from .quadrature import bisect_scalar
from .virtual_cost import VirtualCostDensity, virtual_cost_density

FloatArray = npt.NDArray[np.float64]


@dataclass(frozen=True)
class DiscreteInstance:
    """Sorted virtual costs phi_k with masses pi_k summing to theta_bar."""

    phi: FloatArray
    pi: FloatArray
    gamma: float
    s: float
    theta_bar: float
    gap: float

    def __post_init__(self) -> None:
        phi = np.asarray(self.phi, dtype=float)
        pi = np.asarray(self.pi, dtype=float)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "pi", pi)
        if phi.ndim != 1 or phi.shape != pi.shape or phi.size == 0:
            raise ValueError("phi and pi must be non-empty 1-D arrays of equal length")
        if np.any(phi <= 0.0) or np.any(np.diff(phi) <= 0.0):
            raise ValueError("phi must be positive and strictly increasing")
        if np.any(pi <= 0.0):
            raise ValueError("masses must be positive")
        if not (0.0 <= self.gamma <= 1.0) or not (0.0 < self.theta_bar <= 1.0) or self.s <= 0:
            raise ValueError("gamma in [0,1], theta_bar in (0,1], s > 0 required")

    @property
    def K(self) -> int:
        return self.phi.size

    @property
    def const(self) -> float:
        """theta_bar^2 (1 - theta_bar)(1 - gamma) s."""
        return self.theta_bar**2 * (1.0 - self.theta_bar) * (1.0 - self.gamma) * self.s

    @property
    def rho_b(self) -> float:
        return self.gap / (self.gamma * self.theta_bar) if self.gamma > 0.0 else math.inf

    def to_dict(self) -> dict[str, Any]:
        return {
            "phi": self.phi.tolist(),
            "pi": self.pi.tolist(),
            "gamma": self.gamma,
            "s": self.s,
            "theta_bar": self.theta_bar,
            "gap": self.gap,
        }


def _check_index(m: int, inst: DiscreteInstance) -> None:
    if not (1 <= m <= inst.K):
        raise ValueError(f"index m={m} outside 1..{inst.K}")


def q_disc(m: int, z: float, inst: DiscreteInstance) -> float:
    """Q(m, z) = sum_{k<=m} pi phi + sqrt(phi_m / z) sum_{k>m} pi sqrt(phi)."""
    _check_index(m, inst)
    lo = inst.pi[:m] @ inst.phi[:m]
    hi = inst.pi[m:] @ np.sqrt(inst.phi[m:])
    return float(lo + math.sqrt(inst.phi[m - 1] / z) * hi)


def r_disc(m: int, z: float, inst: DiscreteInstance) -> float:
    """R(m, z) = 2 gamma (z/phi_m sum_{k<=m} pi phi + sum_{k>m} pi) + theta^2 (1-theta)(1-gamma) s."""
    _check_index(m, inst)
    lo = inst.pi[:m] @ inst.phi[:m]
    hi = inst.pi[m:].sum()
    return float(2.0 * inst.gamma * (z / inst.phi[m - 1] * lo + hi) + inst.const)


def q_curve(inst: DiscreteInstance) -> FloatArray:
    """Q(m, 1) for m = 1..K."""
    lo = np.cumsum(inst.pi * inst.phi)
    sq = inst.pi * np.sqrt(inst.phi)
    hi = np.r_[np.cumsum(sq[::-1])[::-1][1:], 0.0]
    return lo + np.sqrt(inst.phi) * hi


def r_curve(inst: DiscreteInstance) -> FloatArray:
    """R(m, 1) for m = 1..K."""
    lo = np.cumsum(inst.pi * inst.phi)
    hi = np.r_[np.cumsum(inst.pi[::-1])[::-1][1:], 0.0]
    return 2.0 * inst.gamma * (lo / inst.phi + hi) + inst.const


@dataclass
class DiscreteSaddle:
    A: FloatArray
    p: FloatArray
    lam: float
    case: str
    m_star: int | None = None
    z_star: float | None = None
    k_prime: int | None = None
    z_prime: float | None = None
    k_star: int | None = None
    z_tilde: float | None = None
    notes: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["A"] = np.asarray(self.A).tolist()
        d["p"] = np.asarray(self.p).tolist()
        return d


def game_value(A: npt.ArrayLike, p: npt.ArrayLike, inst: DiscreteInstance) -> float:
    A = np.asarray(A, dtype=float)
    p = np.asarray(p, dtype=float)
    th, g = inst.theta_bar, inst.gamma
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(p > 0.0, p / A, 0.0)
    S = inst.pi @ p
    return float(g / (inst.s * th**2) * (inst.pi @ ratio - S**2 / th) + (1.0 - g) * (1.0 - th) * (1.0 - S / th))


def adversary_marginal(A: npt.ArrayLike, p: npt.ArrayLike, inst: DiscreteInstance) -> FloatArray:
    """gamma/(s th^2)(1/A_k - 2 sum pi p / th) - (1 - th)(1 - gamma)/th, the sign that drives p_k."""
    A = np.asarray(A, dtype=float)
    th, g = inst.theta_bar, inst.gamma
    S = inst.pi @ np.asarray(p, dtype=float)
    with np.errstate(divide="ignore"):
        inv = 1.0 / A
    return g / (inst.s * th**2) * (inv - 2.0 * S / th) - (1.0 - th) * (1.0 - g) / th


def _bisect_z(func, target: float, lo: float, hi: float, tol: float = 1e-12) -> float:
    """z in [lo, hi] with func(z) = target for monotone func."""
    return bisect_scalar(lambda z: target - func(z), lo, hi, xtol=tol)


def _lam(p: FloatArray, inst: DiscreteInstance, spend: float) -> float:
    root = inst.pi @ np.sqrt(p * inst.phi)
    return inst.gamma * root**2 / (inst.s * inst.theta_bar**2 * spend**2)


def solve_discrete(inst: DiscreteInstance) -> DiscreteSaddle:
    """Closed-form saddle point, dispatched on rho_B against Q(m,1)/R(m,1)."""
    L = inst.gap
    if not L > 0.0:
        raise PreconditionError(f"budget residual: B/s - l = {L} must be positive")
    phi, pi, K = inst.phi, inst.pi, inst.K
    total = float(pi @ phi)
    if not total > L:
        raise PreconditionError(
            f"no-trivial-solution assumption: sum pi phi = {total} must exceed B/s - l = {L}"
        )
    rho = inst.rho_b
    Q1, R1 = q_curve(inst), r_curve(inst)
    ratio = Q1 / R1
    th, g = inst.theta_bar, inst.gamma
    sq = np.sqrt(phi)

    if rho < ratio[0]:
        A = L / (sq * (pi @ sq))
        p = np.ones(K)
        return DiscreteSaddle(A, p, _lam(p, inst, L), "1")

    if rho >= ratio[-1]:
        chi = L / total
        A = np.full(K, chi)
        cap = total / inst.const if inst.const > 0.0 else math.inf
        if g > 0.0 and cap > rho:
            # R(K, z) is linear in z and Q(K, z) does not depend on z
            z_t = (total / rho - inst.const) * phi[-1] / (2.0 * g * total)
            z_t = min(max(z_t, 0.0), 1.0)
            p = z_t * phi / phi[-1]
            return DiscreteSaddle(A, p, _lam(p, inst, L), "3", z_tilde=z_t)
        return DiscreteSaddle(A, np.zeros(K), 0.0, "3", z_tilde=0.0, notes={"non_unique_A": True})

    # Case 2: Q(m*,1)/R(m*,1) <= rho < Q(m*+1,1)/R(m*+1,1)
    m = int(np.searchsorted(ratio, rho, side="right"))  # 1-based m*
    m = min(max(m, 1), K - 1)
    z_lo = phi[m - 1] / phi[m]
    z_star = _bisect_z(lambda z: q_disc(m, z, inst) / r_disc(m, z, inst), rho, z_lo, 1.0)
    chi = L / q_disc(m, z_star, inst)
    if chi <= 1.0:
        p = np.where(np.arange(1, K + 1) <= m, z_star * phi / phi[m - 1], 1.0)
        head = pi[:m] @ phi[:m]
        tail = pi[m:] @ sq[m:]
        A = np.where(np.arange(1, K + 1) <= m, chi, (L - chi * head) / (sq * tail))
        return DiscreteSaddle(A, p, _lam(p, inst, L), "2a", m_star=m, z_star=z_star)

    target = g * th
    # k' with R(k'+1,1) < gamma th <= R(k',1); R(.,1) is decreasing
    below = np.flatnonzero(R1 < target)
    kp = int(below[0]) if below.size else K  # 1-based k'
    kp = min(max(kp, 1), K)
    if kp < K:
        z_lo = phi[kp - 1] / phi[kp]
        z_p = _bisect_z(lambda z: r_disc(kp, z, inst), target, z_lo, 1.0)
    else:
        z_p = (target - inst.const) * phi[-1] / (2.0 * g * total)
    ks = int(np.flatnonzero(Q1 < L)[-1]) + 1  # k* = max{k: Q(k,1) < B/s - l}
    idx = np.arange(1, K + 1)
    p = np.where(idx <= kp, z_p * phi / phi[kp - 1], 1.0)
    head = pi[:ks] @ phi[:ks]
    tail = pi[ks:] @ sq[ks:]
    A = np.where(idx <= ks, 1.0, (L - head) / (sq * tail))
    lam = g * tail**2 / (inst.s * th**2 * (L - head) ** 2)
    return DiscreteSaddle(A, p, lam, "2b", m_star=m, z_star=z_star, k_prime=kp, z_prime=z_p, k_star=ks)


@dataclass
class SaddleVerdict:
    passed: bool
    lemma3: list[dict[str, Any]]
    lemma4: list[dict[str, Any]]

    def to_dict(self) -> dict[str, Any]:
        return {"passed": self.passed, "lemma3": self.lemma3, "lemma4": self.lemma4}


def verify_saddle(saddle: DiscreteSaddle, inst: DiscreteInstance, tol: float = 1e-8) -> SaddleVerdict:
    """Check the adversary sign conditions and the analyst water-filling form.

    Tolerances are relative to the magnitude of the terms being compared.
    """
    A = np.asarray(saddle.A, dtype=float)
    p = np.asarray(saddle.p, dtype=float)
    th, g = inst.theta_bar, inst.gamma
    l3: list[dict[str, Any]] = []
    l4: list[dict[str, Any]] = []
    marg = adversary_marginal(A, p, inst)
    S = inst.pi @ p
    scale = np.maximum.reduce([
        g / (inst.s * th**2) / np.maximum(A, 1e-300),
        np.full(inst.K, 2.0 * g * S / (inst.s * th**3)),
        np.full(inst.K, (1.0 - th) * (1.0 - g) / th),
    ])
    scale = np.maximum(scale, 1e-300)
    for k in range(inst.K):
        mk, sk = marg[k], tol * scale[k]
        if p[k] >= 1.0 - tol:
            ok = mk >= -sk
            rule = "p=1 needs marginal >= 0"
        elif p[k] <= tol:
            ok = mk <= sk
            rule = "p=0 needs marginal <= 0"
        else:
            ok = abs(mk) <= sk
            rule = "0<p<1 needs marginal = 0"
        if not ok:
            l3.append({"k": k, "p": float(p[k]), "marginal": float(mk), "rule": rule})
    if np.any(A < -tol) or np.any(A > 1.0 + tol) or np.any(p < -tol) or np.any(p > 1.0 + tol):
        l4.append({"k": None, "rule": "strategies must lie in [0,1]"})
    spend = float(inst.pi @ (inst.phi * A))
    if p.max() <= tol:
        if spend > inst.gap * (1.0 + tol):
            l4.append({"k": None, "rule": "budget exceeded", "spend": spend, "gap": inst.gap})
    else:
        if abs(spend - inst.gap) > tol * inst.gap:
            l4.append({"k": None, "rule": "budget must bind", "spend": spend, "gap": inst.gap})
        lam = saddle.lam
        if not lam > 0.0:
            l4.append({"k": None, "rule": "lambda must be positive", "lambda": lam})
        else:
            target = np.minimum(1.0, np.sqrt(g * p / (inst.s * th**2 * lam * inst.phi)))
            for k in np.flatnonzero(np.abs(A - target) > tol * np.maximum(1.0, target)):
                l4.append({"k": int(k), "rule": "A_k = min(1, sqrt(gamma p / (s th^2 lam phi)))",
                           "A": float(A[k]), "expected": float(target[k])})
    return SaddleVerdict(not l3 and not l4, l3, l4)


# --- independent oracle -------------------------------------------------------


def analyst_best_response(p: npt.ArrayLike, inst: DiscreteInstance) -> FloatArray:
    """Exact water-filling: A_k = min(1, t sqrt(p_k/phi_k)) with t set so the budget binds."""
    p = np.asarray(p, dtype=float)
    phi, pi, L = inst.phi, inst.pi, inst.gap
    w = pi * phi
    if w.sum() <= L:
        return np.ones(inst.K)
    if inst.gamma == 0.0 or p.max() <= 0.0:
        return np.full(inst.K, L / w.sum())
    u = np.sqrt(np.maximum(p, 0.0) / phi)
    pos = u > 0.0
    # spend(t) = sum_k w_k min(1, t u_k) is piecewise linear with kinks at t = 1/u_k
    kinks = np.sort(1.0 / u[pos])
    order = np.argsort(-u)  # largest u saturates first
    capped = 0.0
    for j, t_hi in enumerate(np.r_[kinks, np.inf]):
        sat = order[:j]
        free = order[j:]
        free = free[pos[free]]
        slope = w[free] @ u[free]
        capped = w[sat].sum()
        t = (L - capped) / slope if slope > 0.0 else np.inf
        if t <= t_hi:
            return np.minimum(1.0, t * u)
    return np.ones(inst.K)


def _adversary_value_and_grad(p: FloatArray, inst: DiscreteInstance) -> tuple[float, FloatArray]:
    A = analyst_best_response(p, inst)
    val = game_value(A, p, inst)
    grad = inst.pi * adversary_marginal(A, p, inst)
    return val, grad


def _polish(p: FloatArray, inst: DiscreteInstance, floor: float, sweeps: int = 50) -> FloatArray:
    """Refine a near-optimal p: snap coordinates whose gradient pushes into a bound,
    then solve gradient = 0 on the remaining coordinates."""
    p = np.clip(p, floor, 1.0)
    scale = inst.s * inst.theta_bar**2 / inst.gamma
    for _ in range(sweeps):
        grad = _adversary_value_and_grad(p, inst)[1] * scale
        at_top = (p >= 1.0 - 1e-9) & (grad >= 0.0)
        at_bot = (p <= 1e-9) & (grad <= 0.0)
        free = ~(at_top | at_bot)
        p = np.where(at_top, 1.0, np.where(at_bot, floor, p))
        if not free.any():
            return p

        def resid(x: FloatArray) -> FloatArray:
            q = p.copy()
            q[free] = np.clip(x, floor, 1.0)
            return _adversary_value_and_grad(q, inst)[1][free] / inst.pi[free] * scale

        sol = optimize.root(resid, p[free], method="hybr", options={"xtol": 1e-15})
        q = p.copy()
        q[free] = np.clip(sol.x, floor, 1.0)
        if np.max(np.abs(q - p)) < 1e-15:
            return q
        before = _adversary_value_and_grad(p, inst)[0]
        if _adversary_value_and_grad(q, inst)[0] < before - 1e-15 * max(1.0, abs(before)):
            return p
        p = q
    return p


def brute_force_saddle(
    inst: DiscreteInstance,
    restarts: int = 5,
    seed: int = 0,
    tol: float = 1e-13,
    max_iter: int = 10_000,
) -> DiscreteSaddle:
    """Oracle that ignores the case analysis entirely.

    The analyst's exact best response (water-filling) is substituted into U,
    leaving a concave maximisation over p in [0, 1]^K whose gradient is the
    adversary marginal weighted by pi. It is solved by L-BFGS-B from several
    random starts; A* is the analyst best response to the best p found.
    """
    K = inst.K
    if K > 6:
        raise ValueError("brute_force_saddle is meant for K <= 6")
    if inst.gamma == 0.0:
        A = analyst_best_response(np.zeros(K), inst)
        p = np.zeros(K) if inst.theta_bar < 1.0 else np.ones(K)
        return DiscreteSaddle(A, p, 0.0, "oracle", notes={"gamma_zero": True})
    rng = np.random.default_rng(seed)
    scale = inst.s * inst.theta_bar**2 / inst.gamma
    floor = 1e-14

    def neg(p: FloatArray) -> tuple[float, FloatArray]:
        v, gr = _adversary_value_and_grad(p, inst)
        return -v * scale, -gr * scale

    best: tuple[float, FloatArray] | None = None
    starts = [np.ones(K), np.full(K, 0.5)] + [rng.uniform(0.05, 1.0, K) for _ in range(max(restarts - 2, 0))]
    for x0 in starts:
        res = optimize.minimize(
            neg, x0, jac=True, method="L-BFGS-B", bounds=[(floor, 1.0)] * K,
            options={"ftol": 1e-16, "gtol": tol, "maxiter": max_iter, "maxcor": 30},
        )
        if not np.all(np.isfinite(res.x)):
            raise ConvergenceError("oracle diverged")
        x = _polish(res.x, inst, floor)
        fx = neg(x)[0]
        if best is None or fx < best[0]:
            best = (float(fx), x)
    assert best is not None
    p = best[1]
    p = np.where(p <= 10 * floor, 0.0, p)
    if p.max() <= 1e-9:
        A = np.full(K, min(1.0, inst.gap / float(inst.pi @ inst.phi)))
        return DiscreteSaddle(A, np.zeros(K), 0.0, "oracle", notes={"non_unique_A": True})
    A = analyst_best_response(p, inst)
    w = inst.pi * inst.phi
    free = A < 1.0
    if np.any(free & (p > 0)):
        k = np.flatnonzero(free & (p > 0))[0]
        lam = inst.gamma * p[k] / (inst.s * inst.theta_bar**2 * inst.phi[k] * A[k] ** 2)
    else:
        lam = 0.0
    return DiscreteSaddle(A, p, float(lam), "oracle", notes={"value": -best[0] / scale, "spend": float(w @ A)})


# --- discretisation of a continuous market ------------------------------------


def discretize_density(
    density: VirtualCostDensity, K: int, gamma: float, s: float, theta_bar: float, gap: float
) -> DiscreteInstance:
    """Equal-width panels of [phi_min, phi_max]; pi_k = panel mass, phi_k = panel midpoint.

    Panels carrying no mass are dropped (they cannot affect the game).
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    edges = np.linspace(density.phi_min, density.phi_max, K + 1)
    pi = density.mass_between(edges[:-1], edges[1:])
    mid = 0.5 * (edges[:-1] + edges[1:])
    keep = pi > 0.0
    return DiscreteInstance(mid[keep], pi[keep], gamma, s, theta_bar, gap)


def discretize(
    config: MarketConfig, profile: ParticipationProfile, K: int, density: VirtualCostDensity | None = None
) -> DiscreteInstance:
    density = density or virtual_cost_density(config, profile)
    gap = budget_residual(config, profile).gap
    return discretize_density(density, K, config.gamma, config.population_size, profile.theta_bar, gap)


def continuous_gap(rule: AllocationRule, inst: DiscreteInstance, saddle: DiscreteSaddle) -> float:
    """Sup-norm distance between the continuous rule at phi_k and the discrete A_k."""
    return float(np.max(np.abs(rule.value_phi(inst.phi) - saddle.A)))


def convergence_table(
    config: MarketConfig,
    profile: ParticipationProfile,
    rule: AllocationRule,
    Ks: Sequence[int] = (10, 100, 1000),
    density: VirtualCostDensity | None = None,
) -> list[dict[str, Any]]:
    density = density or virtual_cost_density(config, profile)
    rows = []
    for K in Ks:
        inst = discretize(config, profile, K, density)
        sad = solve_discrete(inst)
        rows.append({"K": K, "case": sad.case, "sup_gap": continuous_gap(rule, inst, sad),
                     "mass": float(inst.pi.sum()), "theta_bar": profile.theta_bar})
    return rows
