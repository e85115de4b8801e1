"""``leakmarket`` command-line front end.

Exit codes: 0 ok, 2 config error, 3 infeasible budget, 4 audit failure,
5 regime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .allocation import AllocationRule, CallableAllocation, check_low_budget
from .discrete import convergence_table
from .errors import LeakMarketError
from .io import Scenario, load_scenario, write_csv, write_json
from .market import CorrelationStrength, MarketConfig
from .payment import Mechanism, build_mechanism, expected_total_payment, participation_audit, truthfulness_audit
from .quadrature import integrate
from .simulator import estimate_bias_variance, verify_equilibrium_empirical
from .tradeoff import adversary_best_response, full_participation_check, worst_case_tradeoff

AXES = ("budget", "alpha_intra", "alpha_inter", "theta_i")
EXIT_AUDIT = 4
FIXED_A = 0.5  # selection probability held fixed in theta_i sweeps


@dataclasses.dataclass
class ScenarioRequest:
    config: Path
    command: str
    out: Path
    seed: int = 0
    reps: int = 10_000
    axis: str | None = None
    start: float | None = None
    stop: float | None = None
    steps: int = 10
    group: int = 0

    def __post_init__(self) -> None:
        if self.command == "sweep":
            if self.axis not in AXES:
                raise SystemExit(f"--axis must be one of {AXES}")
            if self.start is None or self.stop is None or self.steps < 2:
                raise SystemExit("sweep needs --from, --to and --steps >= 2")


def _stamp(sc: Scenario, seed: int) -> dict[str, Any]:
    return {"config_hash": sc.digest, "seed": seed}


def _solve(sc: Scenario) -> Mechanism:
    return build_mechanism(sc.config, sc.config.profile(sc.rates))


def _cmd_solve(sc: Scenario, req: ScenarioRequest) -> int:
    mech = _solve(sc)
    stamp = _stamp(sc, req.seed)
    rule = mech.allocation
    totals = expected_total_payment(mech)
    payload = {
        **stamp,
        "allocation": rule.header() if isinstance(rule, AllocationRule) else {"structure": mech.structure},
        "thresholds": list(mech.profile.thresholds),
        "rates": list(mech.profile.rates),
        "leakage": list(mech.payment.b),
        "kappa": list(mech.payment.kappa),
        "expected_total_payment": totals.direct,
        "virtual_cost_spend": totals.virtual,
        "budget": sc.config.budget,
        "assumptions": sc.report.to_dict(),
    }
    write_json(req.out / "mechanism.json", payload)
    write_csv(req.out / "allocation.csv", ("group", "c", "A"), (r[:3] for r in mech.table()), stamp)
    write_csv(req.out / "payment.csv", ("group", "c", "P", "A"), mech.table(), stamp)
    return 0


def _cmd_audit(sc: Scenario, req: ScenarioRequest) -> int:
    mech = _solve(sc)
    truth = truthfulness_audit(mech, samples=100, seed=req.seed)
    part = participation_audit(mech)
    totals = expected_total_payment(mech)
    B = sc.config.budget
    budget_ok = totals.identity_gap <= 1e-6 * B
    if isinstance(mech.allocation, AllocationRule) and mech.allocation.case in ("1", "2a", "2b"):
        budget_ok &= abs(totals.direct - B) <= 1e-6 * B
    passed = truth.passed and part.passed and budget_ok
    write_json(req.out / "audit.json", {
        **_stamp(sc, req.seed),
        "passed": passed,
        "truthfulness": truth.to_dict(),
        "participation": part.to_dict(),
        "budget": {"passed": budget_ok, "expected_total_payment": totals.direct, "virtual": totals.virtual,
                   "identity_gap": totals.identity_gap, "budget": B},
    })
    return 0 if passed else EXIT_AUDIT


def _cmd_simulate(sc: Scenario, req: ScenarioRequest) -> int:
    mech = _solve(sc)
    adv = adversary_best_response(mech)
    rep = estimate_bias_variance(sc.config, mech, adv, req.reps, seed=req.seed)
    eq = verify_equilibrium_empirical(sc.config, mech, replications=max(1, req.reps // 100), seed=req.seed)
    write_json(req.out / "simulation.json", {
        **_stamp(sc, req.seed), "report": rep.to_dict(), "equilibrium": eq.to_dict(),
        "tradeoff": worst_case_tradeoff(mech, adversary=adv).to_dict(),
    })
    return 0 if eq.passed else EXIT_AUDIT


def _cmd_full(sc: Scenario, req: ScenarioRequest) -> int:
    rep = full_participation_check(sc.config)
    write_json(req.out / "full_participation.json", {**_stamp(sc, req.seed), **rep.to_dict()})
    return EXIT_AUDIT if rep.derivative_scan_ok is False else 0


def _cmd_oracle(sc: Scenario, req: ScenarioRequest) -> int:
    mech = _solve(sc)
    if not isinstance(mech.allocation, AllocationRule):
        return EXIT_AUDIT
    rows = convergence_table(sc.config, mech.profile, mech.allocation)
    gaps = [r["sup_gap"] for r in rows]
    monotone = all(b < a for a, b in zip(gaps, gaps[1:]))
    write_csv(req.out / "oracle.csv", ("K", "case", "sup_gap", "continuous_case"),
              ((r["K"], r["case"], r["sup_gap"], mech.allocation.case) for r in rows), _stamp(sc, req.seed))
    return 0 if monotone else EXIT_AUDIT


# --- sweeps ---------------------------------------------------------------------


def _with_axis(cfg: MarketConfig, rates: tuple[float, ...], axis: str, value: float, g: int) -> tuple[MarketConfig, tuple[float, ...]]:
    if axis == "budget":
        return cfg.replace(budget=value), rates
    if axis == "theta_i":
        r = list(rates)
        r[g] = value
        return cfg, tuple(r)
    groups = list(cfg.groups)
    corr = groups[g].correlation
    corr = CorrelationStrength(value, corr.inter) if axis == "alpha_intra" else CorrelationStrength(corr.intra, value)
    groups[g] = dataclasses.replace(groups[g], correlation=corr)
    return cfg.replace(groups=tuple(groups)), rates


def _group_payment(mech: Mechanism, g: int) -> float:
    """s q_g E[transfer | group g], over group g's participants."""
    d = mech.config.groups[g].cost_dist
    tau = mech.profile.thresholds[g]
    val = integrate(lambda c: mech.payment.transfer(g, c) * d.pdf(c), d.c_min, tau,
                    breakpoints=[b for b in mech.allocation.breakpoints(g) if d.c_min < b < tau])
    return mech.config.population_size * mech.config.groups[g].mass * val


def _monotone(vals: Sequence[float], direction: int, rtol: float = 1e-9) -> bool:
    v = np.asarray([x for x in vals if np.isfinite(x)])
    slack = rtol * np.maximum(np.abs(v[:-1]), 1.0)
    return bool(np.all(direction * np.diff(v) <= slack))


def sweep_property_curves(sc: Scenario, req: ScenarioRequest) -> tuple[list[dict[str, Any]], dict[str, Any]]:
    """Re-solve along one axis; tabulate group payment, payment at a fixed cost and T.

    For correlation axes the payment is also recomputed with the allocation of
    the first axis point held fixed, which is the setting of the
    correlation-monotonicity property.
    """
    cfg0, rates0, g = sc.config, sc.rates, req.group
    values = np.linspace(req.start, req.stop, req.steps)
    d = cfg0.groups[g].cost_dist
    c_fixed = float(d.quantile(cfg0.theta_min / 2.0))
    base_alloc = None
    base_status = "ok"
    if req.axis in ("alpha_intra", "alpha_inter"):
        c0, r0 = _with_axis(cfg0, rates0, req.axis, float(values[0]), g)
        try:
            base_alloc = build_mechanism(c0, c0.profile(r0)).allocation
        except LeakMarketError as exc:
            base_status = f"{type(exc).__name__}: {exc}"

    def point(v: float) -> dict[str, Any]:
        row: dict[str, Any] = {"axis": req.axis, "value": float(v), "status": "ok"}
        try:
            cfg, rates = _with_axis(cfg0, rates0, req.axis, float(v), g)
            prof = cfg.profile(rates)
            mech = build_mechanism(cfg, prof)
            rep = worst_case_tradeoff(mech)
            row.update(structure=mech.structure, case=getattr(mech.allocation, "case", ""),
                       T=rep.combined, T_reduced=rep.reduced_objective if rep.reduced_objective is not None else float("nan"),
                       low_budget=bool(check_low_budget(cfg, prof)),
                       group_payment=_group_payment(mech, g),
                       payment_at_cost=float(mech.payment.value(g, np.array([c_fixed]))[0]))
            if req.axis == "theta_i":
                flat = CallableAllocation(tuple((lambda c: np.full(np.shape(c), FIXED_A)) for _ in cfg.groups),
                                          prof.thresholds)
                row["group_payment_fixed_A"] = _group_payment(build_mechanism(cfg, prof, allocation=flat), g)
            if base_alloc is not None:
                fixed = build_mechanism(cfg, prof, allocation=base_alloc)
                row["payment_at_cost_fixed_A"] = float(fixed.payment.value(g, np.array([c_fixed]))[0])
                row["group_payment_fixed_A"] = _group_payment(fixed, g)
        except LeakMarketError as exc:
            row.update(status=f"{type(exc).__name__}: {exc}")
        return row

    # points are independent; rows come back in axis order and are merged here
    with ThreadPoolExecutor(max_workers=min(8, len(values))) as pool:
        rows = list(pool.map(point, values))

    ok = [r for r in rows if r["status"] == "ok"]
    summary: dict[str, Any] = {"axis": req.axis, "group": g, "fixed_cost": c_fixed, "points": len(rows),
                               "failed_points": len(rows) - len(ok), "assertions": {}, "exhibits": {},
                               "fixed_allocation": base_status if req.axis.startswith("alpha") else f"A = {FIXED_A}"}
    if req.axis == "budget":
        summary["assertions"]["T_non_increasing"] = _monotone([r["T"] for r in ok], +1)
    elif base_alloc is not None:
        series = [r["payment_at_cost_fixed_A"] for r in ok]
        if cfg0.privacy_model.g_family == "offset":
            summary["assertions"]["payment_non_increasing"] = _monotone(series, +1)
        summary["exhibits"]["resolved_payment_non_monotone"] = not (
            _monotone([r["payment_at_cost"] for r in ok], +1) or _monotone([r["payment_at_cost"] for r in ok], -1))
    elif req.axis == "theta_i":
        for key in ("group_payment", "group_payment_fixed_A"):
            gp = [r[key] for r in ok]
            summary["exhibits"][f"{key}_non_monotone"] = not (_monotone(gp, +1) or _monotone(gp, -1))
    return rows, summary


def _cmd_sweep(sc: Scenario, req: ScenarioRequest) -> int:
    rows, summary = sweep_property_curves(sc, req)
    keys: list[str] = []
    for r in rows:
        keys.extend(k for k in r if k not in keys)
    stamp = _stamp(sc, req.seed)
    write_csv(req.out / "sweep.csv", keys, ([r.get(k, "") for k in keys] for r in rows), stamp)
    write_json(req.out / "sweep.json", {**stamp, **summary})
    return 0 if all(summary["assertions"].values()) else EXIT_AUDIT


COMMANDS = {
    "solve": _cmd_solve,
    "audit": _cmd_audit,
    "simulate": _cmd_simulate,
    "sweep": _cmd_sweep,
    "check-full-participation": _cmd_full,
    "oracle": _cmd_oracle,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="leakmarket", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reps", type=int, default=10_000)
    p.add_argument("--axis", choices=AXES)
    p.add_argument("--from", dest="start", type=float)
    p.add_argument("--to", dest="stop", type=float)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--group", type=int, default=0, help="group index for theta_i and correlation axes")
    return p


def run_scenario(req: ScenarioRequest) -> int:
    try:
        sc = load_scenario(req.config)
        req.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[req.command](sc, req)
    except LeakMarketError as exc:
        print(f"leakmarket: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"leakmarket: cannot read config: {exc}", file=sys.stderr)
        return 2


def main(argv: Sequence[str] | None = None) -> int:
    ns = build_parser().parse_args(argv)
    req = ScenarioRequest(ns.config, ns.command, ns.out, ns.seed, ns.reps, ns.axis, ns.start, ns.stop, ns.steps, ns.group)
    return run_scenario(req)


if __name__ == "__main__":
    raise SystemExit(main())
