"""JSON configuration files, content hashes and CSV/JSON writers."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .errors import ConfigError
from .market import (
    CorrelationStrength,
    CostDistribution,
    DataLink,
    GroupSpec,
    MarketConfig,
    PrivacyCostModel,
    ValidationReport,
    validate_assumptions,
)

_TOP = {"population_size", "budget", "gamma", "groups", "theta_min", "privacy_model", "epsilon", "profile"}
_REQUIRED_TOP = ("population_size", "budget", "gamma", "groups")
_PRIVACY = {"b_cap", "rho", "w0", "w1", "g_family", "kappa"}
_GROUP = {"mass", "cost_dist", "correlation", "data_link"}
_DIST = {"family", "c_min", "c_max", "params"}


def _number(obj: Mapping[str, Any], key: str, path: str, default: float | None = None) -> float:
    if key not in obj:
        if default is None:
            raise ConfigError("missing required field", f"{path}{key}")
        return default
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"expected a finite number, got {v!r}", f"{path}{key}")
    return float(v)


def _object(v: Any, path: str) -> Mapping[str, Any]:
    if not isinstance(v, Mapping):
        raise ConfigError("expected an object", path)
    return v


def _no_extra(obj: Mapping[str, Any], allowed: set[str], path: str) -> None:
    extra = sorted(set(obj) - allowed)
    if extra:
        raise ConfigError(f"unknown field(s) {extra}", path or "<root>")


def config_from_dict(data: Mapping[str, Any]) -> MarketConfig:
    """Build a MarketConfig from the documented schema, naming the offending field on error."""
    data = _object(data, "<root>")
    _no_extra(data, _TOP, "")
    for key in _REQUIRED_TOP:
        if key not in data:
            raise ConfigError("missing required field", key)
    s = data["population_size"]
    if isinstance(s, bool) or not isinstance(s, int) or s < 1:
        raise ConfigError("expected a positive integer", "population_size")

    pm = _object(data.get("privacy_model", {}), "privacy_model")
    _no_extra(pm, _PRIVACY, "privacy_model")
    fam = pm.get("g_family", "ratio")
    privacy = PrivacyCostModel(
        b_cap=_number(pm, "b_cap", "privacy_model.", 0.9),
        rho=_number(pm, "rho", "privacy_model.", 0.0),
        w0=_number(pm, "w0", "privacy_model.", 0.0),
        w1=_number(pm, "w1", "privacy_model.", 0.0),
        g_family=fam,
        kappa=_number(pm, "kappa", "privacy_model.", 0.0),
    )

    groups_raw = data["groups"]
    if not isinstance(groups_raw, list) or not groups_raw:
        raise ConfigError("expected a non-empty array", "groups")
    groups = []
    for k, g in enumerate(groups_raw):
        path = f"groups[{k}]."
        g = _object(g, f"groups[{k}]")
        _no_extra(g, _GROUP, f"groups[{k}]")
        cd = _object(g.get("cost_dist"), f"{path}cost_dist") if "cost_dist" in g else None
        if cd is None:
            raise ConfigError("missing required field", f"{path}cost_dist")
        _no_extra(cd, _DIST, f"{path}cost_dist")
        if "family" not in cd:
            raise ConfigError("missing required field", f"{path}cost_dist.family")
        params = _object(cd.get("params", {}), f"{path}cost_dist.params")
        ptuple = tuple((str(n), _number(params, n, f"{path}cost_dist.params.")) for n in sorted(params))
        corr = _object(g.get("correlation", {}), f"{path}correlation")
        link = _object(g.get("data_link", {}), f"{path}data_link")
        try:
            groups.append(GroupSpec(
                mass=_number(g, "mass", path),
                cost_dist=CostDistribution(str(cd["family"]), _number(cd, "c_min", f"{path}cost_dist."),
                                           _number(cd, "c_max", f"{path}cost_dist."), ptuple),
                correlation=CorrelationStrength(_number(corr, "intra", f"{path}correlation.", 0.0),
                                                _number(corr, "inter", f"{path}correlation.", 0.0)),
                data_link=DataLink(_number(link, "p0", f"{path}data_link.", 0.5),
                                   _number(link, "slope", f"{path}data_link.", 0.0)),
            ))
        except ConfigError as exc:
            field = exc.field or ""
            if field.startswith("groups["):
                raise
            raise ConfigError(str(exc).split(": ", 1)[-1], f"groups[{k}].{field}") from None
    return MarketConfig(
        population_size=s,
        budget=_number(data, "budget", ""),
        gamma=_number(data, "gamma", ""),
        groups=tuple(groups),
        privacy_model=privacy,
        theta_min=_number(data, "theta_min", "", 0.1),
        epsilon=_number(data, "epsilon", "", 0.0),
    )


def config_to_dict(config: MarketConfig) -> dict[str, Any]:
    pm = config.privacy_model
    return {
        "population_size": config.population_size,
        "budget": config.budget,
        "gamma": config.gamma,
        "theta_min": config.theta_min,
        "epsilon": config.epsilon,
        "privacy_model": {"b_cap": pm.b_cap, "rho": pm.rho, "w0": pm.w0, "w1": pm.w1,
                          "g_family": pm.g_family, "kappa": pm.kappa},
        "groups": [
            {
                "mass": g.mass,
                "cost_dist": {"family": g.cost_dist.family, "c_min": g.cost_dist.c_min,
                              "c_max": g.cost_dist.c_max, "params": dict(g.cost_dist.params)},
                "correlation": {"intra": g.correlation.intra, "inter": g.correlation.inter},
                "data_link": {"p0": g.data_link.p0, "slope": g.data_link.slope},
            }
            for g in config.groups
        ],
    }


def _parse(path: str | Path) -> dict[str, Any]:
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"JSON parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}", "<json>") from None


def load_config(path: str | Path) -> MarketConfig:
    return config_from_dict(_parse(path))


def save_config(config: MarketConfig, path: str | Path, profile: Sequence[float] | None = None) -> None:
    data = config_to_dict(config)
    if profile is not None:
        data["profile"] = [float(r) for r in profile]
    Path(path).write_text(json.dumps(data, indent=2) + "\n")


@dataclass
class Scenario:
    """A loaded configuration with its target profile and assumption report."""

    config: MarketConfig
    rates: tuple[float, ...]
    report: ValidationReport
    digest: str


def load_scenario(path: str | Path) -> Scenario:
    data = _parse(path)
    config = config_from_dict(data)
    rates = data.get("profile")
    if rates is None:
        raise ConfigError("missing required field (target participation rates)", "profile")
    if not isinstance(rates, list) or len(rates) != config.n_groups:
        raise ConfigError(f"expected {config.n_groups} rates", "profile")
    prof = tuple(_number({f"[{k}]": r}, f"[{k}]", "profile") for k, r in enumerate(rates))
    return Scenario(config, prof, validate_assumptions(config), config_hash(config, prof))


def config_hash(config: MarketConfig, rates: Sequence[float] | None = None) -> str:
    data = config_to_dict(config)
    if rates is not None:
        data["profile"] = [float(r) for r in rates]
    blob = json.dumps(data, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def default_config() -> tuple[MarketConfig, tuple[float, float]]:
    """Two uniform-cost groups used by the demos and CLI examples."""
    groups = (
        GroupSpec(0.5, CostDistribution.uniform(0.5, 1.5), CorrelationStrength(0.3, 0.1), DataLink(0.4, 0.4)),
        GroupSpec(0.5, CostDistribution.uniform(0.5, 2.0), CorrelationStrength(0.2, 0.2), DataLink(0.3, 0.6)),
    )
    cfg = MarketConfig(20, 4.0, 0.8, groups, PrivacyCostModel(rho=0.3, w0=0.01, w1=0.02))
    return cfg, (0.7, 0.6)


def write_json(path: Path, payload: Mapping[str, Any]) -> None:
    path.write_text(json.dumps(payload, indent=2, default=_jsonable, allow_nan=True) + "\n")


def _jsonable(v: Any) -> Any:
    if hasattr(v, "tolist"):
        return v.tolist()
    if hasattr(v, "to_dict"):
        return v.to_dict()
    raise TypeError(f"not serialisable: {type(v).__name__}")


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]], meta: Mapping[str, Any] | None = None) -> None:
    """CSV with a header row and repr-exact floats; ``meta`` values ride along as constant trailing columns."""
    meta = dict(meta or {})
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*header, *meta])
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, float) else x for x in (*row, *meta.values())])
