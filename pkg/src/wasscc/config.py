"""Line-oriented instance configuration.

Grammar::

    # comment
    [section]
    key = value                 scalar (number, word, true/false)
    key = 1.0, 2.0, 3.0         vector
    key =                       matrix: indented comma rows follow
        1, 0, 0
        0, 1, 0

Parsing never stops at the first problem: every unknown key, type mismatch and
domain violation is collected with its line number and raised together as
:class:`ConfigError`.
"""

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


@dataclass
class Field:
    kind: str  # float | int | str | bool | vector | matrix
    default: Any = None
    check: Optional[Callable[[Any], Optional[str]]] = None
    choices: Tuple[str, ...] = ()
    doc: str = ""


def _open01(v):
    return None if 0.0 < v < 1.0 else "must lie in the open interval (0, 1)"


def _nonneg(v):
    return None if v >= 0 else "must be nonnegative"


def _pos(v):
    return None if v > 0 else "must be positive"


def _finite(v):
    return None if math.isfinite(v) else "must be finite"


def _half_open(v):
    return None if 0.0 < v < 0.5 else "must lie in (0, 0.5)"


def _nonneg_vec(v):
    return None if np.all(v >= 0) else "entries must be nonnegative"


def _pos_vec(v):
    return None if np.all(v > 0) else "entries must be positive"


MODES = ("pessimistic", "optimistic")

SCHEMA: Dict[str, Dict[str, Field]] = {
    "run": {
        "seed": Field("int", 0, _nonneg, doc="seed for every random stream"),
    },
    "coeff": {
        "epsilon": Field("vector", np.array([0.05, 0.15, 0.3]), lambda v: None if np.all((v > 0) & (v < 1)) else "entries must lie in (0, 1)"),
        "delta": Field("vector", np.array([0.005, 0.01]), _pos_vec),
    },
    "watershed": {
        "eps_min": Field("float", 0.001, _half_open),
        "eps_max": Field("float", 0.499, _half_open),
        "points": Field("int", 50, lambda v: None if v >= 2 else "must be at least 2"),
        "verify": Field("bool", True),
    },
    "portfolio": {
        "preset": Field("str", "none", choices=("none", "market_factor")),
        "mean_returns": Field("vector"),
        "covariance": Field("matrix"),
        "target_return": Field("float", 1.0, _finite),
        "risk_free": Field("float", math.nan),
        "epsilon": Field("float", 0.15, _open01),
        "delta": Field("float", 0.0, _nonneg),
        "mode": Field("str", "pessimistic", choices=MODES),
        "allow_nonconvex": Field("bool", False),
        "tol": Field("float", 1e-6, _pos),
    },
    "production": {
        "preset": Field("str", "none", choices=("none", "random")),
        "n": Field("int", 10, _pos),
        "m": Field("int", 5, _pos),
        "coverage": Field("matrix"),
        "cost": Field("vector", check=_nonneg_vec),
        "capacity": Field("float", 200.0, _pos),
        "mu": Field("vector"),
        "sigma": Field("vector", check=_pos_vec),
        "spread": Field("float", 0.1, _pos),
        "epsilon": Field("float", 0.15, _open01),
        "delta": Field("float", 0.0, _nonneg),
    },
    "envelope": {
        "budgets": Field("vector", check=_nonneg_vec),
        "budget_min": Field("float", 0.0, _nonneg),
        "budget_max": Field("float", math.nan),
        "points": Field("int", 15, lambda v: None if v >= 1 else "must be at least 1"),
    },
    "certify": {
        "instance": Field("str", "portfolio", choices=("portfolio", "production")),
        "mode": Field("str", "pessimistic", choices=MODES),
        "x": Field("vector"),
        "allocation": Field("str", ""),
        "n_samples": Field("int", 100_000, lambda v: None if v >= 10 else "must be at least 10"),
    },
}


@dataclass
class Config:
    values: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    lines: Dict[Tuple[str, str], int] = field(default_factory=dict)

    def get(self, section, key):
        sec = self.values.get(section, {})
        if key in sec:
            return sec[key]
        return SCHEMA[section][key].default

    def has(self, section, key):
        return key in self.values.get(section, {})

    def resolved(self):
        """Every schema key with its effective value (for the metadata sidecar)."""
        out = {}
        for section, fields in SCHEMA.items():
            out[section] = {}
            for key in fields:
                v = self.get(section, key)
                if isinstance(v, np.ndarray):
                    v = v.tolist()
                elif isinstance(v, float) and not math.isfinite(v):
                    v = None
                out[section][key] = v
        return out


def _parse_value(kind, raw, rows, choices):
    if kind == "matrix":
        if raw:
            rows = [raw] + rows
        if not rows:
            raise ValueError("expected matrix rows on the following indented lines")
        data = [[float(t) for t in r.split(",")] for r in rows]
        if len({len(r) for r in data}) != 1:
            raise ValueError("matrix rows have different lengths")
        return np.array(data)
    if rows:
        raise ValueError("unexpected indented continuation lines")
    if kind == "vector":
        return np.array([float(t) for t in raw.split(",") if t.strip()])
    if kind == "float":
        return float(raw)
    if kind == "int":
        v = float(raw)
        if v != int(v):
            raise ValueError("expected an integer")
        return int(v)
    if kind == "bool":
        low = raw.lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise ValueError("expected true or false")
    if kind == "str":
        if choices and raw not in choices:
            raise ValueError(f"expected one of {', '.join(choices)}")
        return raw
    raise AssertionError(kind)


def _assign(cfg, errors, section, key, raw, rows, lineno):
    where = f"line {lineno}" if lineno else "override"
    if section not in SCHEMA:
        errors.append(f"{where}: unknown section [{section}]")
        return
    spec = SCHEMA[section].get(key)
    if spec is None:
        errors.append(f"{where}: unknown key '{key}' in [{section}]")
        return
    try:
        value = _parse_value(spec.kind, raw, rows, spec.choices)
    except ValueError as exc:
        errors.append(f"{where}: {section}.{key}: type mismatch ({exc})")
        return
    if spec.check is not None:
        problem = spec.check(value)
        if problem:
            errors.append(f"{where}: {section}.{key} = {raw or '<matrix>'} {problem}")
            return
    cfg.values.setdefault(section, {})[key] = value
    cfg.lines[(section, key)] = lineno


def parse_config(text, overrides=()):
    """Parse config text plus ``section.key=value`` overrides into a :class:`Config`."""
    cfg = Config()
    errors: List[str] = []
    section = None
    pending = None  # (section, key, raw, rows, lineno)

    def flush():
        nonlocal pending
        if pending is not None:
            _assign(cfg, errors, *pending[:3], pending[3], pending[4])
            pending = None

    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].rstrip()
        if not stripped.strip():
            continue
        if line[:1] in (" ", "\t"):
            if pending is None:
                errors.append(f"line {lineno}: indented line outside a matrix block")
            else:
                pending[3].append(stripped.strip())
            continue
        flush()
        s = stripped.strip()
        if s.startswith("["):
            if not s.endswith("]"):
                errors.append(f"line {lineno}: malformed section header")
                continue
            section = s[1:-1].strip()
            if section not in SCHEMA:
                errors.append(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in s:
            errors.append(f"line {lineno}: expected 'key = value'")
            continue
        key, raw = (p.strip() for p in s.split("=", 1))
        if section is None:
            errors.append(f"line {lineno}: key '{key}' before any [section]")
            continue
        if section not in SCHEMA:
            continue
        pending = (section, key, raw, [], lineno)
    flush()
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            errors.append(f"override '{item}': expected section.key=value")
            continue
        lhs, raw = item.split("=", 1)
        sec, key = lhs.strip().split(".", 1)
        _assign(cfg, errors, sec, key, raw.strip(), [], 0)
    if errors:
        raise ConfigError(errors)
    return cfg


# ---------------------------------------------------------------------------
# instance builders

def build_portfolio(cfg):
    from .individual import AmbiguitySpec, PortfolioInstance, market_factor_portfolio

    eps = cfg.get("portfolio", "epsilon")
    delta = cfg.get("portfolio", "delta")
    target = cfg.get("portfolio", "target_return")
    if cfg.get("portfolio", "preset") == "market_factor":
        return market_factor_portfolio(eps, delta, target)
    errors = []
    mean = cfg.get("portfolio", "mean_returns")
    cov = cfg.get("portfolio", "covariance")
    if mean is None:
        errors.append("portfolio.mean_returns is required without a preset")
    if cov is None:
        errors.append("portfolio.covariance is required without a preset")
    if errors:
        raise ConfigError(errors)
    if cov.shape != (mean.size, mean.size):
        raise ConfigError([f"line {cfg.lines.get(('portfolio', 'covariance'), 0)}: covariance must be {mean.size}x{mean.size}"])
    rf = cfg.get("portfolio", "risk_free")
    try:
        return PortfolioInstance(mean, cov, target, AmbiguitySpec(eps, delta), None if math.isnan(rf) else rf)
    except ValueError as exc:
        raise ConfigError([f"portfolio: {exc}"]) from exc


def build_production(cfg):
    from .individual import AmbiguitySpec
    from .joint import ProductionInstance, random_production_instance

    g = lambda k: cfg.get("production", k)  # noqa: E731
    if g("preset") == "random":
        return random_production_instance(cfg.get("run", "seed"), g("n"), g("m"), g("capacity"), g("epsilon"), g("delta"), g("spread"))
    errors = [f"production.{k} is required without a preset" for k in ("coverage", "cost", "mu") if g(k) is None]
    if errors:
        raise ConfigError(errors)
    sigma = g("sigma") if g("sigma") is not None else g("spread") * g("mu")
    try:
        return ProductionInstance(g("coverage"), g("cost"), g("capacity"), g("mu"), sigma, AmbiguitySpec(g("epsilon"), g("delta")))
    except ValueError as exc:
        raise ConfigError([f"production: {exc}"]) from exc
