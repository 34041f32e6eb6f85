"""Strict JSON model configuration.

A config names a built-in model (``builtin-car``, ``builtin-crowd``) or
describes a ``custom`` one from named forms:

* constraints: ``affine`` (``A``, ``b``: ``A y + b >= 0``), ``separation``
  (``distance``, ``block``), ``disk`` (``radius``, ``center``);
* dynamics: ``linear`` with ``f(x, a) = A x + B a + c``;
* costs: ``terminal`` ``quadratic`` (``weight``, ``target``) and ``running``
  ``quadratic`` (``state_weight``, ``control_weight``, ``rate_weight``).

Unknown keys, duplicate keys and type mismatches are rejected with the
offending field and, when it can be located, its line.
"""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError

__all__ = [
    "MODELS",
    "ModelConfig",
    "SolverConfig",
    "CheckConfig",
    "ConvergeConfig",
    "CoderivConfig",
    "parse_config",
    "parse_config_text",
    "dump_config",
    "default_config",
]

MODELS = ("builtin-car", "builtin-crowd", "custom")
_CUSTOM_ONLY = ("dimensions", "constraints", "dynamics", "cost", "horizon", "x0", "r1", "r2", "u0",
                "coupling", "lipschitz_k", "growth_m")


@dataclass(frozen=True)
class SolverConfig:
    max_outer: int = 30
    max_inner: int = 3000
    penalty_init: float = 10.0
    penalty_growth: float = 10.0
    penalty_max: float = 1e10
    tol_kkt: float = 1e-8
    tol_feas: float = 1e-9
    fd_step: float = 1e-6
    gradient: str = "adjoint"
    optimize_u: bool = True
    no_contact: bool | None = None


@dataclass(frozen=True)
class CheckConfig:
    source: str = "analytic"
    lam: float = 1.0
    tol: float = 1e-6
    tol_continuous: float = 1e-4


@dataclass(frozen=True)
class ConvergeConfig:
    k_list: tuple = (25, 50, 100, 200)
    components: str = "xua"


@dataclass(frozen=True)
class CoderivConfig:
    lam: float = 1.0


@dataclass(frozen=True)
class ModelConfig:
    """Validated configuration; custom-model fields are ``None`` for built-ins."""

    model: str
    k: int = 100
    variant: str = "standard"
    case: str = "contact"
    controls: str = "analytic"
    solver: SolverConfig = field(default_factory=SolverConfig)
    check: CheckConfig = field(default_factory=CheckConfig)
    converge: ConvergeConfig = field(default_factory=ConvergeConfig)
    coderiv: CoderivConfig = field(default_factory=CoderivConfig)
    dimensions: dict | None = None
    constraints: dict | None = None
    dynamics: dict | None = None
    cost: dict | None = None
    horizon: float | None = None
    x0: tuple | None = None
    r1: float | None = None
    r2: float | None = None
    u0: tuple | None = None
    coupling: tuple | None = None
    lipschitz_k: float | None = None
    growth_m: float | None = None

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            val = getattr(self, f.name)
            if val is None:
                continue
            if hasattr(val, "__dataclass_fields__"):
                val = {k: v for k, v in asdict(val).items() if v is not None}
            out[f.name] = _plain(val)
        if self.model != "builtin-car":
            out.pop("variant", None)
        if self.model != "builtin-crowd":
            out.pop("case", None)
        return out


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


def _freeze(v):
    if isinstance(v, list):
        return tuple(_freeze(x) for x in v)
    if isinstance(v, dict):
        return {k: _freeze(x) for k, x in v.items()}
    return v


class _Ctx:
    def __init__(self, text: str):
        self.text = text

    def line_of(self, key: str):
        m = re.search(r'"%s"\s*:' % re.escape(key), self.text)
        return self.text.count("\n", 0, m.start()) + 1 if m else None

    def fail(self, key: str, message: str):
        raise ConfigError(message, field=key, line=self.line_of(key.split(".")[-1]))


def _no_dupes(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise ConfigError(f"duplicate key {k!r}", field=k)
        out[k] = v
    return out


def _num(ctx, key, v, *, positive=False, nonneg=False, integer=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        ctx.fail(key, f"{key} must be a number")
    if integer and not isinstance(v, int):
        ctx.fail(key, f"{key} must be an integer")
    if not np.isfinite(v):
        ctx.fail(key, f"{key} must be finite")
    if positive and v <= 0:
        ctx.fail(key, f"{key} must be positive")
    if nonneg and v < 0:
        ctx.fail(key, f"{key} must be nonnegative")
    return v


def _vec(ctx, key, v, length=None):
    if not isinstance(v, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
        ctx.fail(key, f"{key} must be a list of numbers")
    if length is not None and len(v) != length:
        ctx.fail(key, f"{key} must have length {length}, got {len(v)}")
    return tuple(float(x) for x in v)


def _mat(ctx, key, v, rows=None, cols=None):
    if not isinstance(v, list) or not v or not all(isinstance(r, list) for r in v):
        ctx.fail(key, f"{key} must be a nonempty list of rows")
    out = tuple(_vec(ctx, key, r, cols if cols is not None else len(v[0])) for r in v)
    if rows is not None and len(out) != rows:
        ctx.fail(key, f"{key} must have {rows} rows, got {len(out)}")
    return out


def _section(ctx, name, raw, cls):
    if not isinstance(raw, dict):
        ctx.fail(name, f"{name} must be an object")
    known = {f.name: f for f in fields(cls)}
    vals = {}
    for key, v in raw.items():
        if key not in known:
            ctx.fail(f"{name}.{key}", f"unknown field {name}.{key}")
        default = known[key].default
        if isinstance(default, bool) or (key == "no_contact"):
            if not (isinstance(v, bool) or (v is None and key == "no_contact")):
                ctx.fail(f"{name}.{key}", f"{name}.{key} must be a boolean")
        elif isinstance(default, str):
            if not isinstance(v, str):
                ctx.fail(f"{name}.{key}", f"{name}.{key} must be a string")
        elif isinstance(default, tuple):
            if not isinstance(v, list) or not v or not all(isinstance(x, int) and not isinstance(x, bool) and x >= 2
                                                         for x in v):
                ctx.fail(f"{name}.{key}", f"{name}.{key} must be a list of integers >= 2")
            if any(b <= a for a, b in zip(v, v[1:])):
                ctx.fail(f"{name}.{key}", f"{name}.{key} must be increasing")
            v = tuple(v)
        else:
            _num(ctx, f"{name}.{key}", v, integer=isinstance(default, int), positive=key != "lam",
                 nonneg=key == "lam")
        vals[key] = v
    out = cls(**vals)
    if cls is SolverConfig and out.gradient not in ("adjoint", "fd"):
        ctx.fail("solver.gradient", "solver.gradient must be 'adjoint' or 'fd'")
    if cls is CheckConfig and out.source not in ("analytic", "solve"):
        ctx.fail("check.source", "check.source must be 'analytic' or 'solve'")
    if cls is ConvergeConfig and (not out.components or set(out.components) - set("xua")):
        ctx.fail("converge.components", "converge.components must use the letters x, u, a")
    return out


def _check_keys(ctx, name, raw, allowed, required=()):
    if not isinstance(raw, dict):
        ctx.fail(name, f"{name} must be an object")
    for key in raw:
        if key not in allowed:
            ctx.fail(f"{name}.{key}", f"unknown field {name}.{key}")
    for key in required:
        if key not in raw:
            ctx.fail(f"{name}.{key}", f"missing required field {name}.{key}")


def _custom(ctx, raw, vals):
    for key in ("dimensions", "constraints", "dynamics", "cost", "horizon", "x0", "r1", "r2"):
        if key not in raw:
            ctx.fail(key, f"custom model requires field {key!r}")
    dims = raw["dimensions"]
    _check_keys(ctx, "dimensions", dims, ("n", "d", "m"), ("n", "d", "m"))
    n, d, m = (_num(ctx, f"dimensions.{s}", dims[s], integer=True, positive=True) for s in "ndm")
    vals["dimensions"] = {"n": n, "d": d, "m": m}

    con = raw["constraints"]
    _check_keys(ctx, "constraints", con, ("form", "A", "b", "distance", "block", "radius", "center", "rho"),
                ("form",))
    form = con["form"]
    c_out = {"form": form}
    if "rho" in con:
        c_out["rho"] = _num(ctx, "constraints.rho", con["rho"], positive=True)
    if form == "affine":
        _check_keys(ctx, "constraints", con, ("form", "A", "b", "rho"), ("A", "b"))
        c_out["A"] = _mat(ctx, "constraints.A", con["A"], rows=m, cols=n)
        c_out["b"] = _vec(ctx, "constraints.b", con["b"], m)
    elif form == "separation":
        _check_keys(ctx, "constraints", con, ("form", "distance", "block", "rho"), ("distance",))
        block = _num(ctx, "constraints.block", con.get("block", n // 2), integer=True, positive=True)
        if n != 2 * block or m != 1:
            ctx.fail("dimensions", "separation constraints need n = 2 block and m = 1")
        c_out["distance"] = _num(ctx, "constraints.distance", con["distance"], positive=True)
        c_out["block"] = block
    elif form == "disk":
        _check_keys(ctx, "constraints", con, ("form", "radius", "center", "rho"), ("radius",))
        if m != 1:
            ctx.fail("dimensions", "disk constraints need m = 1")
        c_out["radius"] = _num(ctx, "constraints.radius", con["radius"], positive=True)
        c_out["center"] = _vec(ctx, "constraints.center", con.get("center", [0.0] * n), n)
    else:
        ctx.fail("constraints.form", f"unknown constraint form {form!r}")
    vals["constraints"] = c_out

    dyn = raw["dynamics"]
    _check_keys(ctx, "dynamics", dyn, ("form", "A", "B", "c"), ("form",))
    if dyn["form"] != "linear":
        ctx.fail("dynamics.form", f"unknown dynamics form {dyn['form']!r}")
    if "B" not in dyn:
        ctx.fail("dynamics.B", "missing required field dynamics.B")
    vals["dynamics"] = {
        "form": "linear",
        "A": _mat(ctx, "dynamics.A", dyn["A"], n, n) if "A" in dyn else tuple((0.0,) * n for _ in range(n)),
        "B": _mat(ctx, "dynamics.B", dyn["B"], n, d),
        "c": _vec(ctx, "dynamics.c", dyn.get("c", [0.0] * n), n),
    }

    cost = raw["cost"]
    _check_keys(ctx, "cost", cost, ("terminal", "running"), ("terminal", "running"))
    term = cost["terminal"]
    _check_keys(ctx, "cost.terminal", term, ("form", "weight", "target"), ("form",))
    run = cost["running"]
    _check_keys(ctx, "cost.running", run, ("form", "state_weight", "control_weight", "rate_weight"), ("form",))
    if term["form"] != "quadratic" or run["form"] != "quadratic":
        ctx.fail("cost.form", "only quadratic cost forms are available")
    vals["cost"] = {
        "terminal": {
            "form": "quadratic",
            "weight": _num(ctx, "cost.terminal.weight", term.get("weight", 1.0), nonneg=True),
            "target": _vec(ctx, "cost.terminal.target", term.get("target", [0.0] * n), n),
        },
        "running": {
            "form": "quadratic",
            "state_weight": _num(ctx, "cost.running.state_weight", run.get("state_weight", 0.0), nonneg=True),
            "control_weight": _num(ctx, "cost.running.control_weight", run.get("control_weight", 1.0),
                                   nonneg=True),
            "rate_weight": _num(ctx, "cost.running.rate_weight", run.get("rate_weight", 0.0), nonneg=True),
        },
    }
    vals["horizon"] = _num(ctx, "horizon", raw["horizon"], positive=True)
    vals["x0"] = _vec(ctx, "x0", raw["x0"], n)
    vals["r1"] = _num(ctx, "r1", raw["r1"], positive=True)
    vals["r2"] = _num(ctx, "r2", raw["r2"], positive=True)
    if vals["r2"] < vals["r1"]:
        ctx.fail("r2", "r2 must be at least r1")
    if "u0" in raw:
        vals["u0"] = _vec(ctx, "u0", raw["u0"], n)
    if "coupling" in raw:
        vals["coupling"] = _mat(ctx, "coupling", raw["coupling"], cols=n)
    vals["lipschitz_k"] = _num(ctx, "lipschitz_k", raw.get("lipschitz_k", 0.0), nonneg=True)
    if "growth_m" in raw:
        vals["growth_m"] = _num(ctx, "growth_m", raw["growth_m"], positive=True)


def parse_config_text(text: str) -> ModelConfig:
    """Parse and validate config text; see :func:`parse_config`."""
    ctx = _Ctx(text)
    try:
        raw = json.loads(text, object_pairs_hook=_no_dupes)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", line=exc.lineno) from None
    except ConfigError as exc:
        raise ConfigError(exc.message, field=exc.field, line=ctx.line_of(exc.field)) from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    allowed = {"model", "k", "variant", "case", "controls", "solver", "check", "converge", "coderiv",
               *_CUSTOM_ONLY}
    for key in raw:
        if key not in allowed:
            ctx.fail(key, f"unknown field {key!r}")
    if "model" not in raw:
        ctx.fail("model", "missing required field 'model'")
    model = raw["model"]
    if model not in MODELS:
        ctx.fail("model", f"model must be one of {', '.join(MODELS)}")
    vals = {"model": model}
    if "k" in raw:
        vals["k"] = _num(ctx, "k", raw["k"], integer=True)
        if vals["k"] < 2:
            ctx.fail("k", "k must be at least 2")
    if model == "builtin-car":
        if "case" in raw:
            ctx.fail("case", "field 'case' applies to builtin-crowd only")
        if "variant" in raw:
            if raw["variant"] not in ("standard", "heavy-energy"):
                ctx.fail("variant", "variant must be 'standard' or 'heavy-energy'")
            vals["variant"] = raw["variant"]
    elif model == "builtin-crowd":
        if "variant" in raw:
            ctx.fail("variant", "field 'variant' applies to builtin-car only")
        if "case" in raw:
            if raw["case"] not in ("contact", "free"):
                ctx.fail("case", "case must be 'contact' or 'free'")
            vals["case"] = raw["case"]
    else:
        for key in ("variant", "case"):
            if key in raw:
                ctx.fail(key, f"field {key!r} applies to built-in models only")
    if model != "custom":
        for key in _CUSTOM_ONLY:
            if key in raw:
                ctx.fail(key, f"built-in models do not accept {key!r}")
    else:
        _custom(ctx, raw, vals)
    if "controls" in raw:
        if raw["controls"] not in ("analytic", "zero"):
            ctx.fail("controls", "controls must be 'analytic' or 'zero'")
        vals["controls"] = raw["controls"]
    if model == "custom" and vals.get("controls", "analytic") == "analytic" and "controls" in raw:
        ctx.fail("controls", "custom models have no analytic controls")
    if model == "custom":
        vals["controls"] = "zero"
    for name, cls in (("solver", SolverConfig), ("check", CheckConfig), ("converge", ConvergeConfig),
                      ("coderiv", CoderivConfig)):
        if name in raw:
            vals[name] = _section(ctx, name, raw[name], cls)
    if model == "custom" and "check" in raw and raw["check"].get("source") == "analytic":
        ctx.fail("check.source", "custom models have no analytic solution")
    if model == "custom" and "check" not in raw:
        vals["check"] = CheckConfig(source="solve")
    return ModelConfig(**{k: _freeze(v) for k, v in vals.items()})


def parse_config(path) -> ModelConfig:
    """Read a strict JSON config with defaults applied.

    Raises
    ------
    ConfigError
        Carrying the offending ``field`` and ``line`` when known.
    """
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config_text(p.read_text(encoding="utf-8"))


def dump_config(cfg: ModelConfig) -> str:
    """Canonical text: sorted keys, two-space indent, trailing newline."""
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"


def default_config(model: str = "builtin-car", **overrides) -> ModelConfig:
    return parse_config_text(json.dumps({"model": model, **overrides}))
