"""Line-oriented ``key = value`` scenario configuration.

Parsing reports every problem it finds at once; a config that parses has
already been pushed through the constructors of the kernel, grid, initial
condition and step-control types.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

from .diagnostics import CHECK_NAMES
from .discretization import build_grid
from .kernels import (
    AdditiveKernel,
    ConstantKernel,
    DaughterDistribution,
    KernelSpec,
    PowerLawRate,
    PowerLawSumKernel,
)
from .solver import Exponential, Monodisperse, PowerCutoff, Scenario, StepControl

__all__ = ["Config", "ConfigError", "parse_config", "format_config", "load_config"]

COAG_FORMS = ("power_law_sum", "constant", "additive")
FRAG_FORMS = ("power_law", "none")
IC_FORMS = ("exponential", "monodisperse", "power_cutoff")


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {e}" for e in errors))
        self.errors = list(errors)


@dataclass(frozen=True)
class Config:
    coag: str
    frag: str
    nu: float
    m0: float
    ic: str
    alpha: float = 0.3
    beta: float = 0.3
    coag_c: float = 1.0
    gamma: float = 1.0
    frag_coef: float = 1.0
    delta: float = 0.5
    x_min: float = 1e-4
    j: float = 1e3
    cells_per_decade: int = 32
    ic_mean: float = 1.0
    ic_mass: float = 1.0
    ic_size: float = 1.0
    ic_p: float = 1.5
    ic_xc: float = 1.0
    t_end: float = 5.0
    cadence: float = 0.25
    dt_init: float = 1e-3
    dt_max: float = 0.05
    safety: float = 0.5
    positivity_fraction: float = 0.5
    checks: tuple = ()
    check_fatal: bool = False
    prop_m: float = 2.0
    flux_m: float | None = None
    perturbation: float = 1e-3
    subgrid_threshold: float = 0.01
    force: bool = False
    j_values: tuple = ()
    resolutions: tuple = ()

    # -- construction of the runtime objects ------------------------------

    def kernel_spec(self) -> KernelSpec:
        if self.coag == "power_law_sum":
            K = PowerLawSumKernel(self.alpha, self.beta)
        elif self.coag == "constant":
            K = ConstantKernel(self.coag_c)
        else:
            K = AdditiveKernel()
        a = PowerLawRate(self.gamma, self.frag_coef if self.frag == "power_law" else 0.0)
        return KernelSpec(K, a, DaughterDistribution(self.nu), self.m0)

    def initial_condition(self):
        if self.ic == "exponential":
            return Exponential(self.ic_mean, self.ic_mass)
        if self.ic == "monodisperse":
            return Monodisperse(self.ic_size, self.ic_mass)
        return PowerCutoff(self.ic_p, self.ic_xc, self.ic_mass)

    def scenario(self, **overrides) -> Scenario:
        sc = Scenario(
            spec=self.kernel_spec(),
            initial=self.initial_condition(),
            x_min=self.x_min,
            j=self.j,
            cells_per_decade=self.cells_per_decade,
            t_end=self.t_end,
            cadence=self.cadence,
            control=StepControl(self.dt_init, self.dt_max, self.safety, self.positivity_fraction),
            delta=self.delta,
            checks=tuple(self.checks),
            fatal_checks=self.check_fatal,
            perturbation=self.perturbation,
            prop_m=self.prop_m,
            flux_m=self.flux_m,
            subgrid_threshold=self.subgrid_threshold,
            force=self.force,
        )
        return sc.with_(**overrides) if overrides else sc

    def with_(self, **kw) -> "Config":
        return replace(self, **kw)


_REQUIRED = ("coag", "frag", "nu", "m0", "ic")
_CHOICES = {"coag": COAG_FORMS, "frag": FRAG_FORMS, "ic": IC_FORMS}
_FLOAT_LISTS = {"j_values"}
_INT_LISTS = {"resolutions"}


def _field_types() -> dict:
    return {f.name: f.type for f in fields(Config)}


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_int(text: str) -> int:
    v = float(text)
    if not v.is_integer():
        raise ValueError(f"expected an integer, got {text!r}")
    return int(v)


def _items(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _convert(key: str, typ: str, raw: str):
    if key == "checks":
        return tuple(_items(raw))
    if key in _FLOAT_LISTS:
        return tuple(float(t) for t in _items(raw))
    if key in _INT_LISTS:
        return tuple(_parse_int(t) for t in _items(raw))
    if typ == "str":
        return raw
    if typ == "bool":
        return _parse_bool(raw)
    if typ == "int":
        return _parse_int(raw)
    if typ == "float | None":
        return None if raw.lower() in ("none", "") else float(raw)
    if typ == "float":
        return float(raw)
    raise TypeError(f"unhandled field type {typ}")


def _validate(values: dict) -> list[str]:
    """Constraint errors, collected exhaustively; checks whose inputs are missing are skipped."""
    errs = []

    def have(*keys):
        return all(k in values for k in keys)

    def attempt(label, keys, fn):
        if not have(*keys):
            return
        try:
            fn()
        except (ValueError, TypeError) as exc:
            errs.append(f"{label}: {exc}")

    def require(keys, ok, message):
        if have(*keys) and not ok():
            errs.append(message())

    for key, choices in _CHOICES.items():
        require((key,), lambda key=key, choices=choices: values[key] in choices,
                lambda key=key, choices=choices: f"{key}: must be one of {', '.join(choices)}, got {values[key]!r}")

    require(("nu",), lambda: -2.0 < values["nu"] <= -1.0, lambda: f"nu: must lie in (-2, -1], got {values['nu']:g}")
    if have("nu", "m0") and -2.0 < values["nu"] <= -1.0:
        lo = -1.0 - values["nu"]
        require(("m0",), lambda: lo < values["m0"] < 1.0,
                lambda: f"m0: must lie in ({lo:g}, 1) for nu = {values['nu']:g} (need m0 > -1 - nu), got {values['m0']:g}")
    else:
        require(("m0",), lambda: 0.0 < values["m0"] < 1.0, lambda: f"m0: must lie in (0, 1), got {values['m0']:g}")
    require(("delta",), lambda: 0.0 < values["delta"] < 1.0, lambda: f"delta: must lie in (0, 1), got {values['delta']:g}")

    coag = values.get("coag")
    if coag == "power_law_sum":
        attempt("alpha/beta", ("alpha", "beta"), lambda: PowerLawSumKernel(values["alpha"], values["beta"]))
    elif coag == "constant":
        attempt("coag_c", ("coag_c",), lambda: ConstantKernel(values["coag_c"]))
    if values.get("frag") == "power_law":
        attempt("frag_coef", ("gamma", "frag_coef"), lambda: PowerLawRate(values["gamma"], values["frag_coef"]))

    grid_keys = ("x_min", "j", "cells_per_decade")
    attempt("grid", grid_keys, lambda: build_grid(values["x_min"], values["j"], values["cells_per_decade"]))
    for jv in values.get("j_values", ()):
        attempt("j_values", grid_keys, lambda jv=jv: build_grid(values["x_min"], jv, values["cells_per_decade"]))
    for res in values.get("resolutions", ()):
        attempt("resolutions", grid_keys, lambda res=res: build_grid(values["x_min"], values["j"], res))

    ic = values.get("ic")
    if ic == "exponential":
        require(("ic_mean", "ic_mass"), lambda: values["ic_mean"] > 0 and values["ic_mass"] > 0,
                lambda: "ic: exponential needs ic_mean > 0 and ic_mass > 0")
    elif ic == "monodisperse":
        require(("ic_size", "x_min", "j"), lambda: values["x_min"] <= values["ic_size"] < values["j"],
                lambda: f"ic_size: must lie in [x_min, j), got {values['ic_size']:g}")
        require(("ic_mass",), lambda: values["ic_mass"] > 0, lambda: "ic_mass: must be positive")
    elif ic == "power_cutoff":
        attempt("ic_p", ("ic_p", "ic_xc", "ic_mass"), lambda: PowerCutoff(values["ic_p"], values["ic_xc"], values["ic_mass"]))
        require(("ic_xc", "ic_mass"), lambda: values["ic_xc"] > 0 and values["ic_mass"] > 0,
                lambda: "ic: power_cutoff needs ic_xc > 0 and ic_mass > 0")

    require(("t_end",), lambda: values["t_end"] > 0 and math.isfinite(values["t_end"]),
            lambda: "t_end: must be positive and finite")
    require(("cadence", "t_end"), lambda: 0 < values["cadence"] <= values["t_end"],
            lambda: "cadence: must lie in (0, t_end]")
    ctl = ("dt_init", "dt_max", "safety", "positivity_fraction")
    attempt("step control", ctl, lambda: StepControl(*(values[k] for k in ctl)))
    for name in values.get("checks", ()):
        if name not in CHECK_NAMES:
            errs.append(f"checks: unknown check {name!r} (known: {', '.join(CHECK_NAMES)})")
    require(("prop_m",), lambda: values["prop_m"] > 1, lambda: "prop_m: must exceed 1")
    require(("flux_m",), lambda: values["flux_m"] is None or 0 < values["flux_m"] < 1,
            lambda: "flux_m: must lie in (0, 1)")
    require(("perturbation",), lambda: values["perturbation"] > -1, lambda: "perturbation: must exceed -1")
    require(("subgrid_threshold",), lambda: 0 < values["subgrid_threshold"] < 1,
            lambda: "subgrid_threshold: must lie in (0, 1)")
    return errs


def parse_config(text: str) -> Config:
    """Parse ``key = value`` lines; raise :class:`ConfigError` listing every error."""
    types = _field_types()
    raw: dict[str, tuple[int, str]] = {}
    errs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            errs.append(f"line {lineno}: expected 'key = value', got {body!r}")
            continue
        key, val = (s.strip() for s in body.split("=", 1))
        if key not in types:
            errs.append(f"line {lineno}: unknown key {key!r}")
        elif key in raw:
            errs.append(f"line {lineno}: duplicate key {key!r}")
        else:
            raw[key] = (lineno, val)

    for key in _REQUIRED:
        if key not in raw:
            errs.append(f"missing required key {key!r}")

    values = {f.name: f.default for f in fields(Config) if f.name not in _REQUIRED}
    for key, (lineno, val) in raw.items():
        try:
            values[key] = _convert(key, types[key], val)
        except ValueError as exc:
            errs.append(f"line {lineno}: {key}: {exc}")
            values.pop(key, None)
    errs += _validate(values)
    if errs:
        raise ConfigError(errs)
    return Config(**values)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    return str(value)


def format_config(config: Config) -> str:
    """Serialize every field; ``parse_config(format_config(c)) == c``."""
    return "".join(f"{f.name} = {_fmt(getattr(config, f.name))}\n" for f in fields(config))


def load_config(path) -> Config:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
