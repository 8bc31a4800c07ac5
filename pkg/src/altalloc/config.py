"""Experiment configuration: a flat, sectioned key-value text format.

The format is deliberately minimal so files diff cleanly and parse without
ambiguity::

    # full-line or trailing comments with '#'
    [model]
    n_ill = 1
    n_liq = 0
    mean = -0.700 -0.423 0.158
    covariance =
        0.068 0.072 0.006
        0.073 0.271 0.043
        0.006 0.043 0.079

    [experiment]
    kind = plan
    horizon = 20

    [output]
    directory = out
    prefix = demo

Scalars sit on the ``key = value`` line; vectors are whitespace-separated
numbers; matrices leave the value empty and put one row per following
indented line.  Unknown sections or keys are errors (with line numbers), as
are dimension mismatches and a covariance that is not positive semidefinite.
A covariance with asymmetry above 1e-6 is symmetrized with a warning.

Run ``altalloc config-reference`` for the generated list of keys, types, and
defaults.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, ModelConstructionError
from .latent import LatentDistribution

ASYMMETRY_WARN = 1e-6

EXPERIMENT_KINDS = ("impulse", "step", "plan", "simulate", "frontier")
POLICY_NAMES = ("open_loop", "mpc_commitment", "steady_state", "full_mpc", "relaxed")
RISK_MODES = ("hard-constraint", "penalized")

DEFAULT_SIGMA_GRID = tuple(np.linspace(0.0, 0.3, 10))


@dataclass(frozen=True)
class KeySpec:
    section: str
    name: str
    typ: str  # int | float | optfloat | str | floats | matrix | words
    default: object
    required: bool
    help: str


KEY_SPECS: tuple[KeySpec, ...] = (
    KeySpec("model", "n_ill", "int", None, True, "number of illiquid assets"),
    KeySpec("model", "n_liq", "int", None, True, "number of liquid assets"),
    KeySpec("model", "mean", "floats", None, True,
            "latent mean, length 3*n_ill + n_liq, blocks [call|dist|ill_ret|liq_ret]"),
    KeySpec("model", "covariance", "matrix", None, True,
            "latent covariance, row per line; symmetrized on load"),
    KeySpec("experiment", "kind", "str", None, True,
            "one of: " + ", ".join(EXPERIMENT_KINDS)),
    KeySpec("experiment", "horizon", "int", 20, False, "simulation/planning periods T"),
    KeySpec("experiment", "paths", "int", 100, False, "Monte Carlo paths"),
    KeySpec("experiment", "master_seed", "int", 2024, False, "master random seed"),
    KeySpec("experiment", "policies", "words", ("open_loop",), False,
            "policies to run; subset of: " + ", ".join(POLICY_NAMES)),
    KeySpec("experiment", "i_targ", "float", 1.0, False, "illiquid wealth target"),
    KeySpec("experiment", "gamma_smooth", "float", 1.0, False,
            "commitment smoothing weight in the tracking planners"),
    KeySpec("experiment", "n_lim", "optfloat", 0.5, False,
            "per-period commitment cap; empty disables the cap"),
    KeySpec("experiment", "mpc_horizon", "int", 20, False,
            "re-planning horizon of the receding-horizon policies"),
    KeySpec("experiment", "gamma", "float", 0.97, False, "full-planner discount"),
    KeySpec("experiment", "sigma", "float", 0.15, False,
            "per-period risk tolerance (return standard deviation)"),
    KeySpec("experiment", "sigma_grid", "floats", DEFAULT_SIGMA_GRID, False,
            "risk-tolerance grid for frontier sweeps"),
    KeySpec("experiment", "epsilon_ins", "float", 0.02, False,
            "insolvency probability bound, in (0, 1/2]"),
    KeySpec("experiment", "lambda_risk", "float", 10.0, False, "excess-risk penalty weight"),
    KeySpec("experiment", "lambda_smooth", "float", 0.1, False,
            "commitment smoothing weight in the full planner"),
    KeySpec("experiment", "lambda_cash", "float", 1000.0, False, "outside-cash penalty weight"),
    KeySpec("experiment", "risk_mode", "str", "penalized", False,
            "risk constraint form: hard-constraint or penalized"),
    KeySpec("experiment", "kappa", "optfloat", None, False,
            "proportional feedback strength of the steady-state policy; empty disables"),
    KeySpec("experiment", "initial_liquid", "float", 1.0, False,
            "starting liquid wealth (illiquid state starts at zero)"),
    KeySpec("experiment", "mm_samples", "int", 10**6, False,
            "Monte Carlo samples for the mean system matrices"),
    KeySpec("experiment", "mm_seed", "int", 12345, False, "seed for the mean-matrix estimate"),
    KeySpec("experiment", "delay_start", "int", 5, False,
            "first period counted by the delayed RMS tracking error"),
    KeySpec("output", "directory", "str", "out", False, "output directory"),
    KeySpec("output", "prefix", "str", "run", False, "output file prefix"),
)

_SPEC_BY_KEY = {(s.section, s.name): s for s in KEY_SPECS}


@dataclass(frozen=True)
class ModelConfig:
    n_ill: int
    n_liq: int
    mean: tuple
    covariance: tuple  # tuple of row tuples, symmetrized

    def to_distribution(self) -> LatentDistribution:
        return LatentDistribution(
            mean=np.array(self.mean, dtype=float),
            covariance=np.array(self.covariance, dtype=float),
            n_ill=self.n_ill,
            n_liq=self.n_liq,
        )


@dataclass(frozen=True)
class ExperimentSection:
    kind: str
    horizon: int
    paths: int
    master_seed: int
    policies: tuple
    i_targ: float
    gamma_smooth: float
    n_lim: float | None
    mpc_horizon: int
    gamma: float
    sigma: float
    sigma_grid: tuple
    epsilon_ins: float
    lambda_risk: float
    lambda_smooth: float
    lambda_cash: float
    risk_mode: str
    kappa: float | None
    initial_liquid: float
    mm_samples: int
    mm_seed: int
    delay_start: int


@dataclass(frozen=True)
class OutputSection:
    directory: str
    prefix: str


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelConfig
    experiment: ExperimentSection
    output: OutputSection

    def content_hash(self) -> str:
        return hashlib.sha256(write_config(self).encode()).hexdigest()


def _strip_comment(line: str) -> str:
    pos = line.find("#")
    return line if pos < 0 else line[:pos]


def _parse_number(tok: str, path, lineno) -> float:
    try:
        return float(tok)
    except ValueError:
        raise ConfigError(f"expected a number, got {tok!r}", path, lineno) from None


def _coerce(spec: KeySpec, raw, path, lineno):
    if spec.typ == "matrix":
        if not isinstance(raw, list):
            raise ConfigError(f"{spec.name} must be a matrix block (rows on indented lines)",
                              path, lineno)
        return tuple(tuple(_parse_number(t, path, ln) for t in row.split())
                     for row, ln in raw)
    value = raw.strip()
    if spec.typ == "int":
        try:
            return int(value)
        except ValueError:
            raise ConfigError(f"{spec.name} must be an integer, got {value!r}",
                              path, lineno) from None
    if spec.typ == "float":
        return _parse_number(value, path, lineno)
    if spec.typ == "optfloat":
        return None if value == "" else _parse_number(value, path, lineno)
    if spec.typ == "floats":
        return tuple(_parse_number(t, path, lineno) for t in value.split())
    if spec.typ == "words":
        return tuple(value.split())
    if spec.typ == "str":
        return value
    raise AssertionError(spec.typ)


def parse_config_text(text: str, path: str = "<string>") -> ExperimentConfig:
    """Parse configuration text; see module docstring for the grammar."""
    values: dict[tuple[str, str], object] = {}
    section = None
    pending: tuple[KeySpec, list, int] | None = None
    for lineno, rawline in enumerate(text.splitlines(), start=1):
        line = _strip_comment(rawline).rstrip()
        if not line.strip():
            continue
        indented = line[0].isspace()
        if indented:
            if pending is None:
                raise ConfigError("indented line outside a matrix block", path, lineno)
            pending[1].append((line.strip(), lineno))
            continue
        if pending is not None:
            spec, rows, ln0 = pending
            values[(spec.section, spec.name)] = _coerce(spec, rows, path, ln0)
            pending = None
        line = line.strip()
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError("malformed section header", path, lineno)
            section = line[1:-1].strip()
            if section not in ("model", "experiment", "output"):
                raise ConfigError(f"unknown section [{section}]", path, lineno)
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", path, lineno)
        if section is None:
            raise ConfigError("key outside any section", path, lineno)
        key, _, value = line.partition("=")
        key = key.strip()
        spec = _SPEC_BY_KEY.get((section, key))
        if spec is None:
            raise ConfigError(f"unknown key {key!r} in section [{section}]", path, lineno)
        if spec.typ == "matrix" and value.strip() == "":
            pending = (spec, [], lineno)
            continue
        values[(section, key)] = _coerce(spec, value, path, lineno)
    if pending is not None:
        spec, rows, ln0 = pending
        values[(spec.section, spec.name)] = _coerce(spec, rows, path, ln0)

    for spec in KEY_SPECS:
        if spec.required and (spec.section, spec.name) not in values:
            raise ConfigError(f"missing required key {spec.name!r} in section [{spec.section}]",
                              path)
    filled = {(s.section, s.name): values.get((s.section, s.name), s.default)
              for s in KEY_SPECS}

    model = ModelConfig(
        n_ill=filled[("model", "n_ill")],
        n_liq=filled[("model", "n_liq")],
        mean=tuple(filled[("model", "mean")]),
        covariance=filled[("model", "covariance")],
    )
    exp = ExperimentSection(**{s.name: filled[("experiment", s.name)]
                               for s in KEY_SPECS if s.section == "experiment"})
    out = OutputSection(**{s.name: filled[("output", s.name)]
                           for s in KEY_SPECS if s.section == "output"})
    cfg = ExperimentConfig(model=model, experiment=exp, output=out)
    return _validate(cfg, path)


def _validate(cfg: ExperimentConfig, path: str) -> ExperimentConfig:
    m = cfg.model
    if m.n_ill < 1:
        raise ConfigError("n_ill must be at least 1", path)
    if m.n_liq < 0:
        raise ConfigError("n_liq must be nonnegative", path)
    dim = 3 * m.n_ill + m.n_liq
    if len(m.mean) != dim:
        raise ConfigError(f"mean has length {len(m.mean)}, expected 3*n_ill + n_liq = {dim}",
                          path)
    rows = m.covariance
    if len(rows) != dim or any(len(r) != dim for r in rows):
        raise ConfigError(f"covariance must be {dim}x{dim}", path)
    cov = np.array(rows, dtype=float)
    asym = float(np.max(np.abs(cov - cov.T))) if dim else 0.0
    if asym > ASYMMETRY_WARN:
        warnings.warn(
            f"covariance asymmetry {asym:.3g} exceeds {ASYMMETRY_WARN:g}; symmetrizing",
            stacklevel=3,
        )
    cov = (cov + cov.T) / 2.0
    model = replace(m, covariance=tuple(tuple(float(v) for v in row) for row in cov))
    try:
        model.to_distribution()
    except ModelConstructionError as exc:
        raise ConfigError(str(exc), path) from exc

    e = cfg.experiment
    if e.kind not in EXPERIMENT_KINDS:
        raise ConfigError(f"unknown experiment kind {e.kind!r}", path)
    for p in e.policies:
        if p not in POLICY_NAMES:
            raise ConfigError(f"unknown policy {p!r}", path)
    if e.risk_mode not in RISK_MODES:
        raise ConfigError(f"unknown risk_mode {e.risk_mode!r}", path)
    if e.horizon < 1 or e.paths < 1 or e.mpc_horizon < 2:
        raise ConfigError("horizon and paths must be positive; mpc_horizon at least 2", path)
    if not 0.0 < e.epsilon_ins <= 0.5:
        raise ConfigError("epsilon_ins must lie in (0, 1/2]", path)
    if e.kind == "frontier" and not e.sigma_grid:
        raise ConfigError("frontier experiments need a nonempty sigma_grid", path)
    if e.kind in ("simulate", "frontier"):
        joint = {"steady_state", "full_mpc", "relaxed"}
        if m.n_liq == 0 and any(p in joint for p in e.policies):
            raise ConfigError("allocation policies need a model with liquid assets", path)
        if m.n_liq > 0 and any(p not in joint for p in e.policies):
            raise ConfigError("commitment-only policies need a model with n_liq = 0", path)
    return ExperimentConfig(model=model, experiment=e, output=cfg.output)


def load_config(path: str) -> ExperimentConfig:
    """Load and validate a configuration file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", str(path)) from exc
    return parse_config_text(text, str(path))


def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def write_config(cfg: ExperimentConfig) -> str:
    """Canonical text form; ``parse_config_text(write_config(cfg)) == cfg``."""
    lines = ["[model]"]
    lines.append(f"n_ill = {cfg.model.n_ill}")
    lines.append(f"n_liq = {cfg.model.n_liq}")
    lines.append("mean = " + " ".join(_fmt(float(v)) for v in cfg.model.mean))
    lines.append("covariance =")
    for row in cfg.model.covariance:
        lines.append("    " + " ".join(_fmt(float(v)) for v in row))
    lines.append("")
    lines.append("[experiment]")
    e = cfg.experiment
    for spec in KEY_SPECS:
        if spec.section != "experiment":
            continue
        v = getattr(e, spec.name)
        if spec.typ == "words":
            lines.append(f"{spec.name} = " + " ".join(v))
        elif spec.typ == "floats":
            lines.append(f"{spec.name} = " + " ".join(_fmt(float(x)) for x in v))
        elif spec.typ == "optfloat":
            lines.append(f"{spec.name} = " + ("" if v is None else _fmt(float(v))))
        elif spec.typ == "float":
            lines.append(f"{spec.name} = {_fmt(float(v))}")
        else:
            lines.append(f"{spec.name} = {v}")
    lines.append("")
    lines.append("[output]")
    lines.append(f"directory = {cfg.output.directory}")
    lines.append(f"prefix = {cfg.output.prefix}")
    return "\n".join(lines) + "\n"


def config_reference() -> str:
    """Generated reference of every key, its type, default, and meaning."""
    lines = ["Configuration reference (sections, keys, defaults):", ""]
    for section in ("model", "experiment", "output"):
        lines.append(f"[{section}]")
        for spec in KEY_SPECS:
            if spec.section != section:
                continue
            if spec.required:
                default = "(required)"
            elif spec.typ == "floats" and spec.default is not None:
                default = "default: " + " ".join(f"{float(x):g}" for x in spec.default)
            elif spec.typ == "words":
                default = "default: " + " ".join(spec.default)
            else:
                default = f"default: {spec.default}"
            lines.append(f"  {spec.name:<16} {spec.typ:<9} {default}")
            lines.append(f"  {'':<16} {'':<9} {spec.help}")
        lines.append("")
    return "\n".join(lines)
