"""Flat key=value configuration files.

    # comment
    s = 0.25
    lambda = 0.2
    N = 256

Keys are case-insensitive. Command-line values override the file, the file overrides the defaults.
"""
import configparser
import dataclasses
from dataclasses import dataclass
from typing import Any, Callable, Mapping, Optional

import numpy as np

from fracsing.barriers import Window
from fracsing.branch import default_lambda_grid
from fracsing.cache import DEFAULT_CACHE_DIR
from fracsing.core import ProblemSpec
from fracsing.enumutils import NonlinearityKind
from fracsing.errors import ConfigurationError
from fracsing.pool import DEFAULT_WORKERS
from fracsing.semipositone import SemipositoneSpec

_SECTION = "fracsing"

# Config key -> ProblemSpec field
SPEC_KEYS: dict[str, tuple[str, Callable[[str], Any]]] = {
    "s": ("s", float),
    "q": ("q", float),
    "lambda": ("lam", float),
    "alpha": ("alpha", float),
    "sigma1": ("sigma1", float),
    "sigma2": ("sigma2", float),
    "n": ("n", int),
    "grading": ("grading", str),
    "tol_residual": ("tol_residual", float),
    "tol_order": ("tol_order", float),
    "eps_min": ("eps_min", float),
    "r": ("R", float),
    "seed": ("seed", int),
    "torsion_tol": ("torsion_tol", float),
}

RUN_KEYS: dict[str, Callable[[str], Any]] = {
    "lambda_min": float,
    "lambda_max": float,
    "lambda_points": int,
    "workers": int,
    "p": float,
    "gamma": float,
    "theta_max": float,
    "steps": int,
    "cache_dir": str,
}


@dataclass(frozen=True)
class RunOptions:
    lambda_min: Optional[float] = None
    lambda_max: Optional[float] = None
    lambda_points: int = 40
    workers: int = DEFAULT_WORKERS
    p: float = 0.5
    gamma: Optional[float] = None
    theta_max: Optional[float] = None
    steps: int = 20
    cache_dir: str = DEFAULT_CACHE_DIR

    def __post_init__(self):
        if self.lambda_points < 2:
            raise ConfigurationError("lambda_points must be at least 2, got %d" % self.lambda_points)
        if self.workers < 1:
            raise ConfigurationError("workers must be at least 1, got %d" % self.workers)
        if self.lambda_min is not None and not self.lambda_min > 0:
            raise ConfigurationError("lambda_min must be positive, got %g" % self.lambda_min)
        if self.lambda_min is not None and self.lambda_max is not None and not self.lambda_min < self.lambda_max:
            raise ConfigurationError("Need lambda_min < lambda_max, got %g, %g" % (self.lambda_min, self.lambda_max))

    def lambda_grid(self, window: Optional[Window]) -> list[float]:
        if self.lambda_min is None or self.lambda_max is None:
            return default_lambda_grid(window, self.lambda_points)
        return [float(v) for v in np.geomspace(self.lambda_min, self.lambda_max, self.lambda_points)]

    def semipositone(self, q: float) -> SemipositoneSpec:
        return SemipositoneSpec(p=self.p, gamma=self.gamma, theta_max=self.theta_max, steps=self.steps, q=q)


@dataclass(frozen=True)
class RunConfig:
    spec: ProblemSpec
    options: RunOptions


def parse_config(text: str, source: str = "<string>") -> dict[str, str]:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",),
                                       default_section="__defaults__")
    try:
        parser.read_string("[%s]\n%s" % (_SECTION, text), source=source)
    except configparser.Error as e:
        raise ConfigurationError("Malformed config %s: %s" % (source, e)) from e
    values = dict(parser.items(_SECTION))
    unknown = sorted(set(values) - set(SPEC_KEYS) - set(RUN_KEYS))
    if unknown:
        raise ConfigurationError("Unknown config keys in %s: %s" % (source, ", ".join(unknown)))
    return values


def read_config(path: str) -> dict[str, str]:
    try:
        with open(path) as fl:
            return parse_config(fl.read(), path)
    except OSError as e:
        raise ConfigurationError("Cannot read config %s: %s" % (path, e.strerror or e)) from e


def _convert(key: str, conv: Callable[[str], Any], value: Any) -> Any:
    if not isinstance(value, str):
        return value
    try:
        return conv(value.strip())
    except ValueError as e:
        raise ConfigurationError("Bad value for %s: '%s'" % (key, value)) from e


def build_config(file_values: Mapping[str, Any], overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """Merges file values and overrides (None values are skipped) into a validated spec and run options."""
    merged = {k.lower(): v for k, v in file_values.items()}
    for k, v in (overrides or {}).items():
        if v is not None:
            merged[k.lower()] = v

    spec_args, run_args = {}, {}
    for key, value in merged.items():
        if key in SPEC_KEYS:
            name, conv = SPEC_KEYS[key]
            spec_args[name] = _convert(key, conv, value)
        elif key in RUN_KEYS:
            run_args[key] = _convert(key, RUN_KEYS[key], value)
        else:
            raise ConfigurationError("Unknown config key: %s" % key)
    return RunConfig(spec=ProblemSpec(**spec_args), options=RunOptions(**run_args))


def load_config(path: Optional[str], overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    return build_config(read_config(path) if path else {}, overrides)


def dump_config(spec: ProblemSpec, options: Optional[RunOptions] = None) -> str:
    if spec.nl.kind != NonlinearityKind.EXEMPLAR:
        raise ConfigurationError("Only the exemplar nonlinearity can be written to a config file")
    lines = []
    for key, (name, _) in SPEC_KEYS.items():
        value = getattr(spec, name)
        lines.append("%s = %s" % (key, repr(value) if isinstance(value, float) else value))
    if options is not None:
        for f in dataclasses.fields(options):
            value = getattr(options, f.name)
            if value is not None:
                lines.append("%s = %s" % (f.name, repr(value) if isinstance(value, float) else value))
    return "\n".join(lines) + "\n"
