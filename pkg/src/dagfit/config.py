"""Declarative model configuration (YAML).

Top-level keys::

    index_spaces:  {axis: [label, ...]}
    parameters:    [{name, central, sigma, bounds, constrained}, ...]
    bundles:       [{kind, name, parameters, major, provides, expects, options}, ...]
    correlations:  [{members: [...], matrix: [[...]]}, ...]
    expressions:   {name or "name[axis, ...]": source}
    overrides:     {parameter: value}
    statistic:     {kind, prediction, data, pulls, covariance}
    fit:           {free, ftol, xtol, maxfev, restarts, recompute_covariance}
    scan:          [{param, lo, hi, points}]
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .bundles import BundleConfig, ParameterSpec, instantiate
from .errors import ConfigError, DagfitError
from .expressions import ExpressionBuilder, join_key, parse, replicate
from .expressions.syntax import NameRef
from .fitter import FitProblem
from .model import IndexSpace, Model
from .statistics import CovarianceModel, Statistic

TOP_LEVEL = ("index_spaces", "parameters", "bundles", "correlations", "expressions",
             "overrides", "statistic", "fit", "scan")


@dataclass
class ModelConfig:
    index_spaces: dict = field(default_factory=dict)
    parameters: list = field(default_factory=list)
    bundles: list = field(default_factory=list)
    correlations: list = field(default_factory=list)
    expressions: dict = field(default_factory=dict)
    overrides: dict = field(default_factory=dict)
    statistic: dict | None = None
    fit: dict = field(default_factory=dict)
    scan: list = field(default_factory=list)
    base_dir: Path = Path(".")

    @classmethod
    def from_dict(cls, raw, base_dir=".") -> "ModelConfig":
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise ConfigError("top level must be a mapping")
        unknown = [k for k in raw if k not in TOP_LEVEL]
        if unknown:
            raise ConfigError(f"unknown key (allowed: {', '.join(TOP_LEVEL)})", key=unknown[0])
        cfg = cls(**{k: v for k, v in raw.items() if v is not None}, base_dir=Path(base_dir))
        for key, typ in (("index_spaces", dict), ("parameters", list), ("bundles", list),
                         ("correlations", list), ("expressions", dict), ("overrides", dict),
                         ("fit", dict), ("scan", list)):
            if not isinstance(getattr(cfg, key), typ):
                raise ConfigError(f"expected a {typ.__name__}", key=key)
        if cfg.statistic is None:
            raise ConfigError("no statistic defined", key="statistic")
        if not isinstance(cfg.statistic, dict):
            raise ConfigError("expected a mapping", key="statistic")
        return cfg


def load_config(path) -> ModelConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", key=str(path)) from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}", key=str(path)) from None
    return ModelConfig.from_dict(raw, base_dir=path.parent)


@dataclass
class BuiltModel:
    config: ModelConfig
    model: Model
    statistic: Statistic
    problem: FitProblem
    expressions: dict

    @property
    def prediction(self):
        return self.statistic.prediction

    @property
    def graph(self):
        return self.model.graph


def _signature(name: str) -> tuple[str, list[str]]:
    ast = parse(name)
    if isinstance(ast, NameRef):
        return ast.name, list(ast.indices)
    raise ConfigError("expression names must look like 'name' or 'name[axis, ...]'", key=f"expressions.{name}")


def _keys(value) -> list[str]:
    return [value] if isinstance(value, str) else list(value)


def build(cfg: ModelConfig) -> BuiltModel:
    """Instantiate bundles, compile expressions and assemble the statistic."""
    try:
        space = IndexSpace(cfg.index_spaces)
    except DagfitError as exc:
        raise ConfigError(str(exc), key="index_spaces") from None
    model = Model(space=space)

    for i, spec in enumerate(cfg.parameters):
        try:
            p = ParameterSpec.coerce(spec)
            model.params.define(p.name, p.central, p.sigma, bounds=p.bounds, constrained=p.constrained)
        except (TypeError, DagfitError, ValueError) as exc:
            raise ConfigError(str(exc), key=f"parameters[{i}]") from None

    for i, raw in enumerate(cfg.bundles):
        label = raw.get("name", raw.get("kind", i)) if isinstance(raw, dict) else i
        try:
            options = dict(raw.get("options") or {})
            options.setdefault("base_dir", str(cfg.base_dir))
            bcfg = BundleConfig(**{**raw, "options": options})
            instantiate(bcfg, space, model)
        except ConfigError:
            raise
        except (TypeError, KeyError, DagfitError, ValueError) as exc:
            msg = f"missing option {exc}" if isinstance(exc, KeyError) and not isinstance(exc, DagfitError) else str(exc)
            raise ConfigError(msg, key=f"bundles.{label}") from None

    for i, corr in enumerate(cfg.correlations):
        try:
            model.params.correlate(corr["members"], corr["matrix"])
        except (KeyError, TypeError, DagfitError) as exc:
            raise ConfigError(str(exc), key=f"correlations[{i}]") from None

    builder = ExpressionBuilder(model)
    compiled = {}
    for name, src in cfg.expressions.items():
        key = f"expressions.{name}"
        try:
            base, free = _signature(name)
            ast = parse(str(src))
            for labels, expanded in replicate(ast, space, free):
                out_key = join_key(base, labels)
                port = builder.build(expanded)
                model.register(out_key, port)
                compiled[out_key] = port
        except ConfigError:
            raise
        except DagfitError as exc:
            raise ConfigError(str(exc), key=key) from None

    for name, value in cfg.overrides.items():
        try:
            model.params[name].set(float(value))
        except (DagfitError, TypeError, ValueError) as exc:
            raise ConfigError(str(exc), key=f"overrides.{name}") from None

    statistic = _statistic(cfg.statistic, model)
    problem = _problem(cfg.fit, model, statistic)
    return BuiltModel(cfg, model, statistic, problem, compiled)


def _lookup_ports(model: Model, names, key: str):
    ports = []
    for n in _keys(names):
        try:
            entry = model.lookup(n)
        except DagfitError:
            raise ConfigError(f"unknown output '{n}'", key=key) from None
        ports.append(entry.output if hasattr(entry, "output") else entry)
    return ports


def _statistic(spec: dict, model: Model) -> Statistic:
    allowed = ("kind", "prediction", "data", "pulls", "covariance")
    extra = [k for k in spec if k not in allowed]
    if extra:
        raise ConfigError("unknown key", key=f"statistic.{extra[0]}")
    for k in ("kind", "prediction", "data"):
        if k not in spec:
            raise ConfigError("missing", key=f"statistic.{k}")
    kind = spec["kind"]
    if kind not in ("chi2", "poisson"):
        raise ConfigError(f"unknown statistic kind '{kind}'", key="statistic.kind")
    pred = _lookup_ports(model, spec["prediction"], "statistic.prediction")
    data = _lookup_ports(model, spec["data"], "statistic.data")
    pulls_spec = spec.get("pulls", "constrained")
    try:
        if pulls_spec == "constrained":
            pulls = model.params.constrained()
        else:
            pulls = [model.params[n] for n in _keys(pulls_spec or [])]
    except DagfitError as exc:
        raise ConfigError(str(exc), key="statistic.pulls") from None
    cov = None
    if kind == "chi2":
        cspec = spec.get("covariance") or {}
        stat = cspec.get("stat", "prediction")
        if stat == "fixed":
            stat = np.asarray(cspec.get("matrix"), dtype=np.float64)
        elif stat not in ("prediction", "data"):
            raise ConfigError(f"unknown statistical covariance '{stat}'", key="statistic.covariance.stat")
        cov = CovarianceModel(stat=stat, syst=list(cspec.get("syst", [])))
    try:
        return Statistic(kind, pred, data, model.params, pulls=pulls, covariance=cov)
    except DagfitError as exc:
        raise ConfigError(str(exc), key="statistic") from None


def _problem(spec: dict, model: Model, statistic: Statistic) -> FitProblem:
    allowed = ("free", "ftol", "xtol", "maxfev", "restarts", "recompute_covariance")
    extra = [k for k in spec if k not in allowed]
    if extra:
        raise ConfigError("unknown key", key=f"fit.{extra[0]}")
    try:
        free = [model.params[n] for n in spec["free"]] if "free" in spec else model.params.free()
        opts = {k: spec[k] for k in allowed[1:] if k in spec}
        return FitProblem(statistic, free, **opts)
    except (DagfitError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc), key="fit") from None


def load_and_build(path) -> BuiltModel:
    return build(load_config(path))
