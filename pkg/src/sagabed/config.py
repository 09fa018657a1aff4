"""Experiment configuration files.

A config is a YAML mapping.  Unknown keys are rejected and every error names
the offending key together with its line in the file.  A run manifest
(``manifest.json``) is itself accepted as a config: its ``config`` entry is
used, which makes every run re-playable from its manifest alone.
"""

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .bed_loop import DESIGN_GRADIENTS, BedConfig
from .exceptions import ConfigError, SagabedError
from .grad_free import EsConfig
from .mi_estimators import CRITIC_OBJECTIVES, DEFAULT_TAU
from .models import MODELS
from .posterior import DEFAULT_TARGET_ACCEPTANCE, SAMPLERS

REQUIRED = ("model", "n_measurements", "n_epochs", "n_samples", "lr_psi", "lr_xi")


@dataclass
class NmcSettings:
    enabled: bool = False
    n_outer: int = 1000
    n_inner: int = 1000
    seed: int = 0


@dataclass
class PosteriorSettings:
    sampler: str = "mh"
    chain_len: int = 50_000
    burn_in: int = 10_000
    thin: int = 1
    proposal_scale: list = None
    target_acceptance: float = DEFAULT_TARGET_ACCEPTANCE
    pool_size: int = 100_000
    n_draws: int = 10_000
    seed: int = 0


@dataclass
class ExperimentConfig:
    model: str
    n_measurements: int
    n_epochs: int
    n_samples: int
    lr_psi: float
    lr_xi: float
    tau: float = DEFAULT_TAU
    hidden_layers: list = field(default_factory=lambda: [100])
    design_gradient: str = "ges"
    critic_objective: str = "js"
    es: dict = field(default_factory=dict)
    seed: int = 0
    n_jobs: int = 1
    model_options: dict = field(default_factory=dict)
    initial_design: list = None
    theta_true: list = None
    output_dir: str = None
    nmc: NmcSettings = field(default_factory=NmcSettings)
    posterior: PosteriorSettings = field(default_factory=PosteriorSettings)

    def bed_config(self):
        es = EsConfig.for_dimension(self.build_model().design_dim, **self.es) if self.es else None
        return BedConfig(
            model=self.model,
            n_measurements=self.n_measurements,
            n_epochs=self.n_epochs,
            n_samples=self.n_samples,
            lr_psi=self.lr_psi,
            lr_xi=self.lr_xi,
            tau=self.tau,
            hidden_layers=tuple(self.hidden_layers),
            design_gradient=self.design_gradient,
            critic_objective=self.critic_objective,
            es=es,
            seed=self.seed,
            model_options=dict(self.model_options),
            initial_design=None if self.initial_design is None else tuple(self.initial_design),
            n_jobs=self.n_jobs,
        )

    def build_model(self):
        model = MODELS[self.model](self.n_measurements, **self.model_options)
        if self.theta_true is not None:
            model.theta_true = tuple(float(v) for v in self.theta_true)
        return model

    def to_dict(self):
        return asdict(self)


_INT = ("n_measurements", "n_epochs", "n_samples", "seed", "n_jobs")
_FLOAT = ("lr_psi", "lr_xi", "tau")
_ES_KEYS = {"sigma": float, "num_pairs": int, "alpha": float, "k": int}


def _line(node):
    return node.start_mark.line + 1


def _scalar(value, kind, key, line):
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"expected an integer, got {value!r}", key=key, line=line)
        return int(value)
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", key=key, line=line)
        return float(value)
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"expected true/false, got {value!r}", key=key, line=line)
        return value
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", key=key, line=line)
        return value
    return value


def _mapping_lines(node):
    """``{key: line}`` for a YAML mapping node."""
    if not isinstance(node, yaml.MappingNode):
        return {}
    return {k.value: _line(k) for k, _ in node.value}


def _sub_settings(cls, raw, key, node_lines, parent_line):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError("expected a mapping", key=key, line=parent_line)
    known = {f.name: f for f in fields(cls)}
    out = {}
    for name, value in raw.items():
        line = node_lines.get(name, parent_line)
        if name not in known:
            raise ConfigError(f"unknown key (allowed: {sorted(known)})", key=f"{key}.{name}", line=line)
        default = known[name].default
        if value is None or isinstance(default, list) or default is None:
            out[name] = value
        else:
            out[name] = _scalar(value, type(default), f"{key}.{name}", line)
    return cls(**out)


def parse_config(text, source="<string>"):
    """Parse and validate config text; raises :class:`ConfigError` naming key and line."""
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"{source}: not valid YAML: {exc}", line=mark.line + 1 if mark else None) from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    lines = _mapping_lines(root)
    children = {}
    if isinstance(root, yaml.MappingNode):
        children = {k.value: v for k, v in root.value}
    if "config" in data and "manifest_version" in data:
        # a run manifest: replay the recorded configuration
        root = children["config"]
        data = data["config"]
        lines = _mapping_lines(root)
        children = {k.value: v for k, v in root.value}

    known = {f.name for f in fields(ExperimentConfig)}
    for key in data:
        if key not in known:
            raise ConfigError(f"unknown key (allowed: {sorted(known)})", key=key, line=lines.get(key))
    for key in REQUIRED:
        if key not in data:
            raise ConfigError(f"{source}: required key is missing", key=key)

    def line_of(key):
        return lines.get(key)

    kw = {}
    for key in _INT:
        if key in data:
            kw[key] = _scalar(data[key], int, key, line_of(key))
    for key in _FLOAT:
        if key in data:
            kw[key] = _scalar(data[key], float, key, line_of(key))
    for key in ("model", "design_gradient", "critic_objective", "output_dir"):
        if key in data and data[key] is not None:
            kw[key] = _scalar(data[key], str, key, line_of(key))

    choices = {"model": tuple(MODELS), "design_gradient": DESIGN_GRADIENTS, "critic_objective": CRITIC_OBJECTIVES}
    for key, allowed in choices.items():
        if key in kw and kw[key] not in allowed:
            raise ConfigError(f"'{kw[key]}' is not one of {list(allowed)}", key=key, line=line_of(key))

    for key in ("hidden_layers", "initial_design", "theta_true"):
        if key in data and data[key] is not None:
            value = data[key]
            if not isinstance(value, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
                raise ConfigError("expected a list of numbers", key=key, line=line_of(key))
            kw[key] = [int(v) for v in value] if key == "hidden_layers" else [float(v) for v in value]

    if "model_options" in data and data["model_options"] is not None:
        if not isinstance(data["model_options"], dict):
            raise ConfigError("expected a mapping", key="model_options", line=line_of("model_options"))
        kw["model_options"] = dict(data["model_options"])

    if "es" in data and data["es"] is not None:
        es = data["es"]
        if not isinstance(es, dict):
            raise ConfigError("expected a mapping", key="es", line=line_of("es"))
        es_lines = _mapping_lines(children.get("es"))
        kw["es"] = {}
        for name, value in es.items():
            if name not in _ES_KEYS:
                raise ConfigError(f"unknown key (allowed: {sorted(_ES_KEYS)})", key=f"es.{name}", line=es_lines.get(name))
            kw["es"][name] = _scalar(value, _ES_KEYS[name], f"es.{name}", es_lines.get(name))

    for key, cls in (("nmc", NmcSettings), ("posterior", PosteriorSettings)):
        if key in data:
            kw[key] = _sub_settings(cls, data[key], key, _mapping_lines(children.get(key)), line_of(key))

    cfg = ExperimentConfig(**kw)
    _check_semantics(cfg, line_of)
    return cfg


def _check_semantics(cfg, line_of):
    """Run the value checks of the underlying objects and attach the key's line."""
    if cfg.posterior.sampler not in SAMPLERS:
        raise ConfigError(f"'{cfg.posterior.sampler}' is not one of {list(SAMPLERS)}", key="posterior.sampler", line=line_of("posterior"))
    try:
        model = cfg.build_model()
        cfg.bed_config()
    except ConfigError as exc:
        if exc.line is None and exc.key is not None:
            raise ConfigError(str(exc).split(": ", 1)[-1], key=exc.key, line=line_of(exc.key)) from exc
        raise
    except (TypeError, SagabedError, ValueError) as exc:
        key = "model_options" if isinstance(exc, TypeError) else "model"
        raise ConfigError(str(exc), key=key, line=line_of(key)) from exc
    if cfg.initial_design is not None:
        xi = np.asarray(cfg.initial_design)
        if xi.size != model.design_dim or not model.domain.contains(xi):
            raise ConfigError(
                f"needs {model.design_dim} values inside the design box", key="initial_design", line=line_of("initial_design")
            )
    if cfg.theta_true is not None and len(cfg.theta_true) != model.theta_dim:
        raise ConfigError(f"needs {model.theta_dim} values", key="theta_true", line=line_of("theta_true"))


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from exc
    return parse_config(text, source=str(path))


def dump_config(cfg):
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
