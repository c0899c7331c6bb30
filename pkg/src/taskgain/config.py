"""INI config files mapped onto :class:`~taskgain.experiment.ExperimentConfig`.

Sections group related knobs ([run], [sim], [eki], [selection], [surrogate],
[train]); every key is optional and falls back to the dataclass default.
Unknown sections or keys are errors, as are values that fail validation, and
all of it surfaces as :class:`ConfigError` so the CLI can map configuration
problems to their own exit code.
"""

from __future__ import annotations

import configparser
from pathlib import Path

from .eki import EkiConfig
from .errors import ConfigError
from .experiment import ExperimentConfig
from .selection import SelectionBudgets
from .simulate import SimConfig
from .surrogate import AcquisitionSchedule

_BOOL = "bool"
_INT = "int"
_FLOAT = "float"
_STR = "str"

_SCHEMA: dict[str, dict[str, str]] = {
    "run": {
        "method": _STR,
        "seed": _INT,
        "runs": _INT,
        "pool_size": _INT,
        "pool_file": _STR,
        "eval_file": _STR,
        "embed_dim": _INT,
        "score_mode": _STR,
        "eval_tasks": _INT,
        "eval_masks": _INT,
        "reliability": _FLOAT,
    },
    "sim": {
        "n_agents": _INT,
        "n_fake": _INT,
        "n_rounds": _INT,
        "belief_noise": _FLOAT,
        "own_weight": _FLOAT,
    },
    "eki": {
        "ensemble_size": _INT,
        "prior_std": _FLOAT,
        "obs_noise": _FLOAT,
        "damping": _FLOAT,
        "n_steps": _INT,
        "perturb_obs": _BOOL,
        "full_covariance_kl": _BOOL,
    },
    "selection": {
        "initial_pool": _INT,
        "representative": _INT,
        "eval_budget": _INT,
        "final": _INT,
        "strategy": _STR,
        "metric": _STR,
    },
    "surrogate": {
        "n_init": _INT,
        "rounds": _INT,
        "batch": _INT,
        "pls_components": _INT,
    },
    "train": {
        "repetitions": _INT,
        "samples_per_step": _INT,
        "lr": _FLOAT,
        "use_baseline": _BOOL,
        "baseline_decay": _FLOAT,
        "init_logit": _FLOAT,
    },
}


def _convert(section: str, key: str, raw: str, kind: str):
    try:
        if kind == _INT:
            return int(raw)
        if kind == _FLOAT:
            return float(raw)
        if kind == _BOOL:
            lowered = raw.strip().lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: {exc}") from None


def _section(parser: configparser.ConfigParser, name: str) -> dict:
    if name not in parser:
        return {}
    out = {}
    schema = _SCHEMA[name]
    for key, raw in parser[name].items():
        if key not in schema:
            raise ConfigError(f"unknown key {key!r} in section [{name}]")
        out[key] = _convert(name, key, raw, schema[key])
    return out


def load_config(
    path=None,
    method: str | None = None,
    seed: int | None = None,
    runs: int | None = None,
) -> ExperimentConfig:
    """Parse an INI file (or defaults) plus CLI overrides into a config."""
    parser = configparser.ConfigParser()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            parser.read_string(path.read_text(), source=str(path))
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from None
        unknown = set(parser.sections()) - set(_SCHEMA)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")

    run_kwargs = _section(parser, "run")
    if method is not None:
        run_kwargs["method"] = method
    if seed is not None:
        run_kwargs["seed"] = seed
    if runs is not None:
        run_kwargs["runs"] = runs

    selection = _section(parser, "selection")
    strategy = selection.pop("strategy", None)
    metric = selection.pop("metric", None)
    surrogate = _section(parser, "surrogate")
    pls_components = surrogate.pop("pls_components", None)
    train_kwargs = _section(parser, "train")
    if "lr" in train_kwargs:
        train_kwargs["train_lr"] = train_kwargs.pop("lr")

    try:
        cfg = ExperimentConfig(
            sim=SimConfig(**_section(parser, "sim")),
            eki=EkiConfig(**_section(parser, "eki")),
            budgets=SelectionBudgets(**selection),
            schedule=AcquisitionSchedule(**surrogate),
            **run_kwargs,
            **train_kwargs,
            **{
                k: v
                for k, v in {
                    "strategy": strategy,
                    "metric": metric,
                    "pls_components": pls_components,
                }.items()
                if v is not None
            },
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg
