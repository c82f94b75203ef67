"""Run configuration: one JSON file, overridden by command-line flags."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from .model import ModelConfig
from .synth import SyntheticSpec
from .text_encoder import TfrConfig

ABLATIONS = ("ifr", "tfr", "ca")


class ConfigError(ValueError):
    """Bad or inconsistent configuration (maps to exit code 2)."""


@dataclass
class RunConfig:
    seed: int = 0
    cap: int = 200
    rules: str | None = None
    normalize_saliency: bool = False
    # default file locations, keyed by flag name (dataset, segments, triplets, tfr, checkpoint, ...)
    paths: dict = field(default_factory=dict)
    synth: SyntheticSpec = field(default_factory=SyntheticSpec)
    tfr: TfrConfig = field(default_factory=TfrConfig)
    model: ModelConfig = field(default_factory=ModelConfig)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["synth"].pop("templates", None)
        return d


def _build(cls, obj, where):
    if obj is None:
        return cls()
    if not isinstance(obj, dict):
        raise ConfigError(f"{where} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(obj) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    try:
        return cls(**obj)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def load_run_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    raw = dict(raw)
    synth = raw.pop("synth", None)
    if isinstance(synth, dict) and "state_probs" in synth:
        synth = {**synth, "state_probs": tuple(synth["state_probs"])}
    cfg = RunConfig(
        synth=_build(SyntheticSpec, synth, "synth"),
        tfr=_build(TfrConfig, raw.pop("tfr", None), "tfr"),
        model=_build(ModelConfig, raw.pop("model", None), "model"),
    )
    for key, value in raw.items():
        if key not in ("seed", "cap", "rules", "normalize_saliency", "paths"):
            raise ConfigError(f"{path}: unknown key {key!r}")
        setattr(cfg, key, value)
    return cfg


def apply_overrides(cfg: RunConfig, args) -> RunConfig:
    """Copy explicitly-given flags from an argparse namespace onto ``cfg`` (flags win)."""
    def given(name):
        return getattr(args, name, None) is not None

    if given("seed"):
        cfg.seed = args.seed
    # one seed drives every stage
    cfg.tfr.seed = cfg.model.seed = cfg.seed
    if given("cap"):
        cfg.cap = args.cap
    if given("rules"):
        cfg.rules = args.rules
    if getattr(args, "normalize_saliency", False):
        cfg.normalize_saliency = True
    if given("alpha"):
        cfg.model.ifr.alpha = args.alpha
    if given("beta"):
        cfg.tfr.beta = args.beta
        cfg.model.weights.beta = args.beta
    if given("tau"):
        cfg.model.weights.tau = args.tau
    if given("lambda_cls_i"):
        cfg.model.weights.lambda_cls_i = args.lambda_cls_i
    if given("lambda_itc"):
        cfg.model.weights.lambda_itc = args.lambda_itc
    if given("triplet_form"):
        cfg.tfr.triplet_form = args.triplet_form
    if given("steps"):
        if getattr(args, "command", "") == "train-tfr":
            cfg.tfr.steps = args.steps
        else:
            cfg.model.steps = args.steps
    for name in getattr(args, "ablate", None) or ():
        setattr(cfg.model, f"use_{name}", False)
    try:
        # re-run the validators on the edited values
        type(cfg.model.weights)(**asdict(cfg.model.weights))
        type(cfg.model.ifr)(**asdict(cfg.model.ifr))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg.cap < 0:
        raise ConfigError("--cap must be >= 0")
    if cfg.tfr.triplet_form not in ("standard", "literal"):
        raise ConfigError(f"unknown triplet form {cfg.tfr.triplet_form!r}")
    return cfg
