"""Experiment configuration: a single YAML document with nested key-value
sections, validated with field-level messages and hashed for provenance.

Environment variables override only the output directory (DISCDS_OUT) and the
worker count (DISCDS_THREADS); everything else comes from the file.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .augment import MIXUP_MODES
from .guidance import (AnnealConfig, GuidancePolicy, KIND_CADS, KIND_CCFG,
                       KIND_CFG, KIND_DISC_DS, POLICY_KINDS, TAU_DYNAMIC,
                       TAU_FIXED, DIST_CFG_OUTPUT, DIST_CONDITIONAL)
from .features import (EXTRACTOR_IDENTITY, EXTRACTOR_RANDOM_PROJECTION,
                       FeatureExtractor)
from .sampler import INIT_FROM_REAL, INIT_PURE_NOISE, STEPPERS, SamplerConfig
from .train import CLF_LINEAR, CLF_MLP, TrainConfig
from .world import GaussianMixtureWorld, load_preset


class ConfigError(Exception):
    """Invalid experiment configuration; message names the offending field."""


class InvariantError(Exception):
    """An internal consistency contract was violated."""


_GUIDANCE_DEFAULTS = {"w": 2.0, "tau1": 0.5, "tau2": 0.9, "s": 0.1,
                      "psi": 1.0, "tau": 0.8, "alpha": 0.8}

# which policy fields each kind may set in the config
_FIELDS_BY_KIND = {
    KIND_CFG: {"w"},
    KIND_CADS: {"w", "tau1", "tau2", "s", "psi"},
    KIND_CCFG: {"w", "tau", "tau_mode", "anneal", "tau1", "tau2", "s", "psi",
                "distance_mode"},
    KIND_DISC_DS: {"w", "tau", "tau_mode", "tau1", "tau2", "s", "psi", "alpha",
                   "distance_mode"},
}


@dataclass
class ExperimentConfig:
    world: GaussianMixtureWorld
    world_spec: dict
    schedule_params: dict
    sampler: SamplerConfig
    policies: list[tuple[str, GuidancePolicy]]
    reference_per_class: int
    extractor: FeatureExtractor
    longtail_n_max: int
    imbalance_factor: float
    train: TrainConfig
    mixup_modes: list[str]
    head_threshold: int
    test_per_class: int
    include_baseline: bool
    seeds: list[int]
    out: Path
    threads: int
    resolved: dict = field(repr=False, default_factory=dict)

    @property
    def config_hash(self) -> str:
        """Hash of everything that determines results (not out/threads)."""
        body = {k: v for k, v in self.resolved.items() if k not in ("out", "threads")}
        blob = json.dumps(body, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def policy(self, name: str) -> GuidancePolicy:
        for n, p in self.policies:
            if n == name:
                return p
        raise ConfigError(f"no policy named '{name}' in the grid")


def _require(cond: bool, msg: str):
    if not cond:
        raise ConfigError(msg)


def _section(doc: dict, name: str, default=None) -> dict:
    sec = doc.get(name, default if default is not None else {})
    _require(isinstance(sec, dict), f"{name}: expected a mapping")
    return sec


def _num(sec: dict, path: str, key: str, default, lo=None, hi=None):
    v = sec.get(key, default)
    _require(isinstance(v, (int, float)) and not isinstance(v, bool),
             f"{path}.{key}: expected a number, got {v!r}")
    if lo is not None:
        _require(v >= lo, f"{path}.{key}: must be >= {lo}, got {v}")
    if hi is not None:
        _require(v <= hi, f"{path}.{key}: must be <= {hi}, got {v}")
    return v


def _choice(sec: dict, path: str, key: str, default, options):
    v = sec.get(key, default)
    _require(v in options, f"{path}.{key}: must be one of {sorted(options)}, got {v!r}")
    return v


def build_policy(entry: dict, defaults: dict, path: str) -> tuple[str, GuidancePolicy]:
    _require(isinstance(entry, dict), f"{path}: expected a mapping")
    kind = entry.get("kind")
    _require(kind in POLICY_KINDS, f"{path}.kind: must be one of {POLICY_KINDS}, got {kind!r}")
    name = entry.get("name", kind)
    allowed = _FIELDS_BY_KIND[kind] | {"kind", "name"}
    for key in entry:
        _require(key in allowed, f"{path}.{key}: not allowed for kind '{kind}'")

    def get(key, lo=None, hi=None):
        return _num(entry, path, key, defaults[key], lo, hi)

    w = get("w")
    anneal = None
    wants_anneal = kind in (KIND_CADS, KIND_DISC_DS) or (
        kind == KIND_CCFG and entry.get("anneal", False))
    if wants_anneal:
        anneal = AnnealConfig(tau1=get("tau1", 0.0, 1.0), tau2=get("tau2", 0.0, 1.0),
                              s=get("s", 0.0), psi=get("psi", 0.0, 1.0))
    tau = get("tau", 0.0)
    default_mode = TAU_DYNAMIC if kind == KIND_DISC_DS else TAU_FIXED
    tau_mode = _choice(entry, path, "tau_mode", default_mode, (TAU_FIXED, TAU_DYNAMIC))
    dist = _choice(entry, path, "distance_mode", DIST_CONDITIONAL,
                   (DIST_CONDITIONAL, DIST_CFG_OUTPUT))
    try:
        policy = GuidancePolicy(kind=kind, w=w, anneal=anneal, tau=tau,
                                tau_mode=tau_mode, alpha=get("alpha", 0.0, 1.0),
                                distance_mode=dist)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return str(name), policy


def load_config(path: str | Path, *, out_override=None, seeds_override=None,
                threads_override=None) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from exc
    _require(isinstance(doc, dict), f"{path}: top level must be a mapping")

    world_spec = doc.get("world")
    _require(world_spec is not None, "world: required (preset name or inline spec)")
    try:
        if isinstance(world_spec, str):
            world = load_preset(world_spec)
            world_spec_resolved = world.to_dict()
        else:
            _require(isinstance(world_spec, dict), "world: expected a name or mapping")
            world = GaussianMixtureWorld.from_dict(world_spec)
            world_spec_resolved = world.to_dict()
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"world: {exc}") from exc

    sched = _section(doc, "schedule")
    schedule_params = {
        "train_steps": int(_num(sched, "schedule", "train_steps", 1000, lo=2)),
        "beta_min": _num(sched, "schedule", "beta_min", 1e-4),
        "beta_max": _num(sched, "schedule", "beta_max", 0.02),
    }
    _require(0 < schedule_params["beta_min"] <= schedule_params["beta_max"] < 1,
             "schedule: need 0 < beta_min <= beta_max < 1")

    samp = _section(doc, "sampler")
    steps = int(_num(samp, "sampler", "steps", 50, lo=1))
    _require(steps <= schedule_params["train_steps"],
             "sampler.steps: may not exceed schedule.train_steps")
    sampler = SamplerConfig(
        num_steps=steps,
        stepper=_choice(samp, "sampler", "stepper", "ddim", STEPPERS),
        init=_choice(samp, "sampler", "init", INIT_PURE_NOISE,
                     (INIT_PURE_NOISE, INIT_FROM_REAL)),
        strength=_num(samp, "sampler", "strength", 0.8, lo=1e-9, hi=1.0),
    )

    guid = _section(doc, "guidance")
    defaults = dict(_GUIDANCE_DEFAULTS)
    user_defaults = guid.get("defaults", {})
    _require(isinstance(user_defaults, dict), "guidance.defaults: expected a mapping")
    for k, v in user_defaults.items():
        _require(k in defaults, f"guidance.defaults.{k}: unknown parameter")
        _require(isinstance(v, (int, float)) and not isinstance(v, bool),
                 f"guidance.defaults.{k}: expected a number")
        defaults[k] = float(v)
    entries = guid.get("policies", [{"kind": KIND_CADS}])
    _require(isinstance(entries, list) and entries,
             "guidance.policies: expected a non-empty list")
    policies = [build_policy(e, defaults, f"guidance.policies[{i}]")
                for i, e in enumerate(entries)]
    names = [n for n, _ in policies]
    _require(len(set(names)) == len(names),
             f"guidance.policies: duplicate policy names {names}")

    ref = _section(doc, "reference")
    per_class = int(_num(ref, "reference", "per_class", 64, lo=1))
    ext_kind = _choice(ref, "reference", "extractor", EXTRACTOR_IDENTITY,
                       (EXTRACTOR_IDENTITY, EXTRACTOR_RANDOM_PROJECTION))
    extractor = FeatureExtractor(kind=ext_kind,
                                 out_dim=int(_num(ref, "reference", "proj_dim", 8, lo=1)),
                                 seed=int(_num(ref, "reference", "proj_seed", 0)))

    lt = _section(doc, "longtail")
    n_max = int(_num(lt, "longtail", "n_max", 200, lo=1))
    imb = _num(lt, "longtail", "imbalance_factor", 100.0, lo=1.0)
    _require(world.num_classes >= 2 or imb == 1,
             "longtail.imbalance_factor: an imbalanced profile needs >= 2 classes")

    tr = _section(doc, "train")
    modes = tr.get("mixup_modes", [tr.get("mixup", "random")])
    _require(isinstance(modes, list) and modes, "train.mixup_modes: expected a non-empty list")
    for m in modes:
        _require(m in MIXUP_MODES, f"train.mixup_modes: unknown mode {m!r}")
    train = TrainConfig(
        epochs=int(_num(tr, "train", "epochs", 150, lo=1)),
        batch_size=int(_num(tr, "train", "batch_size", 512, lo=1)),
        lr=_num(tr, "train", "lr", 0.01, lo=1e-12),
        momentum=_num(tr, "train", "momentum", 0.9, lo=0.0, hi=1.0),
        mixup_mode=modes[0],
        mixup_beta_a=_num(tr, "train", "mixup_beta", 1.0, lo=1e-9),
        classifier=_choice(tr, "train", "classifier", CLF_LINEAR, (CLF_LINEAR, CLF_MLP)),
        hidden=int(_num(tr, "train", "hidden", 32, lo=1)),
    )
    head_threshold = int(_num(tr, "train", "head_threshold", 20, lo=1))
    test_per_class = int(_num(tr, "train", "test_per_class", 500, lo=1))
    include_baseline = bool(tr.get("include_baseline", True))

    seeds = seeds_override if seeds_override is not None else doc.get("seeds", [1, 2, 3, 4, 5])
    _require(isinstance(seeds, list) and seeds and all(isinstance(s, int) for s in seeds),
             "seeds: expected a non-empty list of integers")

    out = out_override or os.environ.get("DISCDS_OUT") or doc.get("out", "runs/out")
    threads = threads_override or int(os.environ.get("DISCDS_THREADS", "0")) \
        or int(doc.get("threads", 1))
    _require(threads >= 1, "threads: must be >= 1")

    resolved = {
        "world": world_spec_resolved,
        "schedule": schedule_params,
        "sampler": {"steps": sampler.num_steps, "stepper": sampler.stepper,
                    "init": sampler.init, "strength": sampler.strength},
        "guidance": {"defaults": defaults,
                     "policies": [{"name": n, **_policy_dict(p)} for n, p in policies]},
        "reference": {"per_class": per_class, "extractor": ext_kind,
                      "proj_dim": extractor.out_dim, "proj_seed": extractor.seed},
        "longtail": {"n_max": n_max, "imbalance_factor": imb},
        "train": {"epochs": train.epochs, "batch_size": train.batch_size,
                  "lr": train.lr, "momentum": train.momentum,
                  "mixup_modes": list(modes), "mixup_beta": train.mixup_beta_a,
                  "classifier": train.classifier, "hidden": train.hidden,
                  "head_threshold": head_threshold,
                  "test_per_class": test_per_class,
                  "include_baseline": include_baseline},
        "seeds": list(seeds),
    }

    return ExperimentConfig(
        world=world, world_spec=world_spec_resolved, schedule_params=schedule_params,
        sampler=sampler, policies=policies, reference_per_class=per_class,
        extractor=extractor, longtail_n_max=n_max, imbalance_factor=imb,
        train=train, mixup_modes=list(modes), head_threshold=head_threshold,
        test_per_class=test_per_class, include_baseline=include_baseline,
        seeds=list(seeds), out=Path(out), threads=int(threads), resolved=resolved)


def _policy_dict(p: GuidancePolicy) -> dict:
    d = {"kind": p.kind, "w": p.w, "tau": p.tau, "tau_mode": p.tau_mode,
         "alpha": p.alpha, "distance_mode": p.distance_mode}
    if p.anneal is not None:
        d["anneal"] = {"tau1": p.anneal.tau1, "tau2": p.anneal.tau2,
                       "s": p.anneal.s, "psi": p.anneal.psi}
    return d
