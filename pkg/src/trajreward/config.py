"""Declarative run configuration with CLI-flag overrides.

A run is reproducible from its config alone: every random choice flows
from the single seed, and the resolved config is echoed into the output
directory of each command.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .rewards import CuriosityConfig
from .trajectory import SegmentationRules


@dataclass
class ScorerConfig:
    source: str = "toy"  # toy | file | http
    cache_path: str | None = None
    base_url: str | None = None
    timeout: float = 10.0
    attempts: int = 3
    backoff: float = 0.1
    toy: dict = field(
        default_factory=lambda: {
            "vocabulary": ["a", "b", "c", "d"],
            "order": 2,
            "seed": 0,
            "init": "dirichlet",
            "boosts": [],
        }
    )


@dataclass
class RewardConfig:
    variant: str = "vector"  # linear | vector
    curiosity: bool = True
    curiosity_weight: float = 1.0
    curiosity_mode: str = "eq10"  # eq10 | alg2
    curiosity_denominator: str = "step"  # step | prefix

    def curiosity_config(self) -> CuriosityConfig:
        return CuriosityConfig(self.curiosity_mode, self.curiosity_denominator)


@dataclass
class SimulateConfig:
    preset: str = "collapse"  # collapse | convergence | elbo | growth-bound | robustness-probe
    pi0: list = field(default_factory=lambda: [0.6, 0.4])
    truth_index: int = 1
    mode: str = "exact"  # exact | sampled
    target: float = 0.99
    step_size: float = 1e-2
    max_time: float = 80.0
    integrator: str = "euler"
    kl_coefficient: float = 0.0
    sample_count: int = 16
    record_every: int = 10
    n_groups: int = 10_000
    n_latent: int = 3
    n_outputs: int = 4


@dataclass
class RunConfig:
    input: str | None = None
    out: str = "runs/out"
    seed: int = 0
    workers: int = 1
    scorer: ScorerConfig = field(default_factory=ScorerConfig)
    segmentation: SegmentationRules = field(default_factory=SegmentationRules)
    reward: RewardConfig = field(default_factory=RewardConfig)
    simulate: SimulateConfig = field(default_factory=SimulateConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def echo(self, out_dir: Path) -> None:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "resolved_config.json", "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=2)
            fh.write("\n")


def _merge_section(cls, data: dict | None):
    obj = cls()
    for key, value in (data or {}).items():
        if not hasattr(obj, key):
            raise ValueError(f"unknown {cls.__name__} field {key!r}")
        setattr(obj, key, value)
    return obj


def load_config(path: str | None) -> RunConfig:
    """Build a RunConfig from a YAML document (missing path: defaults)."""
    data: dict = {}
    if path:
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
    cfg = RunConfig(
        input=data.get("input"),
        out=data.get("out", "runs/out"),
        seed=int(data.get("seed", 0)),
        workers=int(data.get("workers", 1)),
        scorer=_merge_section(ScorerConfig, data.get("scorer")),
        reward=_merge_section(RewardConfig, data.get("reward")),
        simulate=_merge_section(SimulateConfig, data.get("simulate")),
    )
    seg = data.get("segmentation") or {}
    cfg.segmentation = SegmentationRules(
        delimiter=seg.get("delimiter", SegmentationRules.delimiter),
        min_step_chars=int(seg.get("min_step_chars", SegmentationRules.min_step_chars)),
        answer_pattern=seg.get("answer_pattern", SegmentationRules.answer_pattern),
        use_last_step_fallback=bool(
            seg.get("use_last_step_fallback", SegmentationRules.use_last_step_fallback)
        ),
    )
    return cfg


def apply_overrides(cfg: RunConfig, args) -> RunConfig:
    """Apply explicitly-set CLI flags on top of the config file."""
    if getattr(args, "input", None) is not None:
        cfg.input = args.input
    if getattr(args, "out", None) is not None:
        cfg.out = args.out
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "workers", None) is not None:
        cfg.workers = args.workers
    if getattr(args, "scorer", None) is not None:
        cfg.scorer.source = args.scorer
    if getattr(args, "variant", None) is not None:
        cfg.reward.variant = args.variant
    if getattr(args, "curiosity_mode", None) is not None:
        cfg.reward.curiosity_mode = args.curiosity_mode
    if getattr(args, "preset", None) is not None:
        cfg.simulate.preset = args.preset
    return cfg
