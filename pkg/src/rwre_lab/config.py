"""Run configuration: one declarative YAML file, merged over the desk preset."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .env import EnvModel, ModelError, solve_kappa

EXPERIMENTS = ("kappa", "tail", "velocity", "averaged", "poisson", "identity", "metric",
               "limit_sampler", "coupling", "weakweak", "selftest")

# experiments whose statistics rest on a stable limit and need kappa in (0, 2)
LIMIT_EXPERIMENTS = ("averaged", "poisson", "identity", "limit_sampler", "coupling", "weakweak", "selftest")

DESK_PRESET: dict[str, Any] = {
    "model": {"family": "beta", "a": 3.0, "b": 1.5},
    "model_small": {"family": "beta", "a": 1.6, "b": 1.0},
    "tolerances": {"tol_W": 1e-10, "tol_metric": 1e-9, "tol_delta": 1e-6},
    "simulate": {"environments": 1, "n": 100, "eps": 0.01},
    "limit": {"samples": 1000, "delta": 0.01, "horizon": 1.0, "paths": 10},
    "metric": {"kind": "M1", "paths_a": None, "paths_b": None},
    "experiments": {
        "kappa": {"models": [[3.0, 1.5], [2.0, 1.0], [1.6, 1.0]], "kappa_tol": 1e-6, "moment_tol": 1e-8},
        "tail": {"blocks": 100000, "hill_k": 250, "hill_band": [1.35, 1.65],
                 "bands": [[0.00025, 0.0025], [0.0005, 0.005], [0.001, 0.01]], "band_spread": 0.15},
        "velocity": {"walks": 100, "steps": 100000, "sigmas": 4.0, "blocks": 10000000,
                     "tail_frac": 0.001, "ratio_band": [0.97, 1.03]},
        "averaged": {"n": 10000, "replicates": 10000, "ks_max": 0.02,
                     "small_n": 1000, "small_replicates": 10000, "small_cap": 20000000,
                     "small_steps": 150000, "decile_gap_max": 0.03},
        "poisson": {"eps": 0.001, "delta": 1.0, "environments": 1000, "windows": 10,
                    "c0_blocks": 1000000, "ratio_band": [0.9, 1.1], "corr_max": 0.05,
                    "mean_rel_tol": 0.10},
        "identity": {"eps_grid": [0.01, 0.001, 0.0001], "environments": 20, "rel_tol": 1e-12},
        "metric": {"pairs": 200, "triples": 200, "delta": 0.01, "vignette_n": [1, 2, 3, 4, 5, 6, 7, 8]},
        "limit_sampler": {"replicates": 10000, "delta": 0.01, "sigmas": 4.0,
                          "stability_samples": 100000, "stability_ks": 0.02,
                          "sampler_n": 100000, "sampler_ks": 0.01, "lam": 1.0},
        "coupling": {"eps_grid": [0.01, 0.001, 0.0001], "n_grid": [1000, 10000, 100000],
                     "environments": 100, "walks": 20, "smallblem_delta": 0.1,
                     "centering_blocks": 10000000, "tol_metric": 1e-4},
        "weakweak": {"eps": 0.0001, "environments": 1000, "walks": 101, "delta_time": 0.01,
                     "delta_position": 0.001, "limit_samples": 10000, "c0_blocks": 10000000,
                     "c0_band": [0.00003, 0.0003], "ks_time": 0.05, "ks_position": 0.07,
                     "pattern_horizon": 50.0},
        "selftest": {"samples": 10000, "walks": 101, "delta_time": 0.01, "delta_position": 0.001,
                     "lam": 0.4, "ks_time": 0.025, "ks_position": 0.035, "pattern_horizon": 50.0},
    },
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class RunConfig:
    """Validated run configuration.  ``data`` is the merged nested mapping."""

    seed: int
    data: dict
    selected: list = field(default_factory=list)
    source: Optional[str] = None

    @classmethod
    def from_mapping(cls, raw: dict, source: Optional[str] = None) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a mapping")
        if "seed" not in raw or raw["seed"] is None:
            raise ConfigError("config has no seed; a master seed is required (no wall-clock seeding)")
        seed = raw["seed"]
        if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
            raise ConfigError(f"seed must be a nonnegative integer, got {seed!r}")
        unknown = set(raw) - {"seed", "select", *DESK_PRESET}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        data = _merge(DESK_PRESET, {k: v for k, v in raw.items() if k not in ("seed", "select")})
        selected = list(raw.get("select") or EXPERIMENTS)
        cfg = cls(seed=seed, data=data, selected=selected, source=source)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            raw = yaml.safe_load(path.read_text())
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        return cls.from_mapping(raw or {}, str(path))

    def model(self, key: str = "model") -> EnvModel:
        m = self.data[key]
        try:
            return EnvModel(float(m["a"]), float(m["b"]), m.get("family", "beta"))
        except (KeyError, TypeError) as e:
            raise ConfigError(f"malformed model entry {key}: {m}") from e

    def exp(self, name: str) -> dict:
        return self.data["experiments"][name]

    @property
    def tol(self) -> dict:
        return self.data["tolerances"]

    def with_selection(self, names) -> "RunConfig":
        cfg = RunConfig(self.seed, self.data, list(names), self.source)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        for name in self.selected:
            if name not in EXPERIMENTS:
                raise ConfigError(f"unknown experiment {name!r}; choose from {', '.join(EXPERIMENTS)}")
        for k, v in self.tol.items():
            if not (isinstance(v, (int, float)) and v > 0):
                raise ConfigError(f"tolerance {k} must be > 0, got {v!r}")
        for name, sect in self.data["experiments"].items():
            for k, v in sect.items():
                if k in ("replicates", "environments", "walks", "samples", "blocks", "pairs", "triples") \
                        and not (isinstance(v, int) and v >= 1):
                    raise ConfigError(f"{name}.{k} must be an integer >= 1, got {v!r}")
        try:
            model = self.model("model")
            small = self.model("model_small")
        except ModelError as e:
            raise ConfigError(str(e)) from e
        if any(n in LIMIT_EXPERIMENTS for n in self.selected):
            for key, m in (("model", model), ("model_small", small)):
                k = solve_kappa(m)
                if not (0.0 < k < 2.0):
                    raise ConfigError(f"regime gate: {key} has kappa = {k:.6g} outside (0, 2), "
                                      f"which the limit experiments require")

    def canonical(self) -> dict:
        return {"seed": self.seed, "select": list(self.selected), **self.data}

    @property
    def hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]
