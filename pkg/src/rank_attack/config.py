"""Experiment configuration: JSON file, CLI overrides, stable hashing.

Documented keys (all paths relative to the config file's directory):

- collection, topics, qrels, run: input file paths (qrels optional for
  attack/rerank/evaluate).
- scorer: {"type": "bm25", "k1": 1.2, "b": 0.75, "stopwords": path?}
          | {"type": "subprocess", "argv": [...], "timeout": 60}
          | {"type": "http", "url": ..., "timeout": 60}
          | {"type": "token-reward", "token": "true", "bonus": 0.1}
          | {"type": "constant", "value": 0.5}
- lexicon: path to a category<TAB>surface file; null uses the built-in
  21-token default.
- grid: {"positions": ["start","end","random"],
         "repetitions": [1,2,3,4,5], "include_identity": false}
- seed: integer; required whenever the grid contains random positions.
- rerank_depth (>= 10, default 1000), workers (default 1), out_dir,
  report_formats (subset of ["csv","txt"]).
- rel_threshold: grade at or above which a document counts relevant for
  the bounds scenarios (default 2).
- rewrite: {"prompts": path?, "generator": {"type": "stub", "kind": ...}
            | {"type": "http", ...} | {"type": "subprocess", ...},
            "kind": "paraphrase"|"summarize", "prompt_id": ...?,
            "audit_log": path?, "max_in_flight": 1}

CLI flags override config keys; the RANK_ATTACK_CONFIG environment
variable overrides the default config path. The config hash covers the
semantic keys only (workers, out_dir, and report_formats are execution
concerns), so re-runs at different worker counts reuse artifacts.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Any

from .errors import UsageError

ENV_CONFIG = "RANK_ATTACK_CONFIG"

_EXECUTION_KEYS = {"workers", "out_dir", "report_formats"}

_DEFAULTS: dict[str, Any] = {
    "collection": None,
    "topics": None,
    "qrels": None,
    "run": None,
    "scorer": {"type": "bm25"},
    "lexicon": None,
    "grid": {"positions": ["start", "end", "random"], "repetitions": [1, 2, 3, 4, 5],
             "include_identity": False},
    "seed": None,
    "rerank_depth": 1000,
    "workers": 1,
    "out_dir": "out",
    "report_formats": ["csv", "txt"],
    "rel_threshold": 2,
    "rewrite": {},
}


@dataclass
class ExperimentConfig:
    values: dict[str, Any]
    base_dir: str = "."
    overrides: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        unknown = set(self.values) - set(_DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        merged = dict(_DEFAULTS)
        merged.update(self.values)
        merged.update({k: v for k, v in self.overrides.items() if v is not None})
        self.values = merged
        self._validate()

    def _validate(self) -> None:
        if self.rerank_depth < 10:
            raise UsageError(f"rerank_depth must be >= 10, got {self.rerank_depth}")
        # seed-vs-random-positions is enforced where the grid is built, so
        # commands that never inject (report, rerank) run without a seed
        if self.values["workers"] < 1:
            raise UsageError("workers must be >= 1")
        for fmt in self.values["report_formats"]:
            if fmt not in ("csv", "txt"):
                raise UsageError(f"unknown report format {fmt!r}")

    def path(self, key: str, required: bool = True) -> str | None:
        value = self.values.get(key)
        if value is None:
            if required:
                raise UsageError(f"config key {key!r} is required for this command")
            return None
        return os.path.join(self.base_dir, value)

    @property
    def seed(self) -> int | None:
        return self.values["seed"]

    @property
    def rerank_depth(self) -> int:
        return int(self.values["rerank_depth"])

    @property
    def workers(self) -> int:
        return int(self.values["workers"])

    @property
    def out_dir(self) -> str:
        return os.path.join(self.base_dir, self.values["out_dir"])

    @property
    def grid(self) -> dict[str, Any]:
        return self.values["grid"]

    @property
    def scorer(self) -> dict[str, Any]:
        return self.values["scorer"]

    @property
    def rewrite(self) -> dict[str, Any]:
        return self.values["rewrite"]

    @property
    def rel_threshold(self) -> int:
        return int(self.values["rel_threshold"])

    @property
    def report_formats(self) -> list[str]:
        return list(self.values["report_formats"])

    def config_hash(self) -> str:
        semantic = {k: v for k, v in self.values.items() if k not in _EXECUTION_KEYS}
        canon = json.dumps(semantic, sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def load_config(path: str | None, overrides: dict[str, Any] | None = None) -> ExperimentConfig:
    path = path or os.environ.get(ENV_CONFIG)
    if path is None:
        return ExperimentConfig({}, ".", overrides or {})
    try:
        with open(path, encoding="utf-8") as f:
            values = json.load(f)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise UsageError(f"config file {path} is not valid JSON: {e}") from None
    if not isinstance(values, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    return ExperimentConfig(values, os.path.dirname(os.path.abspath(path)), overrides or {})
