"""JSON experiment configs and the file-producing steps behind the CLI.

Example config::

    {
      "name": "bench",
      "seeds": [0, 1, 2],
      "data": {"synthetic": {"classes": 16, "class_margin": 2.6}},
      "hierarchy": {"kind": "class", "branching": [2, 4, 8]},
      "csl": {"levels": 3, "label_mode": "hard"},
      "sweep": {"truncations": [4, 16, 64, 1000000]}
    }

``data`` may instead name files: ``{"strong": "s.bin", "weak": "w.bin",
"format": "binary"}``. Relative paths resolve against the config file.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import _kernels
from .cosupervise import (CslConfig, capability_gap_sweep, prepare_task, run_csl, run_vanilla,
                          supervisor_count_sweep, train_ceiling)
from .hierarchy import (build_class_partition_levels, build_domain_group_levels, load_hierarchy,
                        save_hierarchy, train_hierarchy)
from .store import load_dataset, normalize_features, save_dataset
from .synthgen import SynthSpec, default_benchmark, generate

log = logging.getLogger(__name__)

OUTPUT_ENV = "CSL_OUTPUT_DIR"

DEFAULTS = {
    "name": "experiment",
    "output_dir": None,
    "seeds": [0, 1, 2],
    "data": {"synthetic": {}},
    "normalize": False,
    "splits": {"teacher_fraction": 0.5, "train_fraction": 0.8, "seed": 0},
    "hierarchy": {"kind": "class", "branching": [2, 4, 8], "shuffle_seed": None},
    "csl": {},
    "sweep": {"truncations": [4, 16, 64, 1000000]},
}


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration (exit code 1)."""


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "data":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_override(value: str):
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        return value


def apply_overrides(config: dict, overrides: dict) -> dict:
    """Set dotted keys, e.g. ``{"csl.label_mode": "soft"}``."""
    config = copy.deepcopy(config)
    for dotted, value in overrides.items():
        node = config
        *parents, leaf = dotted.split(".")
        for p in parents:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {dotted!r} descends into a non-object")
        node[leaf] = value
    return config


class Experiment:
    """A validated experiment config and its output layout."""

    def __init__(self, raw: dict, base_dir: Path = Path(".")):
        self.raw = _merge(DEFAULTS, raw)
        self.base_dir = Path(base_dir)
        cfg = self.raw
        data = cfg["data"]
        sources = [k for k in ("synthetic", "strong") if k in data]
        if len(sources) != 1 or ("strong" in data) != ("weak" in data):
            raise ConfigError("data must hold exactly one source: 'synthetic' or a 'strong'/'weak' pair")
        try:
            self.synth = SynthSpec.from_dict(_merge(default_benchmark().to_dict(), data["synthetic"])) \
                if "synthetic" in data else None
            self.csl = CslConfig.from_dict(cfg["csl"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        seeds = cfg["seeds"]
        if not seeds or not all(isinstance(s, int) for s in seeds):
            raise ConfigError("seeds must be a non-empty list of integers")
        out = cfg["output_dir"] or os.environ.get(OUTPUT_ENV) or "runs"
        self.output_dir = self._resolve(out) / cfg["name"] if cfg["output_dir"] is None else self._resolve(out)

    @classmethod
    def from_file(cls, path, overrides: Optional[dict] = None) -> "Experiment":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls(apply_overrides(raw, overrides or {}), path.parent)

    def _resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def data_dir(self) -> Path:
        return self.output_dir / "data"

    @property
    def hierarchy_dir(self) -> Path:
        return self.output_dir / "hierarchy"

    def echo(self) -> dict:
        return copy.deepcopy(self.raw)

    # -- data --------------------------------------------------------------

    def dataset_paths(self) -> tuple[Path, Path, str]:
        data = self.raw["data"]
        if self.synth is not None:
            return self.data_dir / "strong.bin", self.data_dir / "weak.bin", "binary"
        return self._resolve(data["strong"]), self._resolve(data["weak"]), data.get("format", "binary")

    def load_datasets(self):
        strong_path, weak_path, fmt = self.dataset_paths()
        for p in (strong_path, weak_path):
            if not p.exists():
                hint = " (run `csl gen` first)" if self.synth is not None else ""
                raise FileNotFoundError(f"dataset file {p} not found{hint}")
        strong = load_dataset(strong_path, fmt)
        weak = load_dataset(weak_path, fmt)
        if strong.n != weak.n:
            raise ConfigError("strong and weak datasets differ in row count")
        if self.raw["normalize"]:
            strong, weak = normalize_features(strong), normalize_features(weak)
        return strong, weak

    def task(self, strong, weak, seed: int):
        sp = self.raw["splits"]
        return prepare_task(strong, weak, sp["seed"], split_seed=seed,
                            teacher_fraction=sp["teacher_fraction"], train_fraction=sp["train_fraction"])

    def scope_levels(self, strong):
        h = self.raw["hierarchy"]
        if h["kind"] == "class":
            return build_class_partition_levels(strong.class_count, h["branching"], h.get("shuffle_seed"))
        if h["kind"] == "domain":
            return build_domain_group_levels(strong.domain_count, h["groups"])
        raise ConfigError(f"unknown hierarchy kind {h['kind']!r}")


# -- deterministic outputs ---------------------------------------------------

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_csv(path: Path, header: list, rows: list) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())


def _meta(exp: Experiment) -> dict:
    # wall-clock fields live here only; comparisons drop "meta"
    return {"written_at": time.strftime("%Y-%m-%dT%H:%M:%S"), "backend": _kernels.backend(),
            "threads": _kernels.thread_count()}


def deterministic_payload(report: dict) -> dict:
    return {k: v for k, v in report.items() if k != "meta"}


# -- steps -------------------------------------------------------------------

def step_gen(exp: Experiment) -> list[Path]:
    if exp.synth is None:
        raise ConfigError("gen needs a 'synthetic' data source")
    strong, weak, mask = generate(exp.synth)
    exp.data_dir.mkdir(parents=True, exist_ok=True)
    strong_path, weak_path, _ = exp.dataset_paths()
    save_dataset(strong, strong_path, "binary")
    save_dataset(weak, weak_path, "binary")
    manifest = {
        "spec": exp.synth.to_dict(),
        "spec_hash": exp.synth.spec_hash(),
        "rows": strong.n,
        "strong": {"file": strong_path.name, "dim": strong.dim, "sha256": _sha256(strong_path)},
        "weak": {"file": weak_path.name, "dim": weak.dim, "sha256": _sha256(weak_path)},
        "corrupted_rows": np.flatnonzero(mask).tolist(),
    }
    manifest_path = exp.data_dir / "manifest.json"
    write_json(manifest_path, manifest)
    return [strong_path, weak_path, manifest_path]


def step_train_weak(exp: Experiment) -> Path:
    strong, weak = exp.load_datasets()
    _, pool = exp.task(strong, weak, exp.raw["seeds"][0])
    hierarchy = train_hierarchy(pool, exp.scope_levels(strong), exp.csl.teacher)
    return save_hierarchy(hierarchy, exp.hierarchy_dir,
                          extra={"teacher": exp.raw["csl"].get("teacher", {}), "pool_rows": len(pool)})


def _load_hierarchy(exp: Experiment):
    path = exp.hierarchy_dir / "hierarchy.json"
    if not path.exists():
        raise FileNotFoundError(f"hierarchy manifest {path} not found (run `csl train-weak` first)")
    return load_hierarchy(path)


def _run_seed(args):
    exp_raw, base_dir, seed, mode = args
    exp = Experiment(exp_raw, base_dir)
    strong, weak = exp.load_datasets()
    hierarchy = _load_hierarchy(exp)
    task, _ = exp.task(strong, weak, seed)
    cfg = replace(exp.csl, seed=seed)
    _, ceiling = train_ceiling(task, cfg)
    reports = {}
    if mode in ("vanilla", "both"):
        reports["vanilla"] = run_vanilla(task, hierarchy.level(0)[0].head, cfg, ceiling)[1].to_dict()
    if mode in ("csl", "both"):
        reports["csl"] = run_csl(task, hierarchy, cfg, ceiling)[1].to_dict()
    return seed, reports


def _map(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def step_run(exp: Experiment, mode: str = "both", jobs: int = 1) -> list[Path]:
    _load_hierarchy(exp)
    items = [(exp.raw, exp.base_dir, s, mode) for s in exp.raw["seeds"]]
    results = _map(_run_seed, items, jobs)
    report_dir = exp.output_dir / "reports"
    written, rows = [], []
    for seed, reports in results:
        payload = {"config": exp.echo(), "seed": seed, "reports": reports, "meta": _meta(exp)}
        path = report_dir / f"seed_{seed}.json"
        write_json(path, payload)
        written.append(path)
        for name, r in reports.items():
            rows.append([name, seed, r["s_weak"], r["s_student"], r["s_ceiling"], r["pgr"]])
    agg = exp.output_dir / "results.csv"
    write_csv(agg, ["param", "seed", "s_weak", "s", "s_ceiling", "pgr"], rows)
    written.append(agg)
    return written


def _gap_seed(args):
    exp_raw, base_dir, seed = args
    exp = Experiment(exp_raw, base_dir)
    strong, weak = exp.load_datasets()
    task, pool = exp.task(strong, weak, seed)
    result = capability_gap_sweep(task, pool, exp.raw["sweep"]["truncations"], replace(exp.csl, seed=seed))
    return seed, [[t, seed, r.s_weak, r.s_student, r.s_ceiling, r.pgr] for t, r in result.points]


def _count_seed(args):
    exp_raw, base_dir, seed = args
    exp = Experiment(exp_raw, base_dir)
    strong, weak = exp.load_datasets()
    hierarchy = _load_hierarchy(exp)
    task, _ = exp.task(strong, weak, seed)
    cfg = replace(exp.csl, seed=seed)
    oracle = supervisor_count_sweep(task, hierarchy, "oracle", cfg)
    learned = supervisor_count_sweep(task, hierarchy, "learned", cfg)
    return seed, [[m, seed, level, acc_o, acc_l]
                  for level, ((m, acc_o), (_, acc_l)) in enumerate(zip(oracle.points, learned.points))]


SWEEPS = {
    "gap": (_gap_seed, "gap_sweep.csv", ["param", "seed", "s_weak", "s", "s_ceiling", "pgr"]),
    "count": (_count_seed, "count_sweep.csv", ["param", "seed", "level", "oracle", "learned"]),
}


def step_sweep(exp: Experiment, kind: str, jobs: int = 1) -> Path:
    if kind not in SWEEPS:
        raise ConfigError(f"unknown sweep kind {kind!r}; choose from {sorted(SWEEPS)}")
    fn, name, header = SWEEPS[kind]
    if kind == "count":
        _load_hierarchy(exp)
    if kind == "gap" and len(exp.raw["sweep"]["truncations"]) < 1:
        raise ConfigError("gap sweep needs at least one truncation point")
    results = _map(fn, [(exp.raw, exp.base_dir, s) for s in exp.raw["seeds"]], jobs)
    rows = [row for _, seed_rows in results for row in seed_rows]
    path = exp.output_dir / name
    write_csv(path, header, rows)
    return path
