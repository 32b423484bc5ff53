"""Experiment harness: presets, k-sweeps, run artifacts, learning-curve plots."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
import time
from dataclasses import dataclass
from importlib.resources import files
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import yaml

from .ars import ArsConfig, load_checkpoint, save_checkpoint
from .graph import AbstractGraph, compile_spec, to_dot, to_text
from .planner import (DirlConfig, PathPolicy, PlannerFailure, certificate_check,
                      evaluate_policy, run_dirl)
from .rooms import PRESETS, RoomsEnv, RoomsLayout, dump_layout, load_layout, preset_layout
from .spec_lang import Spec, parse_spec

__all__ = [
    "SPEC_PRESETS", "ExperimentConfig", "load_config", "preset_spec_text", "resolve_layout",
    "resolve_spec", "run_experiment", "evaluate_run", "read_curve", "plot_curves",
    "CSV_FIELDS", "OUT_ROOT_VAR",
]

OUT_ROOT_VAR = "DIRL_OUT"
CSV_FIELDS = ["k", "total_steps", "success_prob", "success_se", "cost", "certificate",
              "seed", "rep", "path", "status"]
SPEC_PRESETS = tuple(sorted(p.name[:-5] for p in files("dirl.presets").joinpath("specs").iterdir()
                            if p.name.endswith(".spec")))


def preset_spec_text(name: str) -> str:
    if name not in SPEC_PRESETS:
        raise KeyError(f"unknown spec preset {name!r}; known: {', '.join(SPEC_PRESETS)}")
    return files("dirl.presets").joinpath("specs", name + ".spec").read_text()


def resolve_layout(source) -> RoomsLayout:
    if isinstance(source, RoomsLayout):
        return source
    if isinstance(source, str) and source in PRESETS:
        return preset_layout(source)
    return load_layout(source)


def resolve_spec(source: str, layout: Optional[RoomsLayout] = None) -> tuple[str, Spec]:
    """Spec text and parse tree from a preset id, a ``.spec`` file path, or DSL text."""
    if source in SPEC_PRESETS:
        text = preset_spec_text(source)
    elif source.endswith(".spec") and "\n" not in source and Path(source).is_file():
        text = Path(source).read_text()
    else:
        text = source
    atoms = layout.atoms() if layout is not None else None
    return text, parse_spec(text, atoms)


@dataclass(frozen=True)
class ExperimentConfig:
    env: str = "rooms9"
    spec: str = "rooms9_ex"
    step_size: float = ArsConfig.step_size
    noise: float = ArsConfig.noise
    n_directions: int = ArsConfig.n_directions
    n_top: int = ArsConfig.n_top
    horizon: int = ArsConfig.horizon
    hidden: int = ArsConfig.hidden
    bonus: float = ArsConfig.bonus
    stop_on_success: bool = ArsConfig.stop_on_success
    n_estimate: int = 200
    eval_rollouts: int = 1000
    buffer_size: int = 500
    buffer_min: int = 50
    k_values: tuple = (3000, 6000, 12000, 18000, 24000, 30000)
    reps: int = 1
    seed: int = 0
    out_dir: str = "run"

    def __post_init__(self):
        object.__setattr__(self, "k_values", tuple(int(k) for k in self.k_values))
        if not self.k_values or any(k <= 0 for k in self.k_values):
            raise ValueError("k_values must be a non-empty list of positive budgets")
        if list(self.k_values) != sorted(self.k_values):
            raise ValueError("k_values must be sorted ascending")
        for name in ("n_estimate", "eval_rollouts", "reps", "horizon", "buffer_size", "buffer_min"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def ars(self, k: int) -> ArsConfig:
        return ArsConfig(self.step_size, self.noise, self.n_directions, self.n_top, k,
                         self.horizon, self.hidden, self.bonus, self.stop_on_success)

    def dirl(self, k: int, seed: int) -> DirlConfig:
        return DirlConfig(self.ars(k), self.n_estimate, self.buffer_size, self.buffer_min,
                          eval_rollouts=self.eval_rollouts, seed=seed)

    def output_path(self) -> Path:
        p = Path(self.out_dir)
        if p.is_absolute():
            return p
        return Path(os.environ.get(OUT_ROOT_VAR, ".")) / p


def _coerce(cls_field: dataclasses.Field, value):
    default = cls_field.default
    if isinstance(value, str):
        if isinstance(default, bool):
            return value.lower() in ("1", "true", "yes", "on")
        if isinstance(default, tuple):
            return tuple(int(v) for v in value.replace(",", " ").split())
        if isinstance(default, (int, float)):
            return type(default)(yaml.safe_load(value))
    return value


def load_config(source=None, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Build a config from a YAML file/dict plus ``key=value`` style overrides."""
    data = {}
    if isinstance(source, dict):
        data = dict(source)
    elif source is not None:
        data = yaml.safe_load(Path(source).read_text()) or {}
    data.update(overrides or {})
    fields = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return ExperimentConfig(**{k: _coerce(fields[k], v) for k, v in data.items()})


def _row_seed(master: int, k: int, rep: int) -> int:
    return int(np.random.SeedSequence([master, k, rep]).generate_state(1)[0])


def _existing_rows(path: Path) -> dict:
    if not path.exists():
        return {}
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_FIELDS:
            raise ValueError(f"{path}: unexpected CSV columns {reader.fieldnames}")
        return {(int(r["k"]), int(r["rep"]), int(r["seed"])): r for r in reader}


def _write_run(run_dir: Path, G: AbstractGraph, res, layout: RoomsLayout, spec_text: str,
               report: dict) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "layout.yaml").write_text(dump_layout(layout))
    (run_dir / "spec.txt").write_text(spec_text)
    ckpt = run_dir / "checkpoints"
    ckpt.mkdir(exist_ok=True)
    for (u, v), pol in sorted(res.state.policies.items()):
        save_checkpoint(pol, ckpt / f"edge_{u}_{v}.npz")
    (run_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))


def run_experiment(cfg: ExperimentConfig, log: Callable[[str], None] = print) -> dict:
    """Run DiRL once per (k, repetition); append CSV rows and write the manifest.

    Rows already present in the CSV (same k, repetition and seed) are skipped,
    so reruns with the same config are idempotent.
    """
    out = cfg.output_path()
    out.mkdir(parents=True, exist_ok=True)
    layout = resolve_layout(cfg.env)
    env = RoomsEnv(layout)
    spec_text, phi = resolve_spec(cfg.spec, layout)
    G = compile_spec(phi)
    (out / "graph.txt").write_text(to_text(G))
    (out / "graph.dot").write_text(to_dot(G))
    csv_path = out / "curve.csv"
    done = _existing_rows(csv_path)
    new_file = not csv_path.exists()
    runs = []
    t_start = time.perf_counter()
    with csv_path.open("a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        if new_file:
            writer.writeheader()
        for k in cfg.k_values:
            for rep in range(cfg.reps):
                seed = _row_seed(cfg.seed, k, rep)
                if (k, rep, seed) in done:
                    log(f"k={k} rep={rep}: already in {csv_path.name}, skipped")
                    continue
                t0 = time.perf_counter()
                row = {"k": k, "seed": seed, "rep": rep}
                entry = {"k": k, "rep": rep, "seed": seed}
                try:
                    res = run_dirl(G, env, cfg.dirl(k, seed))
                except PlannerFailure as exc:
                    row.update(total_steps=0, success_prob=0.0, success_se=0.0, cost=math.inf,
                               certificate=0.0, path="", status="failed")
                    entry.update(status="failed", error=str(exc))
                else:
                    p, se = evaluate_policy(res.policy, G, env, cfg.eval_rollouts,
                                            np.random.default_rng([seed, 1]), cfg.horizon)
                    check = certificate_check(p, se, res.path.probs, cfg.n_estimate)
                    report = res.report()
                    report.update(success_prob=p, success_se=se, certificate_check=check)
                    _write_run(out / "runs" / f"k{k}_rep{rep}", G, res, layout, spec_text, report)
                    row.update(total_steps=res.state.counter.steps, success_prob=p,
                               success_se=se, cost=res.cost, certificate=res.certificate,
                               path="-".join(map(str, res.path.vertices)), status="ok")
                    entry.update(status="ok", report=report)
                entry["wall_time"] = time.perf_counter() - t0
                writer.writerow(row)
                fh.flush()
                runs.append(entry)
                log(f"k={k} rep={rep}: {row['status']} success={row['success_prob']:.3f} "
                    f"steps={row['total_steps']} ({entry['wall_time']:.1f}s)")
    ok = [r for r in runs if r["status"] == "ok"]
    manifest = {
        "config": dataclasses.asdict(cfg),
        "spec": spec_text,
        "graph": {"vertices": G.n_vertices, "edges": len(G.edges)},
        "csv": str(csv_path),
        "runs": runs,
        "all_completed": all(r["status"] == "ok" for r in runs),
        "certificate_holds": all(r["report"]["certificate_check"]["holds"] for r in ok),
        "wall_time": time.perf_counter() - t_start,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str))
    return manifest


def evaluate_run(run_dir, rollouts: int = 1000, seed: int = 0, horizon: int = 20) -> dict:
    """Reload a finished run's path policy from its checkpoints and re-evaluate it."""
    run_dir = Path(run_dir)
    report = json.loads((run_dir / "report.json").read_text())
    layout = load_layout(run_dir / "layout.yaml")
    _, phi = resolve_spec((run_dir / "spec.txt").read_text(), layout)
    G = compile_spec(phi)
    path = report["path"]
    policies = {(u, v): load_checkpoint(run_dir / "checkpoints" / f"edge_{u}_{v}.npz")
                for u, v in zip(path[:-1], path[1:])}
    pol = PathPolicy(G, path, policies)
    p, se = evaluate_policy(pol, G, RoomsEnv(layout), rollouts, np.random.default_rng(seed), horizon)
    return {"success_prob": p, "success_se": se, "path": path,
            "certificate": report["certificate"]}


def read_curve(path) -> list[dict]:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_FIELDS:
            raise ValueError(f"{path}: expected columns {CSV_FIELDS}, got {reader.fieldnames}")
        return list(reader)


def _aggregate(rows: list[dict]):
    by_k = {}
    for r in rows:
        by_k.setdefault(int(r["k"]), []).append(r)
    ks = sorted(by_k)
    steps = np.array([np.mean([float(r["total_steps"]) for r in by_k[k]]) for k in ks])
    succ = [np.array([float(r["success_prob"]) for r in by_k[k]]) for k in ks]
    return ks, steps, np.array([s.mean() for s in succ]), np.array([s.std() for s in succ])


def plot_curves(csv_paths, out_path, title: str = "") -> Path:
    """Mean success probability against mean total steps, with a +-1 std band."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for path in csv_paths:
        _, steps, mean, std = _aggregate(read_curve(path))
        label = Path(path).parent.name or Path(path).stem
        if len(steps) == 1:
            ax.plot(steps, mean, "o", label=label)
        else:
            (line,) = ax.plot(steps, mean, "-o", ms=3, label=label)
            ax.fill_between(steps, mean - std, mean + std, color=line.get_color(), alpha=0.2)
    ax.set_xlabel("steps")
    ax.set_ylabel("success probability")
    ax.set_ylim(-0.02, 1.02)
    if title:
        ax.set_title(title)
    ax.legend(fontsize="small")
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, format="svg")
    plt.close(fig)
    return out_path
