"""Experiment suite: headline comparisons, baselines, ablations and CSV reports.

Each run writes into its own directory under ``<out>/runs/<run_id>/``; the
aggregate files are always recomputed from those per-run CSVs, so
``counterdyna report`` reproduces exactly what ``run`` printed.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from ..config import ExperimentConfig, dump_config, load_config
from ..dyna import DynaSchedule, align_training_window, run_counter_dyna, run_model_free
from ..exogenous import ExogenousSeries, load_series_csv, synthesize_series
from ..kpi import KpiLedger
from .controllers import GreedyPolicy, PiController, RuleBased
from .evaluation import TestPeriod, evaluate_controller, evaluate_csm, find_test_periods

log = logging.getLogger(__name__)

KPI_COLUMNS = ("run_id", "seed", "period", "cost_eur_m2", "discomfort_kh")
RUN_KINDS = ("counter_dyna", "model_free")
BASELINE_KINDS = ("pi", "rule_based")


@dataclass(frozen=True)
class RunSpec:
    kind: str  # counter_dyna | model_free | pi | rule_based
    n_episodes: int = 0
    seed: int = -1
    synth_ratio: float | None = None
    rollout_len: int | None = None
    w_cost: float | None = None
    group: str = ""

    @property
    def label(self) -> str:
        """Experiment label shared by all seeds, e.g. ``counter_dyna-5``."""
        if self.kind in BASELINE_KINDS:
            return self.kind
        parts = [f"{self.kind}-{self.n_episodes}"]
        if self.synth_ratio is not None:
            parts.append(f"ratio{self.synth_ratio:g}")
        if self.rollout_len is not None:
            parts.append(f"L{self.rollout_len}")
        if self.w_cost is not None:
            parts.append(f"wc{self.w_cost:g}")
        return "_".join(parts)

    @property
    def run_id(self) -> str:
        return self.label if self.kind in BASELINE_KINDS else f"{self.label}-s{self.seed}"


def parse_run_label(label: str) -> tuple[str, int]:
    kind, _, n = label.rpartition("-")
    if kind not in RUN_KINDS or not n.isdigit():
        raise ValueError(f"bad run label {label!r}; expected e.g. counter_dyna-5 or model_free-10")
    return kind, int(n)


def effective_config(cfg: ExperimentConfig, spec: RunSpec) -> ExperimentConfig:
    cfg = dataclasses.replace(cfg)
    if spec.synth_ratio is not None or spec.rollout_len is not None:
        cfg.dyna = dataclasses.replace(
            cfg.dyna,
            synth_ratio=cfg.dyna.synth_ratio if spec.synth_ratio is None else spec.synth_ratio,
            rollout_len=cfg.dyna.rollout_len if spec.rollout_len is None else spec.rollout_len)
    if spec.w_cost is not None:
        cfg.reward = dataclasses.replace(cfg.reward, w_cost=spec.w_cost)
    return cfg


def _run_hash(cfg: ExperimentConfig, spec: RunSpec) -> str:
    """Identity of a run: everything that can change its outputs (not the grouping/output options)."""
    eff = effective_config(cfg, spec)
    eff.experiment = dataclasses.replace(eff.experiment, runs=(), seeds=(), baselines=())
    eff.ablation = type(eff.ablation)()
    key = dump_config(eff) + f"\nkind={spec.kind}\nn={spec.n_episodes}\nseed={spec.seed}\n"
    return hashlib.sha256(key.encode()).hexdigest()[:16]


@lru_cache(maxsize=4)
def _series_cached(seed: int, horizon: int, csv_path: str, profile) -> ExogenousSeries:
    if csv_path:
        return load_series_csv(csv_path)
    return synthesize_series(seed, horizon, profile)


def build_series(cfg: ExperimentConfig) -> ExogenousSeries:
    return _series_cached(cfg.series.seed, cfg.series.horizon_steps, cfg.series.csv, cfg.profile)


def test_periods_for(cfg: ExperimentConfig, series: ExogenousSeries) -> dict[str, TestPeriod]:
    t = cfg.test
    return find_test_periods(series, t.test_year, t.period_days, t.peak_search_days, t.typical_start_day)


def _fmt(x) -> str:
    return repr(float(x))


def _write_kpis(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(KPI_COLUMNS)
        for run_id, seed, period, led in rows:
            w.writerow([run_id, seed, period, _fmt(led.cost_eur_m2), _fmt(led.discomfort_kh)])


def execute_run(spec: RunSpec, cfg: ExperimentConfig, out_dir) -> dict:
    """Train (if needed), evaluate on both test periods and write every per-run file."""
    cfg = effective_config(cfg, spec)
    run_dir = Path(out_dir) / "runs" / spec.run_id
    digest = _run_hash(cfg, spec)
    marker = run_dir / "run.json"
    if marker.exists():
        prev = json.loads(marker.read_text())
        if prev.get("hash") == digest and prev.get("status") == "ok":
            return prev
    run_dir.mkdir(parents=True, exist_ok=True)
    series = build_series(cfg)
    periods = test_periods_for(cfg, series)
    env_cfg = cfg.env_config()
    summary = {"run_id": spec.run_id, "label": spec.label, "kind": spec.kind, "seed": spec.seed,
               "n_episodes": spec.n_episodes, "group": spec.group, "hash": digest}

    if spec.kind in BASELINE_KINDS:
        if spec.kind == "pi":
            controller = PiController(env_cfg.band.midpoint, cfg.pi.kp, cfg.pi.ki, series.step_minutes / 60.0,
                                      cfg.pi.integral_limit)
        else:
            controller = RuleBased()
        result = None
    else:
        T = env_cfg.episode_len
        start = align_training_window(spec.n_episodes, periods["peak"].start, T)
        if spec.kind == "counter_dyna":
            schedule = DynaSchedule(spec.n_episodes, T, cfg.dyna.rollout_len, cfg.dyna.synth_ratio)
            result = run_counter_dyna(series, schedule, cfg.ppo, cfg.csm, spec.seed, env_cfg, start,
                                      keep_rollouts=False)
        elif spec.kind == "model_free":
            result = run_model_free(series, spec.n_episodes, cfg.ppo, spec.seed, env_cfg, start)
        else:
            raise ValueError(f"unknown run kind {spec.kind!r}")
        steps = np.array(result.real_global_steps)
        for p in periods.values():
            if steps.size and np.any((steps >= p.start) & (steps < p.stop)):
                raise RuntimeError(f"training touched the {p.name} test period")
        result.write_learning_curve(run_dir / "learning_curve.csv")
        result.write_diagnostics(run_dir / "diagnostics.csv")
        ckpt = run_dir / "checkpoint"
        ckpt.mkdir(exist_ok=True)
        result.nets.save(str(ckpt) + "/")
        result.store.save_env(ckpt / "d_env.npz")
        (ckpt / "config.ini").write_text(dump_config(cfg))
        summary["final_episode_reward"] = result.learning_curve[-1]["mean_episodic_reward"] \
            if result.learning_curve else None
        if result.building_model is not None:
            result.building_model.save(ckpt / "building_model.npz")
            (ckpt / "reward_model.json").write_text(result.reward_model.to_json())
            report = evaluate_csm(result.building_model, result.reward_model, result.store.env_episodes, env_cfg,
                                  horizon=cfg.dyna.rollout_len, n_segments=cfg.experiment.csm_segments,
                                  rng=np.random.default_rng([spec.seed, 7]))
            report.write_csv(run_dir / "csm_eval.csv")
            summary["csm"] = report.summary()
        controller = GreedyPolicy(result.nets, spec.label)

    kpi_rows = []
    for name, period in periods.items():
        ev = evaluate_controller(controller, series, env_cfg, period)
        ev.write_trajectory(run_dir / f"trajectory_{name}.csv")
        kpi_rows.append((spec.run_id, spec.seed, name, ev.ledger))
        summary[f"{name}_cost_eur_m2"] = ev.ledger.cost_eur_m2
        summary[f"{name}_discomfort_kh"] = ev.ledger.discomfort_kh
    _write_kpis(run_dir / "kpi.csv", kpi_rows)
    summary["status"] = "ok"
    marker.write_text(json.dumps(summary, indent=1, sort_keys=True))
    return summary


def _safe_execute(args) -> dict:
    spec, cfg, out_dir = args
    try:
        return execute_run(spec, cfg, out_dir)
    except Exception as exc:  # a failing run must not stop the suite
        log.error("run %s failed: %s", spec.run_id, exc)
        return {"run_id": spec.run_id, "label": spec.label, "status": "failed", "error": repr(exc),
                "traceback": traceback.format_exc()}


def n_workers() -> int:
    raw = os.environ.get("COUNTERDYNA_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def execute_all(specs: list[RunSpec], cfg: ExperimentConfig, out_dir, workers: int | None = None) -> list[dict]:
    workers = workers or n_workers()
    jobs = [(s, cfg, str(out_dir)) for s in specs]
    if workers <= 1 or len(jobs) <= 1:
        return [_safe_execute(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_safe_execute, jobs))


def suite_specs(cfg: ExperimentConfig) -> list[RunSpec]:
    specs = []
    for label in cfg.experiment.runs:
        kind, n = parse_run_label(label)
        specs += [RunSpec(kind, n, s, group="headline") for s in cfg.experiment.seeds]
    specs += [RunSpec(b, group="baseline") for b in cfg.experiment.baselines]
    return specs


def run_suite(cfg: ExperimentConfig, out_dir, workers: int | None = None) -> dict:
    if len(set(cfg.experiment.seeds)) != len(cfg.experiment.seeds):
        raise ValueError("seeds must be distinct")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.ini").write_text(dump_config(cfg))
    results = execute_all(suite_specs(cfg), cfg, out_dir, workers)
    report = aggregate(out_dir, cfg)
    report["failures"] = [r for r in results if r.get("status") != "ok"]
    (out_dir / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True))
    return report


def ablation_specs(cfg: ExperimentConfig) -> list[RunSpec]:
    a = cfg.ablation
    base_ratio, base_L, base_wc = cfg.dyna.synth_ratio, cfg.dyna.rollout_len, cfg.reward.w_cost
    specs = []
    for s in a.seeds:
        specs += [RunSpec("counter_dyna", a.n_episodes, s, r, base_L, base_wc, "ratio") for r in a.synth_ratios]
        specs += [RunSpec("counter_dyna", a.n_episodes, s, base_ratio, L, base_wc, "rollout_len")
                  for L in a.rollout_lens]
        specs += [RunSpec("counter_dyna", a.n_episodes, s, base_ratio, base_L, wc, "w_cost") for wc in a.w_costs]
    return specs


def finished_runs(dirs) -> dict[str, tuple[dict, Path]]:
    """Index completed runs under ``<dir>/runs`` by their hash."""
    found = {}
    for d in dirs:
        for marker in sorted(Path(d, "runs").glob("*/run.json")):
            meta = json.loads(marker.read_text())
            if meta.get("status") == "ok" and "hash" in meta:
                found.setdefault(meta["hash"], (meta, marker.parent))
    return found


def run_ablations(cfg: ExperimentConfig, out_dir, workers: int | None = None, reuse_from=()) -> dict:
    """One-at-a-time sweeps over synth ratio, rollout length and cost weight.

    Cells whose run hash matches a finished run in ``out_dir`` or any of
    ``reuse_from`` (e.g. the headline suite directory) are not recomputed.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    specs = ablation_specs(cfg)
    # identical cells across sweeps (the baseline settings) are computed once
    unique = {}
    for s in specs:
        unique.setdefault(_run_hash(effective_config(cfg, s), s), s)
    done = finished_runs([out_dir, *reuse_from])
    todo = [s for h, s in unique.items() if h not in done]
    results = {r["run_id"]: r for r in execute_all(todo, cfg, out_dir, workers)}
    by_hash = {}
    for h, s in unique.items():
        if h in done:
            by_hash[h] = done[h]
        else:
            by_hash[h] = (results[s.run_id], out_dir / "runs" / s.run_id)
    rows = []
    for s in specs:
        r = by_hash[_run_hash(effective_config(cfg, s), s)][0]
        value = {"ratio": s.synth_ratio, "rollout_len": s.rollout_len, "w_cost": s.w_cost}[s.group]
        rows.append({"sweep": s.group, "value": value, "seed": s.seed, "run_id": r["run_id"],
                     "status": r.get("status"), "final_episode_reward": r.get("final_episode_reward"),
                     **{k: r.get(k) for k in ("peak_cost_eur_m2", "peak_discomfort_kh", "typical_cost_eur_m2",
                                              "typical_discomfort_kh")}})
    with open(out_dir / "ablation.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()) if rows else ["sweep"])
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    curves = _ablation_curves(out_dir, specs, by_hash, cfg)
    report = {"n_configurations": len({(s.group, s.synth_ratio, s.rollout_len, s.w_cost) for s in specs}),
              "n_runs": len(specs), "n_unique_runs": len(unique), "n_reused_runs": len(unique) - len(todo),
              "learning_curves": curves,
              "failures": [r for r in results.values() if r.get("status") != "ok"]}
    (out_dir / "ablation_report.json").write_text(json.dumps(report, indent=1, sort_keys=True))
    return report


def _ablation_curves(out_dir: Path, specs, by_hash, cfg) -> list[dict]:
    groups: dict[tuple, list[Path]] = {}
    for s in specs:
        value = {"ratio": s.synth_ratio, "rollout_len": s.rollout_len, "w_cost": s.w_cost}[s.group]
        groups.setdefault((s.group, value), []).append(by_hash[_run_hash(effective_config(cfg, s), s)][1])
    rows = []
    for (sweep, value), run_dirs in groups.items():
        curves = [_read_curve(d / "learning_curve.csv") for d in run_dirs]
        curves = [c for c in curves if c is not None]
        for ep, mean, std, n in _mean_std_curves(curves):
            rows.append({"sweep": sweep, "value": value, "episode": ep, "mean": mean, "std": std, "n_seeds": n})
    with open(out_dir / "ablation_learning_curves.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sweep", "value", "episode", "mean_reward", "std_reward", "n_seeds"])
        for r in rows:
            w.writerow([r["sweep"], repr(r["value"]), r["episode"], _fmt(r["mean"]), _fmt(r["std"]), r["n_seeds"]])
    return rows


def _read_curve(path: Path):
    if not path.exists():
        return None
    with open(path, newline="") as fh:
        return [float(r["mean_episodic_reward"]) for r in csv.DictReader(fh)]


def _mean_std_curves(curves):
    if not curves:
        return []
    n_ep = min(len(c) for c in curves)
    arr = np.array([c[:n_ep] for c in curves])
    std = arr.std(axis=0, ddof=1) if len(arr) > 1 else np.zeros(n_ep)
    return [(i + 1, float(arr[:, i].mean()), float(std[i]), len(arr)) for i in range(n_ep)]


def read_run_kpis(out_dir) -> list[dict]:
    rows = []
    for path in sorted(Path(out_dir, "runs").glob("*/kpi.csv")):
        meta = json.loads((path.parent / "run.json").read_text())
        with open(path, newline="") as fh:
            for r in csv.DictReader(fh):
                rows.append({"run_id": r["run_id"], "label": meta["label"], "seed": int(r["seed"]),
                             "period": r["period"], "cost": float(r["cost_eur_m2"]),
                             "discomfort": float(r["discomfort_kh"]), "group": meta.get("group", "")})
    return rows


def select_best_runs(kpis: list[dict], threshold_kh: float, top: int = 4) -> dict:
    """Per label: runs with peak discomfort below ``threshold_kh``, lowest peak cost first."""
    by_run: dict[str, dict] = {}
    for r in kpis:
        by_run.setdefault(r["run_id"], {"label": r["label"]})[r["period"]] = r
    out = {}
    for label in sorted({v["label"] for v in by_run.values()}):
        cands = [(v["peak"]["cost"], rid) for rid, v in by_run.items()
                 if v["label"] == label and "peak" in v and v["peak"]["discomfort"] < threshold_kh]
        cands.sort()
        out[label] = {"selected": [rid for _, rid in cands[:top]], "empty": not cands}
    return out


def cost_savings(kpis: list[dict], threshold_kh: float, reference: str = "model_free-10") -> dict:
    """Mean cost per label and period over runs whose total discomfort is below ``threshold_kh``."""
    by_run: dict[str, dict] = {}
    for r in kpis:
        d = by_run.setdefault(r["run_id"], {"label": r["label"], "disc": 0.0, "cost": {}})
        d["disc"] += r["discomfort"]
        d["cost"][r["period"]] = r["cost"]
    means: dict[str, dict] = {}
    for label in sorted({v["label"] for v in by_run.values()}):
        ok = [v for v in by_run.values() if v["label"] == label and v["disc"] < threshold_kh]
        means[label] = {p: (float(np.mean([v["cost"][p] for v in ok])) if ok else None)
                        for p in ("peak", "typical")}
        means[label]["n_runs"] = len(ok)
    savings = {}
    ref = means.get(reference)
    if ref:
        for label, m in means.items():
            savings[label] = {p: (100.0 * (1 - m[p] / ref[p]) if m[p] is not None and ref[p] else None)
                              for p in ("peak", "typical")}
    return {"mean_cost": means, "savings_pct_vs_" + reference: savings}


def aggregate(out_dir, cfg: ExperimentConfig | None = None) -> dict:
    """Rebuild every suite-level CSV from the per-run files under ``out_dir/runs``."""
    out_dir = Path(out_dir)
    if cfg is None:
        cfg_path = out_dir / "config.ini"
        cfg = load_config(cfg_path) if cfg_path.exists() else ExperimentConfig()
    kpis = read_run_kpis(out_dir)
    with open(out_dir / "kpi_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(KPI_COLUMNS)
        for r in kpis:
            w.writerow([r["run_id"], r["seed"], r["period"], _fmt(r["cost"]), _fmt(r["discomfort"])])

    # learning curves, mean and sample std across seeds per experiment label
    curves: dict[str, list] = {}
    for path in sorted(Path(out_dir, "runs").glob("*/learning_curve.csv")):
        meta = json.loads((path.parent / "run.json").read_text())
        if meta.get("group") != "headline":
            continue
        curves.setdefault(meta["label"], []).append(_read_curve(path))
    curve_rows = []
    with open(out_dir / "learning_curves.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run_kind", "episode", "mean_reward", "std_reward", "n_seeds"])
        for label in sorted(curves):
            for ep, mean, std, n in _mean_std_curves(curves[label]):
                w.writerow([label, ep, _fmt(mean), _fmt(std), n])
                curve_rows.append({"label": label, "episode": ep, "mean": mean, "std": std, "n": n})

    # box-plot source data
    with open(out_dir / "kpi_distribution.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run_kind", "period", "metric", "n", "mean", "std", "min", "q25", "median", "q75", "max"])
        for label in sorted({r["label"] for r in kpis}):
            for period in ("peak", "typical"):
                sel = [r for r in kpis if r["label"] == label and r["period"] == period]
                for metric in ("cost", "discomfort"):
                    v = np.array([r[metric] for r in sel])
                    if v.size == 0:
                        continue
                    q = np.percentile(v, [0, 25, 50, 75, 100])
                    std = v.std(ddof=1) if v.size > 1 else 0.0
                    w.writerow([label, period, metric, v.size, _fmt(v.mean()), _fmt(std), *map(_fmt, q)])

    best = select_best_runs(kpis, cfg.test.best_run_threshold_kh)
    with open(out_dir / "best_runs.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run_kind", "rank", "run_id", "empty_selection"])
        for label, sel in best.items():
            if sel["empty"]:
                w.writerow([label, "", "", 1])
            for rank, rid in enumerate(sel["selected"], start=1):
                w.writerow([label, rank, rid, 0])
    return {
        "n_runs": len({r["run_id"] for r in kpis}),
        "best_runs": best,
        "best_run_threshold_kh": cfg.test.best_run_threshold_kh,
        "savings": cost_savings(kpis, cfg.test.savings_threshold_kh),
        "savings_threshold_kh": cfg.test.savings_threshold_kh,
        "final_episode": {lab: c[-1] for lab in curves for c in [[r for r in curve_rows if r["label"] == lab]] if c},
    }


def kpi_ledger_from_row(row: dict) -> KpiLedger:
    return KpiLedger(row["discomfort"], row["cost"], 0)
