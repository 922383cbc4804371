"""Acceptance suite: the seven primary exit criteria, one test each.

Every criterion prints one PASS/FAIL line (run with ``pytest -s`` to see
them live).  All experiments share five fixed seeds (0..4) and the default
configuration; attacked runs additionally set the max similarity-score
policy, which configures the measurement filters only (no defense is
deployed, so the attack dynamics are those of the plain default).
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import pytest

from fedmanip.config import ExperimentConfig
from fedmanip.harness import run_experiment
from fedmanip.verify import run_suite

SEEDS = (0, 1, 2, 3, 4)


def _config(seed: int, **overrides) -> ExperimentConfig:
    cfg = ExperimentConfig()
    cfg.seed = seed
    for key, value in overrides.items():
        setattr(cfg, key, value)
    cfg.validate()
    return cfg


def _job(args):
    tag, out_dir, overrides = args
    cfg = _config(overrides.pop("seed"), **overrides)
    started = time.perf_counter()
    summary = run_experiment(cfg, out_dir)
    summary["_wall"] = time.perf_counter() - started
    return tag, summary


@pytest.fixture(scope="session")
def runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("acceptance")
    jobs = []
    for seed in SEEDS:
        jobs.append((f"benign-{seed}", str(base / f"benign-{seed}"),
                     {"seed": seed, "adversaries": 0}))
        jobs.append((f"augmp-{seed}", str(base / f"augmp-{seed}"),
                     {"seed": seed, "attack": "augmp", "defense_score_policy": "max"}))
        jobs.append((f"rmp-{seed}", str(base / f"rmp-{seed}"),
                     {"seed": seed, "attack": "rmp", "rmp_scale": 3.0,
                      "defense_score_policy": "max"}))
        jobs.append((f"alie-{seed}", str(base / f"alie-{seed}"),
                     {"seed": seed, "attack": "alie", "alie_z": 1.5,
                      "defense_score_policy": "max"}))
    jobs.append(("alpen-0", str(base / "alpen-0"),
                 {"seed": 0, "attack": "augmp", "al_penalty_off": True,
                  "defense_score_policy": "max"}))
    jobs.append(("grl-0", str(base / "grl-0"),
                 {"seed": 0, "attack": "augmp", "grl_off": True,
                  "defense_score_policy": "max"}))
    jobs.append(("augmp-0-again", str(base / "augmp-0-again"),
                 {"seed": 0, "attack": "augmp", "defense_score_policy": "max"}))
    results = {"_base": base}
    with ProcessPoolExecutor(max_workers=2) as pool:
        for tag, summary in pool.map(_job, jobs):
            results[tag] = summary
    return results


def _read_rows(path) -> list[dict]:
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    return [dict(zip(header, line.split(","))) for line in lines[1:]]


def _report(name: str, passed: bool, detail: str) -> None:
    print(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")
    assert passed, f"{name}: {detail}"


# -- criterion 1: benign convergence ------------------------------------------

def test_criterion_1_benign_convergence(runs):
    summary = runs["benign-0"]
    accuracy = summary["final_global_accuracy"]
    wall = summary["_wall"]
    _report(
        "criterion 1 (benign convergence)",
        accuracy >= 0.90 and wall <= 60.0,
        f"final accuracy {accuracy:.3f} (need >= 0.90), wall {wall:.1f}s (need <= 60s)",
    )


# -- criterion 2: attack degradation -------------------------------------------

def test_criterion_2_augmp_degradation(runs):
    passing = 0
    details = []
    for seed in SEEDS:
        benign = runs[f"benign-{seed}"]
        attacked = runs[f"augmp-{seed}"]
        global_drop = benign["final_global_accuracy"] - attacked["final_global_accuracy"]
        local_drop = (
            benign["final_benign_local_accuracy"]
            - attacked["final_benign_local_accuracy"]
        )
        ok = global_drop >= 0.10 and local_drop >= 0.05
        passing += ok
        details.append(f"s{seed}:{global_drop:+.3f}/{local_drop:+.3f}{'✓' if ok else '✗'}")
    _report(
        "criterion 2 (attack degradation)",
        passing >= 4,
        f"{passing}/5 seeds with global drop >= 10pt and local drop >= 5pt "
        f"(need >= 4): {' '.join(details)}",
    )


# -- criterion 3: stealth constraints -------------------------------------------

def test_criterion_3_stealth_constraints(runs):
    rates = [runs[f"augmp-{seed}"]["stealth"]["joint_round_rate"] for seed in SEEDS]
    passing = sum(rate >= 0.95 for rate in rates)
    _report(
        "criterion 3 (stealth constraints)",
        passing >= 4,
        f"per-round joint satisfaction rates {['%.2f' % r for r in rates]} "
        f"(need >= 0.95 on >= 4/5 seeds)",
    )


# -- criterion 4: defense contrast ------------------------------------------------

def test_criterion_4_defense_contrast(runs):
    passing = 0
    details = []
    for seed in SEEDS:
        rmp = runs[f"rmp-{seed}"]["monitor_flag_rates"]["distance"]["malicious"]
        alie = runs[f"alie-{seed}"]["monitor_flag_rates"]["similarity"]["malicious"]
        augmp_d = runs[f"augmp-{seed}"]["monitor_flag_rates"]["distance"]["malicious"]
        augmp_s = runs[f"augmp-{seed}"]["monitor_flag_rates"]["similarity"]["malicious"]
        ok = rmp >= 0.80 and augmp_d <= 0.10 and alie >= 0.50 and augmp_s <= 0.10
        passing += ok
        details.append(
            f"s{seed}:rmp={rmp:.2f},alie={alie:.2f},aug_d={augmp_d:.2f},"
            f"aug_s={augmp_s:.2f}{'✓' if ok else '✗'}"
        )
    _report(
        "criterion 4 (defense contrast)",
        passing >= 4,
        f"{passing}/5 seeds (need >= 4): {' '.join(details)}",
    )


# -- criterion 5: numerical invariant suite ----------------------------------------

def test_criterion_5_verify_all():
    started = time.perf_counter()
    results = run_suite("all")
    elapsed = time.perf_counter() - started
    failures = [r.name for r in results if not r.passed]
    _report(
        "criterion 5 (verify all)",
        not failures and elapsed <= 300.0,
        f"{len(results)} checks, failures {failures or 'none'}, {elapsed:.1f}s (need <= 300s)",
    )


# -- criterion 6: ablation structure -------------------------------------------------

def test_criterion_6_ablation_structure(runs):
    full = runs["augmp-0"]
    alpen = runs["alpen-0"]
    grl = runs["grl-0"]
    completed = all(s["rounds_completed"] == 50 for s in (full, alpen, grl))

    rows = _read_rows(runs["_base"] / "grl-0" / "metrics.csv")
    signature = total = 0
    for row in rows:
        benign_min_d = min(float(row[f"dist_a{i}"]) for i in range(5))
        benign_max_s = max(float(row[f"simscore_a{i}"]) for i in range(5))
        for mid in (5, 6):
            total += 1
            too_close = float(row[f"dist_a{mid}"]) < benign_min_d
            too_aligned = float(row[f"simscore_a{mid}"]) > benign_max_s
            signature += too_close or too_aligned
    signature_rate = signature / total

    stealth_gap = full["stealth"]["joint_round_rate"] > grl["stealth"]["joint_round_rate"]

    # Location-shift statistic between the full and penalty-free distance
    # distributions (logged, no pass/fail).
    full_d = _malicious_distances(runs["_base"] / "augmp-0" / "metrics.csv")
    alpen_d = _malicious_distances(runs["_base"] / "alpen-0" / "metrics.csv")
    welch = _welch_t(full_d, alpen_d)
    print(f"[INFO] criterion 6: Welch t (full vs penalty-free distances) = {welch:.2f}")

    _report(
        "criterion 6 (ablation structure)",
        completed and signature_rate >= 0.50 and stealth_gap,
        f"runs complete={completed}, mean-construction signature "
        f"{signature_rate:.2f} (need >= 0.50), full stealth "
        f"{full['stealth']['joint_round_rate']:.2f} > grl_off "
        f"{grl['stealth']['joint_round_rate']:.2f}: {stealth_gap}",
    )


def _malicious_distances(csv_path) -> list[float]:
    return [
        float(row[f"dist_a{mid}"])
        for row in _read_rows(csv_path)
        for mid in (5, 6)
        if row[f"dist_a{mid}"]
    ]


def _welch_t(a: list[float], b: list[float]) -> float:
    a, b = np.asarray(a), np.asarray(b)
    va, vb = a.var(ddof=1) / len(a), b.var(ddof=1) / len(b)
    return float((a.mean() - b.mean()) / np.sqrt(va + vb))


# -- criterion 7: determinism -----------------------------------------------------------

def test_criterion_7_determinism(runs):
    base = runs["_base"]
    csv_a = (base / "augmp-0" / "metrics.csv").read_bytes()
    csv_b = (base / "augmp-0-again" / "metrics.csv").read_bytes()
    sum_a = json.loads((base / "augmp-0" / "summary.json").read_text())
    sum_b = json.loads((base / "augmp-0-again" / "summary.json").read_text())
    sum_a.pop("wall_time_s")
    sum_b.pop("wall_time_s")
    _report(
        "criterion 7 (determinism)",
        csv_a == csv_b and sum_a == sum_b,
        "metrics.csv byte-identical and summary.json identical minus wall time"
        if csv_a == csv_b and sum_a == sum_b
        else "outputs differ between identical runs",
    )
