"""Experiment orchestration: the communication-round loop and its outputs.

One experiment is a fixed number of rounds of: benign local training,
adversarial observation and update synthesis, optional defense filtering,
weighted aggregation, the global step, and evaluation.  Every round appends
one row to ``metrics.csv`` (fixed header, 9-significant-digit numbers) and
the run ends with a ``summary.json`` carrying headline numbers plus the full
effective configuration.  Identical configuration and seed reproduce both
files byte for byte; the only nondeterministic field is the wall time in the
summary, which consumers are expected to ignore when comparing.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np

from . import baselines, fedsim, graphcraft, manipulator, sentinel
from .config import ExperimentConfig
from .fedsim import Dataset, UpdateVector
from .mathcore import SeededRng

__all__ = ["run_experiment", "run_sweep", "SWEEPABLE_FIELDS"]

SWEEPABLE_FIELDS = ("lora_rank", "lora_alpha", "adversaries", "visibility", "attack")


def _fmt(value) -> str:
    """CSV cell formatting: 9 significant digits, empty string for null."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, float):
        return "%.9g" % value
    return str(value)


def _holdout_split(ds: Dataset, fraction: float, rng: SeededRng) -> Dataset:
    """Seeded sample of an agent's shard, used as the adversary's eval set."""
    count = max(1, int(np.ceil(fraction * ds.size)))
    picks = np.sort(rng.generator.choice(ds.size, size=count, replace=False))
    return Dataset(ds.features[picks], ds.labels[picks], ds.num_classes, ds.name + "/holdout")


def _effective_rank(cfg: ExperimentConfig) -> int:
    dims = [cfg.input_dim, *cfg.hidden_dims, cfg.classes]
    cap = min(min(d, k) // 2 for k, d in zip(dims[:-1], dims[1:]))
    if cap < 1:
        raise ValueError("model dimensions too small for any low-rank adapter")
    return min(cfg.lora_rank, cap)


def _csv_columns(benign_ids: list[int], malicious_ids: list[int]) -> list[str]:
    cols = [
        "round", "global_accuracy", "benign_local_accuracy_mean",
        "broadcast_d_threshold", "broadcast_sim_threshold",
        "defense_d_threshold", "defense_sim_threshold",
        "sim_min", "sim_mean", "sim_max", "defense_fallback",
    ]
    for aid in benign_ids + malicious_ids:
        cols += [
            f"dist_a{aid}", f"simscore_a{aid}",
            f"flag_dist_a{aid}", f"flag_sim_a{aid}",
            f"monitor_flag_dist_a{aid}", f"monitor_flag_sim_a{aid}",
        ]
    for mid in malicious_ids:
        cols += [
            f"audit_dist_ok_a{mid}", f"audit_sim_ok_a{mid}",
            f"report_dist_a{mid}", f"report_sim_a{mid}",
            f"lambda_a{mid}", f"theta_a{mid}", f"pred_gap_a{mid}",
        ]
    return cols


class _Experiment:
    """Mutable state of one running experiment."""

    def __init__(self, cfg: ExperimentConfig):
        cfg.validate()
        self.cfg = cfg
        self.root = SeededRng(cfg.seed)
        self.pool = fedsim.synth_dataset(
            cfg.classes, cfg.input_dim, cfg.train_per_class, cfg.separation,
            self.root.split("train-data"), name="train-pool",
        )
        self.test = fedsim.synth_dataset(
            cfg.classes, cfg.input_dim, cfg.test_per_class, cfg.separation,
            self.root.split("test-data"), name="server-test",
        )
        total = cfg.agents + cfg.adversaries
        self.shards = fedsim.dirichlet_partition(
            self.pool, total, cfg.dirichlet_beta, self.root.split("partition")
        )
        self.benign_ids = list(range(cfg.agents))
        self.malicious_ids = list(range(cfg.agents, total))
        self.effective_rank = _effective_rank(cfg)
        backbone = fedsim.make_backbone(
            cfg.input_dim, cfg.classes, self.effective_rank, cfg.lora_alpha,
            cfg.lora_dropout, self.root.split("backbone"),
            tuple(cfg.hidden_dims), cfg.scaling_mode,
        )
        self.state = fedsim.init_global(backbone, cfg.server_lr)
        self.prev_delta = np.zeros(backbone.flat_dim)
        self.broadcast = (cfg.d_threshold_init, cfg.sim_threshold_init)

        self.attack_active = cfg.attack != "none" and cfg.adversaries > 0
        self.settings = manipulator.AttackSettings(
            visibility=cfg.visibility,
            select_dim=cfg.select_dim,
            select_policy=cfg.select_policy,
            row_policy=cfg.row_policy,
            vgae_epochs=cfg.vgae_epochs,
            vgae_lr=cfg.vgae_lr,
            vgae_hidden1=cfg.vgae_hidden1,
            vgae_hidden2=cfg.vgae_hidden2,
            vgae_features=cfg.vgae_features,
            vgae_infer=cfg.vgae_infer,
            inner_steps=cfg.inner_steps,
            inner_step_size=cfg.inner_step_size,
            grad_clip=cfg.grad_clip,
            similarity_policy=cfg.similarity_policy,
            penalty_form=cfg.penalty_form,
            lse_temperature=cfg.lse_temperature,
            al_penalty_off=cfg.al_penalty_off,
            grl_off=cfg.grl_off,
            distance_margin=cfg.distance_margin,
            similarity_margin=cfg.similarity_margin,
            threshold_margin=cfg.threshold_margin,
            threshold_percentile=cfg.similarity_percentile,
            rho_lambda=cfg.rho_lambda,
            rho_theta=cfg.rho_theta,
            current_band_margin=cfg.current_band_margin,
            sibling_spread=cfg.sibling_spread,
        )
        self.adversaries: list[manipulator.AdversaryState] = []
        if self.attack_active and cfg.attack == "augmp":
            for mid in self.malicious_ids:
                self.adversaries.append(
                    manipulator.AdversaryState(
                        agent_id=mid,
                        objective_set=_holdout_split(
                            self.shards[mid], cfg.objective_holdout,
                            self.root.split(f"objective-split-{mid}"),
                        ),
                        dual=manipulator.DualState(
                            rho_lam=cfg.rho_lambda,
                            rho_theta=cfg.rho_theta,
                            step=cfg.dual_step,
                            d_threshold=cfg.d_threshold_init,
                            sim_threshold=cfg.sim_threshold_init,
                        ),
                    )
                )

    # -- attack ------------------------------------------------------------

    def _malicious_updates(
        self, t: int, benign_updates: list[UpdateVector]
    ) -> list[tuple[UpdateVector, manipulator.StealthReport | None, dict | None]]:
        cfg = self.cfg
        if not self.attack_active:
            return []
        if cfg.attack == "augmp":
            return manipulator.run_augmp_round(
                benign_updates, self.state, self.adversaries,
                self.broadcast, self.settings, self.root.split(f"attack-round-{t}"),
                prev_delta=self.prev_delta,
            )
        results = []
        for mid in self.malicious_ids:
            arng = self.root.split(f"attack-round-{t}").split(f"adversary-{mid}")
            observed = graphcraft.observe_benign(benign_updates, cfg.visibility, arng.split("observe"))
            stats = baselines.BenignStats.from_updates(observed)
            claimed = max(1, int(np.median([u.claimed_size for u in observed])))
            if cfg.attack == "alie":
                if cfg.alie_z_policy == "quantile":
                    z = baselines.alie_z_from_counts(cfg.agents + cfg.adversaries, cfg.adversaries)
                else:
                    z = cfg.alie_z
                update = baselines.alie_update(
                    stats, z, cfg.alie_sign_policy,
                    agent_id=mid, round_index=t, claimed_size=claimed,
                )
            else:
                update = baselines.rmp_update(
                    stats, cfg.rmp_scale, arng.split("draw"),
                    agent_id=mid, round_index=t, claimed_size=claimed,
                )
            results.append((update, None, None))
        return results

    # -- defense -----------------------------------------------------------

    def _oracle_thresholds(self, benign_updates: list[UpdateVector]) -> tuple[float, float]:
        """Per-round thresholds from the current benign population."""
        cfg = self.cfg
        dists = [float(np.linalg.norm(u.values - self.prev_delta)) for u in benign_updates]
        pairs = list(sentinel.pairwise_similarities(benign_updates).values())
        d_thr = (1.0 + cfg.threshold_margin) * max(dists)
        s_thr = manipulator.nearest_rank_percentile(pairs, cfg.similarity_percentile)
        return d_thr, s_thr

    def _defense_thresholds(self, benign_updates: list[UpdateVector]) -> tuple[float, float]:
        if self.cfg.defense_threshold_mode == "broadcast":
            return self.broadcast
        return self._oracle_thresholds(benign_updates)

    def _monitor_flags(
        self, t: int, submissions: list[UpdateVector], benign_updates: list[UpdateVector]
    ) -> dict[tuple[str, int], bool]:
        """Would-be verdicts of both filters at per-round oracle thresholds.

        Computed every round regardless of the active defense; these are the
        per-agent flag traces the distance/similarity contrast figures and
        the defense-contrast criteria read.
        """
        d_thr, s_thr = self._oracle_thresholds(benign_updates)
        flags: dict[tuple[str, int], bool] = {}
        for v in sentinel.distance_filter(submissions, self.prev_delta, d_thr, t).verdicts:
            flags[("distance", v.agent_id)] = v.flagged
        for v in sentinel.similarity_filter(
            submissions, s_thr, self.cfg.defense_score_policy, t
        ).verdicts:
            flags[("similarity", v.agent_id)] = v.flagged
        return flags

    def _apply_defense(
        self, t: int, submissions: list[UpdateVector], benign_updates: list[UpdateVector]
    ) -> tuple[list[UpdateVector], dict, float | None, float | None, bool]:
        cfg = self.cfg
        flags: dict[tuple[str, int], bool] = {}
        if cfg.defense == "none":
            return submissions, flags, None, None, False
        d_thr, s_thr = self._defense_thresholds(benign_updates)
        kept_ids = {u.agent_id for u in submissions}
        used_d = used_s = None
        if cfg.defense in ("distance", "both"):
            result = sentinel.distance_filter(submissions, self.prev_delta, d_thr, t)
            for v in result.verdicts:
                flags[("distance", v.agent_id)] = v.flagged
            if not result.fallback:
                kept_ids &= {u.agent_id for u in result.kept}
            used_d = d_thr
        if cfg.defense in ("similarity", "both"):
            result = sentinel.similarity_filter(submissions, s_thr, cfg.defense_score_policy, t)
            for v in result.verdicts:
                flags[("similarity", v.agent_id)] = v.flagged
            if not result.fallback:
                kept_ids &= {u.agent_id for u in result.kept}
            used_s = s_thr
        kept = [u for u in submissions if u.agent_id in kept_ids]
        fallback = False
        if not kept:
            kept = list(submissions)
            fallback = True
        return kept, flags, used_d, used_s, fallback

    # -- the round loop ------------------------------------------------------

    def run(self, out_dir: Path) -> dict:
        cfg = self.cfg
        started = time.perf_counter()
        out_dir.mkdir(parents=True, exist_ok=True)
        columns = _csv_columns(self.benign_ids, self.malicious_ids)
        rows: list[dict] = []
        debug_records: list[dict] = []

        best_acc = 0.0
        flag_counts = {"distance": {"malicious": 0, "benign": 0}, "similarity": {"malicious": 0, "benign": 0}}
        flag_opportunities = {"distance": 0, "similarity": 0}
        monitor_counts = {"distance": {"malicious": 0, "benign": 0}, "similarity": {"malicious": 0, "benign": 0}}
        stealth_counts = {"distance": 0, "similarity": 0, "joint": 0, "total": 0}
        stealth_rounds_ok = 0
        stealth_rounds_total = 0
        pred_gaps: list[float] = []

        for t in range(1, cfg.rounds + 1):
            benign_updates = [
                fedsim.local_train(
                    self.state, self.shards[i], cfg.local_epochs, cfg.local_lr,
                    self.root.split(f"agent-{i}").split(f"round-{t}"),
                    agent_id=i, dropout_enabled=cfg.dropout_enabled,
                    a_init_std=cfg.lora_a_init_std,
                )
                for i in self.benign_ids
            ]
            attack_results = self._malicious_updates(t, benign_updates)
            submissions = benign_updates + [r[0] for r in attack_results]

            kept, flags, used_d, used_s, fallback = self._apply_defense(
                t, submissions, benign_updates
            )
            monitor = self._monitor_flags(t, submissions, benign_updates)
            delta = fedsim.aggregate(kept)
            new_state = fedsim.apply_global(self.state, delta)

            dists = sentinel.distances_to_reference(submissions, delta)
            pairs = sentinel.pairwise_similarities(submissions)
            scores = sentinel.similarity_scores(submissions, "mean")
            benign_dists = [dists[i] for i in self.benign_ids]
            benign_pairs = [
                s for (i, j), s in pairs.items()
                if i in self.benign_ids and j in self.benign_ids
            ]

            global_acc = fedsim.evaluate(new_state, self.test)
            local_accs = [fedsim.evaluate(new_state, self.shards[i]) for i in self.benign_ids]
            best_acc = max(best_acc, global_acc)

            row: dict = {
                "round": t,
                "global_accuracy": global_acc,
                "benign_local_accuracy_mean": float(np.mean(local_accs)),
                "broadcast_d_threshold": self.broadcast[0],
                "broadcast_sim_threshold": self.broadcast[1],
                "defense_d_threshold": used_d,
                "defense_sim_threshold": used_s,
                "sim_min": float(min(pairs.values())),
                "sim_mean": float(np.mean(list(pairs.values()))),
                "sim_max": float(max(pairs.values())),
                "defense_fallback": fallback,
            }
            for u in submissions:
                aid = u.agent_id
                group = "malicious" if u.is_malicious else "benign"
                row[f"dist_a{aid}"] = dists[aid]
                row[f"simscore_a{aid}"] = scores[aid]
                row[f"flag_dist_a{aid}"] = flags.get(("distance", aid))
                row[f"flag_sim_a{aid}"] = flags.get(("similarity", aid))
                row[f"monitor_flag_dist_a{aid}"] = monitor[("distance", aid)]
                row[f"monitor_flag_sim_a{aid}"] = monitor[("similarity", aid)]
                for kind in ("distance", "similarity"):
                    monitor_counts[kind][group] += int(monitor[(kind, aid)])
                    flagged = flags.get((kind, aid))
                    if flagged is not None:
                        flag_counts[kind][group] += int(flagged)
            for kind in ("distance", "similarity"):
                if any(k == kind for k, _ in flags):
                    flag_opportunities[kind] += 1

            round_all_ok = True
            for update, report, debug in attack_results:
                mid = update.agent_id
                dist_ok = dists[mid] <= self.broadcast[0]
                sim_ok = scores[mid] <= self.broadcast[1]
                round_all_ok = round_all_ok and dist_ok and sim_ok
                row[f"audit_dist_ok_a{mid}"] = dist_ok
                row[f"audit_sim_ok_a{mid}"] = sim_ok
                stealth_counts["distance"] += int(dist_ok)
                stealth_counts["similarity"] += int(sim_ok)
                stealth_counts["joint"] += int(dist_ok and sim_ok)
                stealth_counts["total"] += 1
                if report is not None:
                    row[f"report_dist_a{mid}"] = report.distance
                    row[f"report_sim_a{mid}"] = report.similarity
                if debug is not None:
                    row[f"lambda_a{mid}"] = debug.get("lambda")
                    row[f"theta_a{mid}"] = debug.get("theta")
                    predicted = debug.pop("predicted_global", None)
                    if predicted is not None:
                        gap = float(np.linalg.norm(predicted - delta))
                        row[f"pred_gap_a{mid}"] = gap
                        pred_gaps.append(gap)
                    if cfg.debug:
                        debug_records.append(_jsonable(debug))
            if attack_results:
                stealth_rounds_total += 1
                stealth_rounds_ok += int(round_all_ok)

            rows.append(row)

            d_next, s_next = manipulator.estimate_thresholds(
                benign_dists, benign_pairs, cfg.threshold_margin, cfg.similarity_percentile
            )
            self.broadcast = (d_next, s_next)
            self.prev_delta = delta
            self.state = new_state

        wall = time.perf_counter() - started

        csv_path = out_dir / "metrics.csv"
        with csv_path.open("w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(columns) + "\n")
            for row in rows:
                fh.write(",".join(_fmt(row.get(col)) for col in columns) + "\n")

        summary = {
            "final_global_accuracy": rows[-1]["global_accuracy"],
            "best_global_accuracy": best_acc,
            "final_benign_local_accuracy": rows[-1]["benign_local_accuracy_mean"],
            "rounds_completed": cfg.rounds,
            "effective_rank": self.effective_rank,
            "flat_dim": self.state.backbone.flat_dim,
            "agents": {"benign": self.benign_ids, "malicious": self.malicious_ids},
            "flag_rates": {
                kind: {
                    "malicious": _rate(
                        flag_counts[kind]["malicious"],
                        flag_opportunities[kind]
                        * (len(self.malicious_ids) if self.attack_active else 0),
                    ),
                    "benign": _rate(
                        flag_counts[kind]["benign"],
                        flag_opportunities[kind] * len(self.benign_ids),
                    ),
                }
                for kind in ("distance", "similarity")
            },
            "monitor_flag_rates": {
                kind: {
                    "malicious": _rate(
                        monitor_counts[kind]["malicious"],
                        cfg.rounds * (len(self.malicious_ids) if self.attack_active else 0),
                    ),
                    "benign": _rate(
                        monitor_counts[kind]["benign"], cfg.rounds * len(self.benign_ids)
                    ),
                }
                for kind in ("distance", "similarity")
            },
            "stealth": (
                {
                    "distance_rate": stealth_counts["distance"] / stealth_counts["total"],
                    "similarity_rate": stealth_counts["similarity"] / stealth_counts["total"],
                    "joint_rate": stealth_counts["joint"] / stealth_counts["total"],
                    "joint_round_rate": stealth_rounds_ok / stealth_rounds_total,
                }
                if stealth_counts["total"]
                else None
            ),
            "prediction_gap_mean": float(np.mean(pred_gaps)) if pred_gaps else None,
            "config": cfg.as_dict(),
            "wall_time_s": wall,
        }
        (out_dir / "summary.json").write_text(
            json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        if cfg.debug and debug_records:
            (out_dir / "debug").mkdir(exist_ok=True)
            (out_dir / "debug" / "attack_trace.json").write_text(
                json.dumps(debug_records, indent=2, sort_keys=True) + "\n", encoding="utf-8"
            )
        return summary


def _rate(count: int, total: int) -> float | None:
    return count / total if total else None


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path) -> dict:
    """Run one experiment and write metrics.csv plus summary.json."""
    return _Experiment(cfg).run(Path(out_dir))


def run_sweep(cfg: ExperimentConfig, axis: str, values: list, out_root: str | Path) -> dict:
    """One run per value of a sweepable field, sharing the base seed."""
    if axis not in SWEEPABLE_FIELDS:
        raise ValueError(f"axis {axis!r} is not sweepable; choose from {SWEEPABLE_FIELDS}")
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    entries = []
    for value in values:
        run_cfg = replace_config(cfg, axis, value)
        run_dir = out_root / f"{axis}={value}"
        summary = run_experiment(run_cfg, run_dir)
        entries.append(
            {
                "value": value,
                "dir": run_dir.name,
                "final_global_accuracy": summary["final_global_accuracy"],
            }
        )
    index = {"axis": axis, "values": values, "runs": entries}
    (out_root / "index.json").write_text(
        json.dumps(index, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return index


def replace_config(cfg: ExperimentConfig, name: str, value) -> ExperimentConfig:
    """Copy of ``cfg`` with one field replaced and revalidated."""
    import dataclasses as _dc

    from .config import _coerce  # shared coercion rules

    new_cfg = _dc.replace(cfg)
    setattr(new_cfg, name, _coerce(name, value, getattr(cfg, name)))
    new_cfg.validate()
    return new_cfg
