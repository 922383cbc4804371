/** Synthetic run directories matching the simulator's output schema. */

import { mkdirSync, writeFileSync } from "fs";
import { join } from "path";

export interface FixtureOptions {
  rounds?: number;
  benign?: number[];
  malicious?: number[];
  attack?: string;
  seed?: number;
  alPenaltyOff?: boolean;
  grlOff?: boolean;
}

function columnsFor(benign: number[], malicious: number[]): string[] {
  const cols = [
    "round", "global_accuracy", "benign_local_accuracy_mean",
    "broadcast_d_threshold", "broadcast_sim_threshold",
    "defense_d_threshold", "defense_sim_threshold",
    "sim_min", "sim_mean", "sim_max", "defense_fallback",
  ];
  for (const id of [...benign, ...malicious]) {
    cols.push(
      `dist_a${id}`, `simscore_a${id}`,
      `flag_dist_a${id}`, `flag_sim_a${id}`,
      `monitor_flag_dist_a${id}`, `monitor_flag_sim_a${id}`,
    );
  }
  for (const id of malicious) {
    cols.push(
      `audit_dist_ok_a${id}`, `audit_sim_ok_a${id}`,
      `report_dist_a${id}`, `report_sim_a${id}`,
      `lambda_a${id}`, `theta_a${id}`, `pred_gap_a${id}`,
    );
  }
  return cols;
}

/** Deterministic pseudo-noise so fixtures are stable across runs. */
function wobble(round: number, salt: number): number {
  return 0.5 + 0.5 * Math.sin(round * 2.399 + salt * 1.618);
}

export function writeRunDir(dir: string, options: FixtureOptions = {}): string {
  const rounds = options.rounds ?? 12;
  const benign = options.benign ?? [0, 1, 2];
  const malicious = options.malicious ?? (options.attack === "none" ? [] : [3, 4]);
  const attack = options.attack ?? "augmp";
  mkdirSync(dir, { recursive: true });

  const cols = columnsFor(benign, malicious);
  const lines = [cols.join(",")];
  for (let t = 1; t <= rounds; t++) {
    const row: Record<string, string> = {};
    row["round"] = String(t);
    row["global_accuracy"] = (0.3 + (0.6 * t) / rounds).toFixed(4);
    row["benign_local_accuracy_mean"] = (0.25 + (0.6 * t) / rounds).toFixed(4);
    row["broadcast_d_threshold"] = (1.5 - t / (rounds * 2)).toFixed(4);
    row["broadcast_sim_threshold"] = "0.9";
    row["defense_d_threshold"] = "";
    row["defense_sim_threshold"] = "";
    row["sim_min"] = "-0.2";
    row["sim_mean"] = "0.1";
    row["sim_max"] = "0.8";
    row["defense_fallback"] = "0";
    benign.forEach((id, i) => {
      row[`dist_a${id}`] = (0.6 + 0.3 * wobble(t, i)).toFixed(4);
      row[`simscore_a${id}`] = (0.1 + 0.2 * wobble(t, i + 7)).toFixed(4);
      row[`flag_dist_a${id}`] = "";
      row[`flag_sim_a${id}`] = "";
      row[`monitor_flag_dist_a${id}`] = "0";
      row[`monitor_flag_sim_a${id}`] = "0";
    });
    malicious.forEach((id, i) => {
      row[`dist_a${id}`] = (0.7 + 0.2 * wobble(t, i + 13)).toFixed(4);
      row[`simscore_a${id}`] = (0.2 + 0.2 * wobble(t, i + 17)).toFixed(4);
      row[`flag_dist_a${id}`] = "";
      row[`flag_sim_a${id}`] = "";
      row[`monitor_flag_dist_a${id}`] = "0";
      row[`monitor_flag_sim_a${id}`] = "0";
      row[`audit_dist_ok_a${id}`] = "1";
      row[`audit_sim_ok_a${id}`] = "1";
      row[`report_dist_a${id}`] = (0.65 + 0.1 * wobble(t, i + 23)).toFixed(4);
      row[`report_sim_a${id}`] = "0.3";
      row[`lambda_a${id}`] = "0";
      row[`theta_a${id}`] = "0";
      row[`pred_gap_a${id}`] = "0.01";
    });
    lines.push(cols.map((c) => row[c] ?? "").join(","));
  }
  writeFileSync(join(dir, "metrics.csv"), lines.join("\n") + "\n");

  const summary = {
    agents: { benign, malicious },
    config: {
      attack,
      defense: "none",
      seed: options.seed ?? 0,
      al_penalty_off: options.alPenaltyOff ?? false,
      grl_off: options.grlOff ?? false,
    },
    final_global_accuracy: 0.9,
    wall_time_s: 1.0,
  };
  writeFileSync(join(dir, "summary.json"), JSON.stringify(summary, null, 2) + "\n");
  return dir;
}
