/**
 * Run directories: a metrics.csv plus summary.json pair emitted by the
 * simulator.  The handle carries the parsed table, the agent roster and a
 * human-readable label derived from the echoed configuration.
 */

import { readFileSync } from "fs";
import { join } from "path";

import { MetricsTable, parseMetrics, requireColumns } from "./csv.js";

export type Variant = "full" | "al_penalty_off" | "grl_off";

export interface RunHandle {
  dir: string;
  metrics: MetricsTable;
  summary: Record<string, unknown>;
  label: string;
  benignIds: number[];
  maliciousIds: number[];
  variant: Variant;
}

interface SummaryShape {
  agents?: { benign?: number[]; malicious?: number[] };
  config?: Record<string, unknown>;
}

export function loadRun(dir: string): RunHandle {
  const metrics = parseMetrics(readFileSync(join(dir, "metrics.csv"), "utf8"));
  const summary = JSON.parse(
    readFileSync(join(dir, "summary.json"), "utf8"),
  ) as SummaryShape;

  const benignIds = summary.agents?.benign ?? [];
  const maliciousIds = summary.agents?.malicious ?? [];
  const config = summary.config ?? {};

  requireColumns(metrics, [
    "round",
    "global_accuracy",
    "benign_local_accuracy_mean",
    "broadcast_d_threshold",
    "broadcast_sim_threshold",
  ]);
  for (const id of [...benignIds, ...maliciousIds]) {
    requireColumns(metrics, [`dist_a${id}`, `simscore_a${id}`]);
  }

  const attack = String(config["attack"] ?? "none");
  const defense = String(config["defense"] ?? "none");
  const seed = Number(config["seed"] ?? 0);
  let variant: Variant = "full";
  if (config["grl_off"] === true) variant = "grl_off";
  else if (config["al_penalty_off"] === true) variant = "al_penalty_off";

  const parts = [`attack ${attack}`];
  if (attack === "augmp" && variant !== "full") parts.push(variant.replaceAll("_", " "));
  if (defense !== "none") parts.push(`defense ${defense}`);
  parts.push(`seed ${seed}`);

  return {
    dir,
    metrics,
    summary: summary as Record<string, unknown>,
    label: parts.join(", "),
    benignIds,
    maliciousIds,
    variant,
  };
}
