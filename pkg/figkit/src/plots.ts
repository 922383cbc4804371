/**
 * The three figure kinds: accuracy curves across runs, per-agent geometry
 * traces for one run, and the three-variant ablation panel.
 */

import { numberColumn } from "./csv.js";
import { RunHandle, Variant } from "./runs.js";
import { Band, LegendEntry, PALETTE, PanelSpec, renderFigure, Series } from "./svg.js";

export type GeometryMetric = "distance" | "similarity";

export function plotAccuracy(runs: RunHandle[]): string {
  if (runs.length === 0) {
    throw new Error("accuracy figure needs at least one run");
  }
  const series: Series[] = runs.map((run, i) => ({
    x: numberColumn(run.metrics, "round"),
    y: numberColumn(run.metrics, "global_accuracy"),
    color: PALETTE[i % PALETTE.length],
    label: run.label,
  }));
  const legend: LegendEntry[] = series.map((s, i) => ({
    label: runs[i].label,
    color: s.color,
  }));
  return renderFigure(
    [{
      title: "Global test accuracy per round",
      xLabel: "communication round",
      yLabel: "accuracy",
      series,
    }],
    legend,
  );
}

const METRIC_COLUMNS: Record<GeometryMetric, {
  perAgent: (id: number) => string;
  threshold: string;
  title: string;
  yLabel: string;
}> = {
  distance: {
    perAgent: (id) => `dist_a${id}`,
    threshold: "broadcast_d_threshold",
    title: "Distance to the aggregated update, per agent",
    yLabel: "Euclidean distance",
  },
  similarity: {
    perAgent: (id) => `simscore_a${id}`,
    threshold: "broadcast_sim_threshold",
    title: "Similarity score against the other updates, per agent",
    yLabel: "aggregate cosine score",
  },
};

export function plotGeometry(run: RunHandle, metric: GeometryMetric): string {
  const spec = METRIC_COLUMNS[metric];
  if (!spec) {
    throw new Error(`unknown geometry metric "${metric}"`);
  }
  const rounds = numberColumn(run.metrics, "round");
  const series: Series[] = [];
  const legend: LegendEntry[] = [];

  run.benignIds.forEach((id, i) => {
    series.push({
      x: rounds,
      y: numberColumn(run.metrics, spec.perAgent(id)),
      color: PALETTE[i % PALETTE.length],
      marker: "none",
    });
  });
  if (run.benignIds.length) {
    legend.push({ label: "benign agents", color: PALETTE[0] });
  }
  // Malicious traces carry cross markers so they stay distinguishable
  // without relying on color.
  run.maliciousIds.forEach((id, i) => {
    series.push({
      x: rounds,
      y: numberColumn(run.metrics, spec.perAgent(id)),
      color: PALETTE[(run.benignIds.length + i) % PALETTE.length],
      marker: "cross",
      width: 2,
    });
    legend.push({
      label: `malicious agent ${id}`,
      color: PALETTE[(run.benignIds.length + i) % PALETTE.length],
      marker: "cross",
    });
  });

  const thresholds = numberColumn(run.metrics, spec.threshold);
  if (thresholds.some(Number.isFinite)) {
    series.push({
      x: rounds,
      y: thresholds,
      color: "#222222",
      dash: true,
      width: 1.2,
    });
    legend.push({
      label: metric === "distance" ? "threshold d_T" : "threshold delta_T",
      color: "#222222",
      dash: true,
    });
  }
  return renderFigure(
    [{ title: `${spec.title} (${run.label})`, xLabel: "communication round",
       yLabel: spec.yLabel, series }],
    legend,
  );
}

function maliciousMean(run: RunHandle, perAgent: (id: number) => string): number[] {
  const columns = run.maliciousIds.map((id) => numberColumn(run.metrics, perAgent(id)));
  return numberColumn(run.metrics, "round").map((_, t) => {
    const values = columns.map((col) => col[t]).filter(Number.isFinite);
    if (values.length === 0) return NaN;
    return values.reduce((a, b) => a + b, 0) / values.length;
  });
}

function benignBand(run: RunHandle, perAgent: (id: number) => string, color: string): Band {
  const columns = run.benignIds.map((id) => numberColumn(run.metrics, perAgent(id)));
  const rounds = numberColumn(run.metrics, "round");
  const low = rounds.map((_, t) => Math.min(...columns.map((col) => col[t])));
  const high = rounds.map((_, t) => Math.max(...columns.map((col) => col[t])));
  return { x: rounds, low, high, color };
}

const VARIANT_ORDER: Variant[] = ["full", "al_penalty_off", "grl_off"];

export function plotAblation(runs: RunHandle[]): string {
  const byVariant = new Map<Variant, RunHandle>();
  for (const run of runs) {
    byVariant.set(run.variant, run);
  }
  for (const variant of VARIANT_ORDER) {
    if (!byVariant.has(variant)) {
      throw new Error(`ablation figure is missing the "${variant}" variant run`);
    }
  }
  const ordered = VARIANT_ORDER.map((v) => byVariant.get(v)!);
  const colors = [PALETTE[0], PALETTE[1], PALETTE[2]];

  const accuracy: PanelSpec = {
    title: "Global accuracy",
    xLabel: "communication round",
    yLabel: "accuracy",
    series: ordered.map((run, i) => ({
      x: numberColumn(run.metrics, "round"),
      y: numberColumn(run.metrics, "global_accuracy"),
      color: colors[i],
    })),
  };
  const distance: PanelSpec = {
    title: "Malicious distance vs benign band",
    xLabel: "communication round",
    yLabel: "Euclidean distance",
    bands: [benignBand(ordered[0], (id) => `dist_a${id}`, "#888888")],
    series: ordered.map((run, i) => ({
      x: numberColumn(run.metrics, "round"),
      y: maliciousMean(run, (id) => `dist_a${id}`),
      color: colors[i],
      marker: "cross" as const,
    })),
  };
  const similarity: PanelSpec = {
    title: "Malicious similarity vs benign band",
    xLabel: "communication round",
    yLabel: "aggregate cosine score",
    bands: [benignBand(ordered[0], (id) => `simscore_a${id}`, "#888888")],
    series: ordered.map((run, i) => ({
      x: numberColumn(run.metrics, "round"),
      y: maliciousMean(run, (id) => `simscore_a${id}`),
      color: colors[i],
      marker: "cross" as const,
    })),
  };
  const legend: LegendEntry[] = ordered.map((run, i) => ({
    label: run.variant === "full" ? "full attack" : run.variant.replaceAll("_", " "),
    color: colors[i],
    marker: "cross",
  }));
  legend.push({ label: "benign min-max band (full run)", color: "#888888" });
  return renderFigure([accuracy, distance, similarity], legend);
}
