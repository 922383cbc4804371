#!/usr/bin/env node
/**
 * figkit <plot-kind> --runs PATH... --out FILE
 *
 * Plot kinds: accuracy (any number of runs), distance and similarity (one
 * run), ablation (the full / al_penalty_off / grl_off triple).  Output is
 * an SVG whose bytes depend only on the input files.
 */

import { writeFileSync } from "fs";

import { GeometryMetric, plotAblation, plotAccuracy, plotGeometry } from "./plots.js";
import { loadRun } from "./runs.js";

const KINDS = ["accuracy", "distance", "similarity", "ablation"] as const;
type Kind = (typeof KINDS)[number];

interface CliArgs {
  kind: Kind;
  runs: string[];
  out: string;
}

export function parseArgs(argv: string[]): CliArgs {
  if (argv.length === 0) {
    throw new Error(`usage: figkit <${KINDS.join("|")}> --runs PATH... --out FILE`);
  }
  const [kind, ...rest] = argv;
  if (!KINDS.includes(kind as Kind)) {
    throw new Error(`unknown plot kind "${kind}"; expected one of ${KINDS.join(", ")}`);
  }
  const runs: string[] = [];
  let out: string | undefined;
  for (let i = 0; i < rest.length; i++) {
    const arg = rest[i];
    if (arg === "--runs") {
      while (i + 1 < rest.length && !rest[i + 1].startsWith("--")) {
        runs.push(rest[++i]);
      }
    } else if (arg === "--out") {
      out = rest[++i];
    } else {
      throw new Error(`unexpected argument "${arg}"`);
    }
  }
  if (runs.length === 0) throw new Error("--runs needs at least one run directory");
  if (!out) throw new Error("--out FILE is required");
  return { kind: kind as Kind, runs, out };
}

export function render(kind: Kind, runDirs: string[]): string {
  const runs = runDirs.map(loadRun);
  switch (kind) {
    case "accuracy":
      return plotAccuracy(runs);
    case "distance":
    case "similarity": {
      if (runs.length !== 1) {
        throw new Error(`${kind} figure takes exactly one run directory`);
      }
      return plotGeometry(runs[0], kind as GeometryMetric);
    }
    case "ablation":
      return plotAblation(runs);
  }
}

export function main(argv: string[]): number {
  try {
    const args = parseArgs(argv);
    const svg = render(args.kind, args.runs);
    writeFileSync(args.out, svg, "utf8");
    console.log(`wrote ${args.out}`);
    return 0;
  } catch (error) {
    console.error(`figkit: ${error instanceof Error ? error.message : error}`);
    return 1;
  }
}

import { fileURLToPath } from "url";

if (process.argv[1] && fileURLToPath(import.meta.url) === process.argv[1]) {
  process.exit(main(process.argv.slice(2)));
}
