import { mkdtempSync, readFileSync, rmSync, writeFileSync } from "fs";
import { tmpdir } from "os";
import { join } from "path";
import { afterAll, describe, expect, it } from "vitest";

import { numberColumn, parseMetrics, requireColumns } from "../src/csv.js";
import { plotAblation, plotAccuracy, plotGeometry } from "../src/plots.js";
import { loadRun } from "../src/runs.js";
import { main, render } from "../src/cli.js";
import { writeRunDir } from "./fixtures.js";

const base = mkdtempSync(join(tmpdir(), "figkit-test-"));
afterAll(() => rmSync(base, { recursive: true, force: true }));

const benignDir = writeRunDir(join(base, "benign"), { attack: "none", seed: 0 });
const attackDir = writeRunDir(join(base, "augmp"), { attack: "augmp", seed: 0 });
const alpenDir = writeRunDir(join(base, "alpen"), { attack: "augmp", alPenaltyOff: true });
const grlDir = writeRunDir(join(base, "grl"), { attack: "augmp", grlOff: true });

describe("csv parsing", () => {
  it("validates required columns by name", () => {
    const table = parseMetrics("round,a\n1,2\n");
    expect(() => requireColumns(table, ["missing_col"])).toThrow(/missing_col/);
  });

  it("turns empty cells into NaN holes", () => {
    const table = parseMetrics("round,x\n1,\n2,0.5\n");
    const xs = numberColumn(table, "x");
    expect(Number.isNaN(xs[0])).toBe(true);
    expect(xs[1]).toBe(0.5);
  });

  it("rejects ragged rows", () => {
    expect(() => parseMetrics("a,b\n1\n")).toThrow(/cells/);
  });
});

describe("run handles", () => {
  it("loads labels and agent rosters", () => {
    const run = loadRun(attackDir);
    expect(run.benignIds).toEqual([0, 1, 2]);
    expect(run.maliciousIds).toEqual([3, 4]);
    expect(run.label).toContain("attack augmp");
    expect(run.variant).toBe("full");
  });

  it("classifies ablation variants from the config echo", () => {
    expect(loadRun(alpenDir).variant).toBe("al_penalty_off");
    expect(loadRun(grlDir).variant).toBe("grl_off");
  });

  it("hard-errors on a missing per-agent column", () => {
    const broken = join(base, "broken");
    writeRunDir(broken, { attack: "augmp" });
    const metrics = readFileSync(join(broken, "metrics.csv"), "utf8")
      .split("\n")
      .map((line) => line.split(",").filter((_, i) => i !== 11).join(","))
      .join("\n");
    writeFileSync(join(broken, "metrics.csv"), metrics);
    expect(() => loadRun(broken)).toThrow(/dist_a0/);
  });
});

describe("figures", () => {
  it("accuracy renders one curve per run and is byte-stable", () => {
    const runs = [loadRun(benignDir), loadRun(attackDir)];
    const first = plotAccuracy(runs);
    const second = plotAccuracy(runs.map((r) => loadRun(r.dir)));
    expect(first).toBe(second);
    expect(first).toContain("<svg");
    expect((first.match(/<polyline/g) ?? []).length).toBe(2);
  });

  it("accuracy rejects an empty run list", () => {
    expect(() => plotAccuracy([])).toThrow(/at least one run/);
  });

  it("geometry distinguishes malicious agents with markers and draws the threshold dashed", () => {
    const svg = plotGeometry(loadRun(attackDir), "distance");
    expect(svg).toContain("stroke-dasharray");  // threshold line
    expect(svg).toContain("<path d=\"M ");       // cross markers
    expect(svg).toContain("malicious agent 3");
  });

  it("geometry of a benign run carries no malicious markers", () => {
    const svg = plotGeometry(loadRun(benignDir), "similarity");
    expect(svg).not.toContain("malicious agent");
  });

  it("ablation needs all three variants", () => {
    const runs = [loadRun(attackDir), loadRun(alpenDir)];
    expect(() => plotAblation(runs)).toThrow(/grl_off/);
  });

  it("ablation renders three panels deterministically", () => {
    const runs = [attackDir, alpenDir, grlDir].map(loadRun);
    const first = plotAblation(runs);
    const second = plotAblation([attackDir, alpenDir, grlDir].map(loadRun));
    expect(first).toBe(second);
    expect((first.match(/font-weight="bold"/g) ?? []).length).toBe(3);
  });
});

describe("cli", () => {
  it("renders through the command line surface", () => {
    const out = join(base, "accuracy.svg");
    const code = main(["accuracy", "--runs", benignDir, attackDir, "--out", out]);
    expect(code).toBe(0);
    const bytes = readFileSync(out);
    main(["accuracy", "--runs", benignDir, attackDir, "--out", out]);
    expect(readFileSync(out).equals(bytes)).toBe(true);
  });

  it("rejects unknown kinds and missing arguments", () => {
    expect(main(["sparkline", "--runs", benignDir, "--out", "x.svg"])).toBe(1);
    expect(main(["accuracy", "--out", "x.svg"])).toBe(1);
    expect(main(["distance", "--runs", benignDir, attackDir, "--out", "x.svg"])).toBe(1);
  });

  it("render() dispatches every kind", () => {
    expect(render("accuracy", [benignDir])).toContain("<svg");
    expect(render("distance", [attackDir])).toContain("<svg");
    expect(render("similarity", [attackDir])).toContain("<svg");
    expect(render("ablation", [attackDir, alpenDir, grlDir])).toContain("<svg");
  });
});
