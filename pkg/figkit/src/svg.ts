/**
 * Hand-rolled SVG charting, deterministic by construction.
 *
 * No timestamps, no randomness, fixed number formatting: the same inputs
 * always produce the same bytes, which is the property the figure tests
 * pin.  The vocabulary is just what the run figures need: line series with
 * optional point markers, dashed reference lines, shaded bands, linear
 * axes with ticks, a legend, and side-by-side panels.
 */

export const PALETTE = [
  "#1f5fa8", "#d4572a", "#3a8a3d", "#8254a0",
  "#a08b2c", "#3d8a8a", "#b04a6e", "#6b6b6b",
];

export function fmt(value: number): string {
  if (!Number.isFinite(value)) return "0";
  const rounded = value.toFixed(2);
  return rounded === "-0.00" ? "0.00" : rounded;
}

export interface Series {
  x: number[];
  y: number[];
  color: string;
  label?: string;
  dash?: boolean;
  marker?: "cross" | "circle" | "none";
  width?: number;
}

export interface Band {
  x: number[];
  low: number[];
  high: number[];
  color: string;
  label?: string;
}

export interface PanelSpec {
  title: string;
  xLabel: string;
  yLabel: string;
  series: Series[];
  bands?: Band[];
}

const PANEL_W = 420;
const PANEL_H = 300;
const MARGIN = { top: 34, right: 16, bottom: 42, left: 56 };

function niceTicks(lo: number, hi: number, count = 5): number[] {
  if (!(hi > lo)) {
    hi = lo + 1;
  }
  const span = hi - lo;
  const step = Math.pow(10, Math.floor(Math.log10(span / count)));
  const candidates = [step, 2 * step, 2.5 * step, 5 * step, 10 * step];
  const chosen = candidates.find((c) => span / c <= count) ?? 10 * step;
  const ticks: number[] = [];
  for (let t = Math.ceil(lo / chosen) * chosen; t <= hi + 1e-12; t += chosen) {
    ticks.push(t);
  }
  return ticks;
}

function finitePairs(xs: number[], ys: number[]): Array<[number, number]> {
  const out: Array<[number, number]> = [];
  for (let i = 0; i < xs.length; i++) {
    if (Number.isFinite(xs[i]) && Number.isFinite(ys[i])) {
      out.push([xs[i], ys[i]]);
    }
  }
  return out;
}

function renderPanel(spec: PanelSpec, xOffset: number): string {
  const xs: number[] = [];
  const ys: number[] = [];
  for (const s of spec.series) {
    for (const [x, y] of finitePairs(s.x, s.y)) {
      xs.push(x);
      ys.push(y);
    }
  }
  for (const b of spec.bands ?? []) {
    for (const [x, y] of finitePairs(b.x, b.low)) { xs.push(x); ys.push(y); }
    for (const [x, y] of finitePairs(b.x, b.high)) { xs.push(x); ys.push(y); }
  }
  if (xs.length === 0) {
    throw new Error(`panel "${spec.title}" has no finite data to draw`);
  }
  let xLo = Math.min(...xs), xHi = Math.max(...xs);
  let yLo = Math.min(...ys), yHi = Math.max(...ys);
  if (yHi === yLo) { yHi += 0.5; yLo -= 0.5; }
  const yPad = 0.05 * (yHi - yLo);
  yLo -= yPad; yHi += yPad;

  const plotW = PANEL_W - MARGIN.left - MARGIN.right;
  const plotH = PANEL_H - MARGIN.top - MARGIN.bottom;
  const px = (x: number) => xOffset + MARGIN.left + ((x - xLo) / (xHi - xLo || 1)) * plotW;
  const py = (y: number) => MARGIN.top + (1 - (y - yLo) / (yHi - yLo)) * plotH;

  const parts: string[] = [];
  parts.push(
    `<rect x="${fmt(xOffset + MARGIN.left)}" y="${fmt(MARGIN.top)}" width="${fmt(plotW)}" ` +
    `height="${fmt(plotH)}" fill="none" stroke="#444444" stroke-width="1"/>`,
  );
  parts.push(
    `<text x="${fmt(xOffset + PANEL_W / 2)}" y="20" text-anchor="middle" ` +
    `font-size="13" font-weight="bold">${escapeText(spec.title)}</text>`,
  );

  for (const t of niceTicks(xLo, xHi)) {
    parts.push(
      `<line x1="${fmt(px(t))}" y1="${fmt(MARGIN.top + plotH)}" x2="${fmt(px(t))}" ` +
      `y2="${fmt(MARGIN.top + plotH + 4)}" stroke="#444444"/>`,
      `<text x="${fmt(px(t))}" y="${fmt(MARGIN.top + plotH + 16)}" text-anchor="middle" ` +
      `font-size="10">${formatTick(t)}</text>`,
    );
  }
  for (const t of niceTicks(yLo, yHi)) {
    parts.push(
      `<line x1="${fmt(xOffset + MARGIN.left - 4)}" y1="${fmt(py(t))}" ` +
      `x2="${fmt(xOffset + MARGIN.left)}" y2="${fmt(py(t))}" stroke="#444444"/>`,
      `<text x="${fmt(xOffset + MARGIN.left - 7)}" y="${fmt(py(t) + 3)}" text-anchor="end" ` +
      `font-size="10">${formatTick(t)}</text>`,
    );
  }
  parts.push(
    `<text x="${fmt(xOffset + MARGIN.left + plotW / 2)}" y="${fmt(PANEL_H - 8)}" ` +
    `text-anchor="middle" font-size="11">${escapeText(spec.xLabel)}</text>`,
    `<text x="${fmt(xOffset + 14)}" y="${fmt(MARGIN.top + plotH / 2)}" text-anchor="middle" ` +
    `font-size="11" transform="rotate(-90 ${fmt(xOffset + 14)} ${fmt(MARGIN.top + plotH / 2)})">` +
    `${escapeText(spec.yLabel)}</text>`,
  );

  for (const band of spec.bands ?? []) {
    const up = finitePairs(band.x, band.high).map(([x, y]) => `${fmt(px(x))},${fmt(py(y))}`);
    const down = finitePairs(band.x, band.low)
      .reverse()
      .map(([x, y]) => `${fmt(px(x))},${fmt(py(y))}`);
    if (up.length && down.length) {
      parts.push(
        `<polygon points="${[...up, ...down].join(" ")}" fill="${band.color}" ` +
        `fill-opacity="0.18" stroke="none"/>`,
      );
    }
  }

  for (const s of spec.series) {
    const pts = finitePairs(s.x, s.y);
    if (pts.length === 0) continue;
    const path = pts.map(([x, y]) => `${fmt(px(x))},${fmt(py(y))}`).join(" ");
    const dash = s.dash ? ' stroke-dasharray="6 4"' : "";
    parts.push(
      `<polyline points="${path}" fill="none" stroke="${s.color}" ` +
      `stroke-width="${s.width ?? 1.5}"${dash}/>`,
    );
    if (s.marker === "cross") {
      for (const [x, y] of pts) {
        const cx = px(x), cy = py(y);
        parts.push(
          `<path d="M ${fmt(cx - 3)} ${fmt(cy - 3)} L ${fmt(cx + 3)} ${fmt(cy + 3)} ` +
          `M ${fmt(cx - 3)} ${fmt(cy + 3)} L ${fmt(cx + 3)} ${fmt(cy - 3)}" ` +
          `stroke="${s.color}" stroke-width="1.2"/>`,
        );
      }
    } else if (s.marker === "circle") {
      for (const [x, y] of pts) {
        parts.push(
          `<circle cx="${fmt(px(x))}" cy="${fmt(py(y))}" r="2.4" fill="none" ` +
          `stroke="${s.color}" stroke-width="1.2"/>`,
        );
      }
    }
  }
  return parts.join("\n");
}

function formatTick(value: number): string {
  const abs = Math.abs(value);
  if (abs >= 1000 || (abs > 0 && abs < 0.01)) return value.toExponential(1);
  return String(Math.round(value * 1000) / 1000);
}

function escapeText(text: string): string {
  return text.replaceAll("&", "&amp;").replaceAll("<", "&lt;").replaceAll(">", "&gt;");
}

export interface LegendEntry {
  label: string;
  color: string;
  dash?: boolean;
  marker?: "cross" | "circle" | "none";
}

export function renderFigure(panels: PanelSpec[], legend: LegendEntry[]): string {
  const legendHeight = 18 * legend.length + 10;
  const width = PANEL_W * panels.length;
  const height = PANEL_H + (legend.length ? legendHeight : 0);
  const body = panels.map((panel, i) => renderPanel(panel, i * PANEL_W)).join("\n");

  const legendParts: string[] = [];
  legend.forEach((entry, i) => {
    const y = PANEL_H + 14 + 18 * i;
    const dash = entry.dash ? ' stroke-dasharray="6 4"' : "";
    legendParts.push(
      `<line x1="20" y1="${fmt(y)}" x2="52" y2="${fmt(y)}" stroke="${entry.color}" ` +
      `stroke-width="2"${dash}/>`,
    );
    if (entry.marker === "cross") {
      legendParts.push(
        `<path d="M 33 ${fmt(y - 3)} L 39 ${fmt(y + 3)} M 33 ${fmt(y + 3)} L 39 ${fmt(y - 3)}" ` +
        `stroke="${entry.color}" stroke-width="1.2"/>`,
      );
    }
    legendParts.push(
      `<text x="60" y="${fmt(y + 4)}" font-size="11">${escapeText(entry.label)}</text>`,
    );
  });

  return [
    `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" ` +
    `viewBox="0 0 ${width} ${height}" font-family="Helvetica, Arial, sans-serif">`,
    `<rect width="${width}" height="${height}" fill="#ffffff"/>`,
    body,
    legendParts.join("\n"),
    `</svg>`,
    ``,
  ].join("\n");
}
