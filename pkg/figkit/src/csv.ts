/**
 * Minimal reader for the run metrics files.
 *
 * The emitting side writes plain comma-separated values with a fixed header
 * and no quoting, so parsing is a straight split; what matters here is
 * validating the schema loudly (a missing column is always a hard error
 * naming the column) and turning sparse cells into NaN holes the plots can
 * skip over.
 */

export interface MetricsTable {
  columns: string[];
  rows: Record<string, string>[];
}

export function parseMetrics(text: string): MetricsTable {
  const lines = text.split(/\r?\n/).filter((line) => line.length > 0);
  if (lines.length < 2) {
    throw new Error("metrics.csv has no data rows");
  }
  const columns = lines[0].split(",");
  const rows = lines.slice(1).map((line, index) => {
    const cells = line.split(",");
    if (cells.length !== columns.length) {
      throw new Error(
        `metrics.csv row ${index + 1} has ${cells.length} cells, header has ${columns.length}`,
      );
    }
    const row: Record<string, string> = {};
    columns.forEach((name, i) => {
      row[name] = cells[i];
    });
    return row;
  });
  return { columns, rows };
}

export function requireColumns(table: MetricsTable, names: string[]): void {
  for (const name of names) {
    if (!table.columns.includes(name)) {
      throw new Error(`metrics.csv is missing required column "${name}"`);
    }
  }
}

/** Numeric view of one column; empty cells become NaN. */
export function numberColumn(table: MetricsTable, name: string): number[] {
  requireColumns(table, [name]);
  return table.rows.map((row) => {
    const cell = row[name];
    return cell === "" ? NaN : Number(cell);
  });
}
