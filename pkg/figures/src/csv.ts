/**
 * Reader for the primary component's CSV artifacts: two comment lines carry
 * the schema version and the config hash, then a plain comma-separated table.
 */

import { readFileSync } from "node:fs";

export interface CsvDoc {
  schema: string;
  configSha: string;
  header: string[];
  rows: Record<string, string>[];
}

export function parseCsv(text: string): CsvDoc {
  const lines = text.split(/\r?\n/).filter((l) => l.length > 0);
  let schema = "";
  let configSha = "";
  let header: string[] | null = null;
  const rows: Record<string, string>[] = [];
  for (const line of lines) {
    if (line.startsWith("#")) {
      const m = line.match(/^#\s*(schema|config_sha):\s*(.+)$/);
      if (m) {
        if (m[1] === "schema") schema = m[2].trim();
        else configSha = m[2].trim();
      }
      continue;
    }
    const cells = line.split(",");
    if (header === null) {
      header = cells;
      continue;
    }
    const row: Record<string, string> = {};
    header.forEach((h, i) => (row[h] = cells[i] ?? ""));
    rows.push(row);
  }
  if (header === null || rows.length === 0) {
    throw new Error("empty CSV: no data rows");
  }
  return { schema, configSha, header, rows };
}

export function readCsv(path: string, expectedSchema?: string): CsvDoc {
  const doc = parseCsv(readFileSync(path, "utf8"));
  if (expectedSchema && doc.schema !== expectedSchema) {
    throw new Error(
      `schema mismatch: expected ${expectedSchema}, file declares ${doc.schema || "(none)"}`,
    );
  }
  return doc;
}

export interface SweepPoint {
  backend: string;
  n: number;
  shots: number;
  parameter: string;
  meanAbsErr: number;
  stdAbsErr: number;
  reps: number;
}

export function sweepPoints(doc: CsvDoc): SweepPoint[] {
  if (!doc.header.includes("shots") || !doc.header.includes("parameter")) {
    throw new Error("not a sweep table: missing shots/parameter columns");
  }
  return doc.rows.map((r) => ({
    backend: r.backend,
    n: Number(r.n),
    shots: Number(r.shots),
    parameter: r.parameter,
    meanAbsErr: Number(r.mean_abs_err),
    stdAbsErr: Number(r.std_abs_err),
    reps: Number(r.reps),
  }));
}
