/**
 * Figure builders: error-vs-shots panels with 1/sqrt(S) guides and annotated
 * slopes, and the shot-noise-coefficient-vs-N panel.  These read only the
 * documented CSV artifacts and never recompute any physics.
 */

import { CsvDoc, SweepPoint, sweepPoints } from "./csv.js";
import { guideLine, loglogSlope } from "./fit.js";
import { PanelSpec, Series, renderPanel } from "./svg.js";

const COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

export interface ScalingFigureOptions {
  n?: number; // lattice size to select; defaults to the smallest present
  parameters?: string[]; // subset/order of parameters to draw
  title?: string;
}

export interface BuiltFigure {
  svg: string;
  slopes: Record<string, number>;
}

export function buildScalingFigure(doc: CsvDoc, opts: ScalingFigureOptions = {}): BuiltFigure {
  const pts = sweepPoints(doc);
  const ns = [...new Set(pts.map((p) => p.n))].sort((a, b) => a - b);
  const n = opts.n ?? ns[0];
  const selected = pts.filter((p) => p.n === n);
  if (selected.length === 0) {
    throw new Error(`no sweep rows for n=${n}`);
  }
  const params = opts.parameters ?? [...new Set(selected.map((p) => p.parameter))].sort();
  const series: Series[] = [];
  const slopes: Record<string, number> = {};
  params.forEach((param, i) => {
    const rows = selected
      .filter((p) => p.parameter === param && p.meanAbsErr > 0)
      .sort((a, b) => a.shots - b.shots);
    if (rows.length < 2) return;
    const shots = rows.map((r) => r.shots);
    const errs = rows.map((r) => r.meanAbsErr);
    const slope = loglogSlope(shots, errs);
    slopes[param] = slope;
    series.push({
      label: param,
      x: shots,
      y: errs,
      color: COLORS[i % COLORS.length],
      annotation: `slope ${slope.toFixed(2)}`,
    });
    const guide = guideLine(shots, errs);
    series.push({
      label: `1/sqrt(S)`,
      x: guide.shots,
      y: guide.errors,
      color: COLORS[i % COLORS.length],
      dashed: true,
    });
  });
  if (series.length === 0) throw new Error("nothing to plot");
  const spec: PanelSpec = {
    title: opts.title ?? `error vs shots (n=${n})`,
    xLabel: "shots per timestep S",
    yLabel: "mean absolute error",
    series,
  };
  return { svg: renderPanel(spec), slopes };
}

export function buildSigmaVsNFigure(doc: CsvDoc, parameters?: string[]): BuiltFigure {
  const pts = sweepPoints(doc);
  const params = parameters ?? [...new Set(pts.map((p) => p.parameter))].sort();
  const ns = [...new Set(pts.map((p) => p.n))].sort((a, b) => a - b);
  if (ns.length < 2) {
    throw new Error("sigma-vs-N panel needs sweeps at several lattice sizes");
  }
  const series: Series[] = [];
  params.forEach((param, i) => {
    const sigma: number[] = [];
    for (const n of ns) {
      const rows = pts.filter((p) => p.n === n && p.parameter === param && p.meanAbsErr > 0);
      if (rows.length === 0) return;
      const pooled = rows.map((r) => r.meanAbsErr * Math.sqrt(r.shots));
      sigma.push(pooled.reduce((a, b) => a + b, 0) / pooled.length);
    }
    if (sigma.length === ns.length) {
      series.push({ label: param, x: ns, y: sigma, color: COLORS[i % COLORS.length] });
    }
  });
  if (series.length === 0) throw new Error("nothing to plot");
  const spec: PanelSpec = {
    title: "shot-noise coefficient vs lattice size",
    xLabel: "lattice size N",
    yLabel: "sigma_hat = err * sqrt(S)",
    series,
    logX: false,
    logY: false,
  };
  return { svg: renderPanel(spec), slopes: {} };
}
