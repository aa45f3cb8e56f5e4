/**
 * memkernel-figures: regenerate scaling panels from run CSVs.
 *
 *   node dist/cli.js --sweep runs/fig7/sweep.csv --outdir figs [--format svg]
 *                    [--panel scaling|sigma_n|both] [--n 20]
 *
 * Output is SVG; the png format flag is accepted for interface compatibility
 * but requires a rasterizer that is not bundled, so it reports an error.
 */

import { mkdirSync, writeFileSync } from "node:fs";
import { join } from "node:path";

import { readCsv } from "./csv.js";
import { buildScalingFigure, buildSigmaVsNFigure } from "./figures.js";

interface Args {
  sweep: string;
  outdir: string;
  format: string;
  panel: string;
  n?: number;
}

function parseArgs(argv: string[]): Args {
  const out: Args = { sweep: "", outdir: "figs", format: "svg", panel: "both" };
  for (let i = 0; i < argv.length; i++) {
    const a = argv[i];
    const next = () => argv[++i];
    if (a === "--sweep") out.sweep = next();
    else if (a === "--outdir") out.outdir = next();
    else if (a === "--format") out.format = next();
    else if (a === "--panel") out.panel = next();
    else if (a === "--n") out.n = Number(next());
    else throw new Error(`unknown flag ${a}`);
  }
  if (!out.sweep) throw new Error("--sweep <sweep.csv> is required");
  if (!["svg", "png"].includes(out.format)) throw new Error("--format must be svg or png");
  return out;
}

export function main(argv: string[]): number {
  let args: Args;
  try {
    args = parseArgs(argv);
  } catch (err) {
    console.error(String(err instanceof Error ? err.message : err));
    return 2;
  }
  if (args.format === "png") {
    console.error("png output needs an external SVG rasterizer; use --format svg");
    return 2;
  }
  try {
    const doc = readCsv(args.sweep, "memkernel-sweep/1");
    mkdirSync(args.outdir, { recursive: true });
    if (args.panel === "scaling" || args.panel === "both") {
      const fig = buildScalingFigure(doc, { n: args.n });
      const path = join(args.outdir, "error_vs_shots.svg");
      writeFileSync(path, fig.svg);
      console.log(`wrote ${path}`);
      for (const [param, slope] of Object.entries(fig.slopes)) {
        console.log(`  slope ${param}: ${slope.toFixed(2)}`);
      }
    }
    if (args.panel === "sigma_n" || args.panel === "both") {
      try {
        const fig = buildSigmaVsNFigure(doc);
        const path = join(args.outdir, "sigma_vs_n.svg");
        writeFileSync(path, fig.svg);
        console.log(`wrote ${path}`);
      } catch (err) {
        if (args.panel === "sigma_n") throw err;
        console.log("sigma-vs-N panel skipped: " + (err instanceof Error ? err.message : err));
      }
    }
    return 0;
  } catch (err) {
    console.error(String(err instanceof Error ? err.message : err));
    return 1;
  }
}

const invokedDirectly =
  process.argv[1] !== undefined && import.meta.url.endsWith(process.argv[1].split("/").pop()!);
if (invokedDirectly) {
  process.exit(main(process.argv.slice(2)));
}
