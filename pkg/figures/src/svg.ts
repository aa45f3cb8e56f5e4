/** Minimal hand-rolled SVG builder for log-log scatter panels. */

export interface Series {
  label: string;
  x: number[];
  y: number[];
  color: string;
  dashed?: boolean;
  annotation?: string;
}

export interface PanelSpec {
  title: string;
  xLabel: string;
  yLabel: string;
  series: Series[];
  logX?: boolean;
  logY?: boolean;
  width?: number;
  height?: number;
}

const MARGIN = { top: 34, right: 24, bottom: 46, left: 64 };

function niceTicks(lo: number, hi: number, log: boolean): number[] {
  if (log) {
    const ticks: number[] = [];
    for (let e = Math.floor(lo); e <= Math.ceil(hi); e++) ticks.push(e);
    return ticks;
  }
  const span = hi - lo || 1;
  const step = Math.pow(10, Math.floor(Math.log10(span / 4)));
  const ticks: number[] = [];
  for (let v = Math.ceil(lo / step) * step; v <= hi + 1e-12; v += step) ticks.push(v);
  return ticks;
}

function fmtPow(e: number): string {
  return `10^${e}`;
}

export function renderPanel(spec: PanelSpec): string {
  const w = spec.width ?? 460;
  const h = spec.height ?? 340;
  const logX = spec.logX ?? true;
  const logY = spec.logY ?? true;
  const tx = (v: number) => (logX ? Math.log10(v) : v);
  const ty = (v: number) => (logY ? Math.log10(v) : v);

  const xs = spec.series.flatMap((s) => s.x.map(tx));
  const ys = spec.series.flatMap((s) => s.y.map(ty));
  if (xs.length === 0) throw new Error("panel has no data");
  const pad = 0.06;
  const xlo = Math.min(...xs), xhi = Math.max(...xs);
  const ylo = Math.min(...ys), yhi = Math.max(...ys);
  const xr = xhi - xlo || 1, yr = yhi - ylo || 1;
  const plotW = w - MARGIN.left - MARGIN.right;
  const plotH = h - MARGIN.top - MARGIN.bottom;
  const px = (v: number) => MARGIN.left + ((tx(v) - xlo + pad * xr) / (xr * (1 + 2 * pad))) * plotW;
  const py = (v: number) => MARGIN.top + plotH - ((ty(v) - ylo + pad * yr) / (yr * (1 + 2 * pad))) * plotH;

  const parts: string[] = [];
  parts.push(
    `<svg xmlns="http://www.w3.org/2000/svg" width="${w}" height="${h}" viewBox="0 0 ${w} ${h}" font-family="Helvetica, Arial, sans-serif" font-size="11">`,
  );
  parts.push(`<rect width="${w}" height="${h}" fill="white"/>`);
  parts.push(
    `<text x="${w / 2}" y="18" text-anchor="middle" font-size="13">${spec.title}</text>`,
  );
  // frame
  parts.push(
    `<rect x="${MARGIN.left}" y="${MARGIN.top}" width="${plotW}" height="${plotH}" fill="none" stroke="#444"/>`,
  );
  // ticks
  for (const t of niceTicks(xlo, xhi, logX)) {
    const vx = logX ? Math.pow(10, t) : t;
    if (tx(vx) < xlo - 1e-9 || tx(vx) > xhi + 1e-9) continue;
    const x = px(vx);
    parts.push(`<line x1="${x.toFixed(1)}" y1="${MARGIN.top + plotH}" x2="${x.toFixed(1)}" y2="${MARGIN.top + plotH + 4}" stroke="#444"/>`);
    parts.push(
      `<text x="${x.toFixed(1)}" y="${MARGIN.top + plotH + 16}" text-anchor="middle">${logX ? fmtPow(t) : t.toPrecision(3)}</text>`,
    );
  }
  for (const t of niceTicks(ylo, yhi, logY)) {
    const vy = logY ? Math.pow(10, t) : t;
    if (ty(vy) < ylo - 1e-9 || ty(vy) > yhi + 1e-9) continue;
    const y = py(vy);
    parts.push(`<line x1="${MARGIN.left - 4}" y1="${y.toFixed(1)}" x2="${MARGIN.left}" y2="${y.toFixed(1)}" stroke="#444"/>`);
    parts.push(
      `<text x="${MARGIN.left - 8}" y="${(y + 3).toFixed(1)}" text-anchor="end">${logY ? fmtPow(t) : t.toPrecision(3)}</text>`,
    );
  }
  parts.push(
    `<text x="${MARGIN.left + plotW / 2}" y="${h - 10}" text-anchor="middle">${spec.xLabel}</text>`,
  );
  parts.push(
    `<text x="16" y="${MARGIN.top + plotH / 2}" text-anchor="middle" transform="rotate(-90 16 ${MARGIN.top + plotH / 2})">${spec.yLabel}</text>`,
  );
  // series
  let legendY = MARGIN.top + 10;
  for (const s of spec.series) {
    const pts = s.x.map((v, i) => `${px(v).toFixed(1)},${py(s.y[i]).toFixed(1)}`);
    const dash = s.dashed ? ' stroke-dasharray="5,4"' : "";
    parts.push(
      `<polyline fill="none" stroke="${s.color}"${dash} stroke-width="1.4" points="${pts.join(" ")}"/>`,
    );
    if (!s.dashed) {
      for (const p of pts) {
        const [cx, cy] = p.split(",");
        parts.push(`<circle cx="${cx}" cy="${cy}" r="3" fill="${s.color}"/>`);
      }
    }
    const label = s.annotation ? `${s.label} (${s.annotation})` : s.label;
    parts.push(
      `<line x1="${MARGIN.left + plotW - 150}" y1="${legendY}" x2="${MARGIN.left + plotW - 132}" y2="${legendY}" stroke="${s.color}"${dash} stroke-width="1.4"/>`,
    );
    parts.push(
      `<text x="${MARGIN.left + plotW - 126}" y="${legendY + 3}" font-size="10">${label}</text>`,
    );
    legendY += 14;
  }
  parts.push("</svg>");
  return parts.join("\n");
}
