/** Least-squares slope of log10(err) against log10(shots); this must agree
 * with the summary table written by the primary component, which uses the
 * same ordinary-least-squares fit. */

export function loglogSlope(shots: number[], errors: number[]): number {
  if (shots.length !== errors.length || shots.length < 2) {
    throw new Error("need at least two (shots, error) points");
  }
  const x = shots.map(Math.log10);
  const y = errors.map(Math.log10);
  const n = x.length;
  const mx = x.reduce((a, b) => a + b, 0) / n;
  const my = y.reduce((a, b) => a + b, 0) / n;
  let num = 0;
  let den = 0;
  for (let i = 0; i < n; i++) {
    num += (x[i] - mx) * (y[i] - my);
    den += (x[i] - mx) * (x[i] - mx);
  }
  return num / den;
}

export function guideLine(
  shots: number[],
  errors: number[],
  exponent = -0.5,
): { shots: number[]; errors: number[] } {
  // anchor a fixed-exponent reference through the geometric mean of the data
  const gx = Math.pow(10, shots.map(Math.log10).reduce((a, b) => a + b, 0) / shots.length);
  const gy = Math.pow(10, errors.map(Math.log10).reduce((a, b) => a + b, 0) / errors.length);
  return {
    shots: [...shots],
    errors: shots.map((s) => gy * Math.pow(s / gx, exponent)),
  };
}
