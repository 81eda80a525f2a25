/**
 * Chart data assembly and a dependency-free SVG line renderer.
 *
 * A ChartSeries holds exactly the points returned by the telemetry raw query
 * for its window; aggregates shown next to a chart are computed over those
 * same points with the same rules the server uses, so a spot check against
 * GET /telemetry/query?agg=... must agree value-for-value.
 */

import type { ConsoleApi } from "./api.js";

export const US_PER_S = 1_000_000;
export const DEFAULT_WINDOW_S = 60;

export interface SeriesPoint {
  ts: number;
  value: number;
}

export class ChartSeries {
  points: SeriesPoint[] = [];

  constructor(public source: string, public metric: string,
              public windowS: number = DEFAULT_WINDOW_S) {}

  /** Replace the window contents from a raw telemetry query. */
  async load(api: ConsoleApi, token: string, nowUs: number): Promise<void> {
    const t0 = Math.max(0, nowUs - this.windowS * US_PER_S);
    await this.loadRange(api, token, t0, nowUs);
  }

  async loadRange(api: ConsoleApi, token: string, t0: number, t1: number): Promise<void> {
    const raw = await api.queryRaw(token, this.source, this.metric, t0, t1);
    this.points = raw.map(([ts, value]) => ({ ts, value }));
  }

  /** Append a live point pushed via the event stream (kept in-window). */
  push(ts: number, value: number, nowUs: number): void {
    if (this.points.length && ts <= this.points[this.points.length - 1].ts) {
      return; // stream replays never reorder a series
    }
    this.points.push({ ts, value });
    const cutoff = nowUs - this.windowS * US_PER_S;
    while (this.points.length && this.points[0].ts < cutoff) {
      this.points.shift();
    }
  }

  mean(): number | null {
    if (!this.points.length) return null;
    return this.points.reduce((acc, p) => acc + p.value, 0) / this.points.length;
  }

  max(): number | null {
    if (!this.points.length) return null;
    return Math.max(...this.points.map(p => p.value));
  }

  /** Nearest-rank p95, matching the server's aggregation exactly. */
  p95(): number | null {
    if (!this.points.length) return null;
    const ordered = [...this.points.map(p => p.value)].sort((a, b) => a - b);
    const rank = Math.max(1, Math.ceil(0.95 * ordered.length));
    return ordered[rank - 1];
  }
}

/** Render a series as an SVG polyline; pure string transform, testable. */
export function renderSparkline(series: ChartSeries, width = 320, height = 64): string {
  const pts = series.points;
  if (pts.length === 0) {
    return `<svg width="${width}" height="${height}" class="chart empty"></svg>`;
  }
  const t0 = pts[0].ts;
  const t1 = pts[pts.length - 1].ts;
  const values = pts.map(p => p.value);
  const vMin = Math.min(...values);
  const vMax = Math.max(...values);
  const spanT = Math.max(1, t1 - t0);
  const spanV = Math.max(1e-9, vMax - vMin);
  const coords = pts.map(p => {
    const x = ((p.ts - t0) / spanT) * (width - 4) + 2;
    const y = height - 2 - ((p.value - vMin) / spanV) * (height - 4);
    return `${x.toFixed(1)},${y.toFixed(1)}`;
  });
  return [
    `<svg width="${width}" height="${height}" class="chart" viewBox="0 0 ${width} ${height}">`,
    `<polyline fill="none" stroke="currentColor" stroke-width="1.5" points="${coords.join(" ")}"/>`,
    `</svg>`,
  ].join("");
}
