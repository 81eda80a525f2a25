/**
 * Dashboard panels: topology graph, service lifecycle, live metrics. Render
 * functions are pure DOM writes from ConsoleState; every button routes
 * through ConsoleApi and surfaces API errors verbatim.
 */

import { ApiError, ConsoleApi } from "./api.js";
import { ChartSeries, renderSparkline } from "./charts.js";
import { ConsoleState } from "./state.js";

const STATE_COLORS: Record<string, string> = {
  created: "#888", instantiating: "#b58900", configuring: "#b58900",
  running: "#2aa198", scaling: "#268bd2", migrating: "#268bd2",
  terminating: "#cb4b16", terminated: "#586e75", failed: "#dc322f",
};

export function renderTopology(state: ConsoleState, el: HTMLElement): void {
  const topo = state.topology;
  if (!topo) {
    el.innerHTML = "<p>loading topology…</p>";
    return;
  }
  const rows: string[] = [];
  rows.push(`<h3>switches</h3><ul>`);
  for (const sw of topo.switches) {
    rows.push(`<li><code>${sw.id}</code> (${sw.mode})</li>`);
  }
  rows.push(`</ul><h3>links</h3><ul>`);
  for (const link of topo.links) {
    const up = state.linkState.get(link.id) ?? link.up;
    const badge = up ? "🟢" : "🔴";
    rows.push(`<li>${badge} <code>${link.id}</code> ${link.a[0]} ↔ ${link.b[0]} ` +
      `(${link.latency_us / 1000} ms, ${link.capacity_mbps} Mbps)</li>`);
  }
  rows.push(`</ul><h3>VIMs</h3><ul>`);
  for (const vim of topo.vims) {
    rows.push(`<li><code>${vim.vim_id}</code> ${vim.site_class}, ` +
      `${vim.auth_mode === "preshared_passthrough" ? "restricted" : "open"}, ` +
      `${vim.nodes} nodes @ ${vim.attach ?? "?"} — used ${vim.used.vcpu} vCPU</li>`);
  }
  rows.push(`</ul><h3>access paths</h3><ul>`);
  for (const ap of topo.access_paths) {
    rows.push(`<li><code>${ap.path_id}</code> ${ap.technology} ` +
      `(${ap.latency_us / 1000} ms, ${ap.capacity_mbps} Mbps)</li>`);
  }
  rows.push(`</ul><h3>endpoints</h3><p>${topo.endpoints.map(e => `<code>${e}</code>`).join(" ")}</p>`);
  el.innerHTML = rows.join("");
}

export interface LifecycleActions {
  instantiate(nsd: string): void;
  migrate(instance: string): void;
  scale(instance: string, delta: number): void;
  terminate(instance: string): void;
}

export function renderLifecycle(state: ConsoleState, el: HTMLElement,
                                catalogIds: string[], actions: LifecycleActions): void {
  const rows: string[] = [];
  rows.push(`<h3>catalogue</h3>`);
  for (const nsd of catalogIds) {
    rows.push(`<button data-act="instantiate" data-nsd="${nsd}">instantiate ${nsd}</button> `);
  }
  rows.push(`<h3>instances</h3>`);
  if (state.instances.size === 0) rows.push("<p>none yet</p>");
  for (const view of state.instances.values()) {
    const color = STATE_COLORS[view.state] ?? "#888";
    rows.push(`<div class="instance">`);
    rows.push(`<code>${view.instanceId}</code> (${view.nsd}) ` +
      `<span class="badge" style="background:${color}">${view.state}</span>`);
    rows.push(`<small> ${view.stateHistory.join(" → ")}</small>`);
    if (view.lastError) rows.push(`<div class="error">⚠ ${view.lastError}</div>`);
    if (view.state === "running") {
      rows.push(` <button data-act="migrate" data-id="${view.instanceId}">migrate→edge</button>`);
      rows.push(` <button data-act="scale-up" data-id="${view.instanceId}">+1 replica</button>`);
      rows.push(` <button data-act="scale-down" data-id="${view.instanceId}">−1 replica</button>`);
    }
    if (!["terminated", "failed"].includes(view.state)) {
      rows.push(` <button data-act="terminate" data-id="${view.instanceId}">terminate</button>`);
    }
    rows.push(`</div>`);
  }
  el.innerHTML = rows.join("");
  el.querySelectorAll("button").forEach(btn => {
    btn.addEventListener("click", () => {
      const act = btn.dataset.act!;
      if (act === "instantiate") actions.instantiate(btn.dataset.nsd!);
      else if (act === "migrate") actions.migrate(btn.dataset.id!);
      else if (act === "scale-up") actions.scale(btn.dataset.id!, +1);
      else if (act === "scale-down") actions.scale(btn.dataset.id!, -1);
      else if (act === "terminate") actions.terminate(btn.dataset.id!);
    });
  });
}

export class MetricsPanel {
  series: ChartSeries[] = [];
  needsToken = false;

  constructor(private api: ConsoleApi, private getToken: () => string | null,
              private onTokenExpired: () => void) {}

  track(source: string, metric: string): ChartSeries {
    const found = this.series.find(s => s.source === source && s.metric === metric);
    if (found) return found;
    const series = new ChartSeries(source, metric);
    this.series.push(series);
    return series;
  }

  async refresh(nowUs: number): Promise<void> {
    const token = this.getToken();
    if (!token) return;
    for (const series of this.series) {
      try {
        await series.load(this.api, token, nowUs);
      } catch (exc) {
        if (exc instanceof ApiError && exc.status === 401) {
          this.needsToken = true;
          this.onTokenExpired();
          return;
        }
        throw exc;
      }
    }
    this.needsToken = false;
  }

  render(el: HTMLElement): void {
    const rows: string[] = [];
    if (this.needsToken) {
      rows.push(`<div class="error">telemetry token expired — ` +
        `<button data-act="resignup">sign up again</button></div>`);
    }
    for (const series of this.series) {
      const mean = series.mean();
      rows.push(`<div class="metric">`);
      rows.push(`<h4><code>${series.source}</code> ${series.metric}</h4>`);
      rows.push(renderSparkline(series));
      rows.push(`<small>${series.points.length} pts, window ${series.windowS}s` +
        (mean === null ? "" : `, mean ${mean.toFixed(2)}`) + `</small>`);
      rows.push(`</div>`);
    }
    el.innerHTML = rows.join("");
  }
}
