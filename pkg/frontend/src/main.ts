/**
 * Console bootstrap: connect to the API, sign up for telemetry, open the
 * event stream, and keep the three panels in sync. A stale banner appears
 * whenever the stream drops; reconnection resumes from the last event id.
 */

import { ApiError, ConsoleApi } from "./api.js";
import { MetricsPanel, renderLifecycle, renderTopology } from "./panels.js";
import { ConsoleState } from "./state.js";
import { EventStream } from "./stream.js";

const API_BASE = (window as unknown as { MICROMANO_API?: string }).MICROMANO_API
  ?? `http://${location.hostname}:8780`;

const api = new ConsoleApi(API_BASE);
const state = new ConsoleState();

let token: string | null = null;
let catalogIds: string[] = [];

const $ = (id: string) => document.getElementById(id)!;

async function signup(): Promise<void> {
  const issued = await api.signup("operator-console");
  token = issued.secret;
}

const metrics = new MetricsPanel(api, () => token, () => {
  // expired token: prompt via the panel's banner; clicking re-signs up
  token = null;
});

function flash(message: string): void {
  const el = $("flash");
  el.textContent = message;
  el.classList.add("visible");
  setTimeout(() => el.classList.remove("visible"), 4000);
}

function guard(promise: Promise<unknown>): void {
  promise.catch(exc => {
    if (exc instanceof ApiError) {
      flash(`${exc.body.type ?? "error"}: ${exc.body.error ?? exc.message}`);
    } else {
      flash(String(exc));
    }
  });
}

const actions = {
  instantiate: (nsd: string) => guard(api.instantiate(nsd)),
  migrate: (instance: string) => guard(api.migrate(instance, "cache-vnf", "kcl-5g-vim")),
  scale: (instance: string, delta: number) =>
    guard(api.scale(instance, "cache-vnf", delta)),
  terminate: (instance: string) => guard(api.terminate(instance)),
};

function redraw(): void {
  $("stale-banner").style.display = state.stale ? "block" : "none";
  renderTopology(state, $("topology"));
  renderLifecycle(state, $("lifecycle"), catalogIds, actions);
  metrics.render($("metrics"));
  $("metrics").querySelector('[data-act="resignup"]')
    ?.addEventListener("click", () => guard(signup()));
  $("event-log").innerHTML = state.eventLog.slice(-15).reverse()
    .map(e => `<div><code>#${e.id}</code> ${(e.ts / 1e6).toFixed(2)}s ${e.kind}` +
      (e["instance"] ? ` <code>${e["instance"]}</code>` : "") + `</div>`)
    .join("");
}

async function refreshLoop(): Promise<void> {
  // periodic pulls; pushes arrive via the stream in between
  for (;;) {
    try {
      const clock = await api.clock();
      const topo = await api.topology();
      state.setTopology(topo);
      await metrics.refresh(clock.now_us);
      redraw();
    } catch {
      state.setStale(true);
    }
    await new Promise(resolve => setTimeout(resolve, 2000));
  }
}

async function start(): Promise<void> {
  const health = await api.health();
  $("scenario-name").textContent = health.scenario;
  catalogIds = (await api.catalog()).map(s => s.id);
  await signup();
  for (const source of ["vim:kcl-5g-vim", "vim:e5g-core-vim"]) {
    metrics.track(source, "vcpu_used");
  }
  metrics.track("sdn:guildhall-strand", "latency_us");
  metrics.track("sdn:guildhall-strand", "loss_rate");

  state.subscribe(redraw);
  const stream = new EventStream(API_BASE, event => state.enqueue(event), {
    onStale: stale => state.setStale(stale),
  });
  void stream.run();
  void refreshLoop();
}

start().catch(exc => flash(`failed to connect: ${exc}`));
