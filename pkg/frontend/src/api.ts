/**
 * Typed client for the micromano control/telemetry API. This is the only
 * path through which the console touches the backend: every panel action
 * maps 1:1 onto a documented endpoint, and no value shown in the UI is
 * synthesized client-side.
 */

export interface TopologySwitch {
  id: string;
  mode: string;
  ports: Record<string, [string, string]>;
}

export interface TopologyLink {
  id: string;
  a: [string, string];
  b: [string, string];
  up: boolean;
  latency_us: number;
  capacity_mbps: number;
}

export interface TopologyVim {
  vim_id: string;
  site_class: string;
  auth_mode: string;
  attach: string | null;
  nodes: number;
  used: { vcpu: number; memory_mb: number; storage_gb: number };
}

export interface AccessPathInfo {
  path_id: string;
  technology: string;
  latency_us: number;
  capacity_mbps: number;
}

export interface Topology {
  scenario: string;
  switches: TopologySwitch[];
  links: TopologyLink[];
  vims: TopologyVim[];
  access_paths: AccessPathInfo[];
  endpoints: string[];
}

export interface AuditEvent {
  id: number;
  ts: number;
  kind: string;
  [key: string]: unknown;
}

export interface NsDescription {
  instance_id: string;
  nsd_id: string;
  state: string;
  vms: Record<string, { vim: string; vm_id: string }>;
  replicas: Record<string, number>;
  started_at: number | null;
  last_error: string | null;
  audit: AuditEvent[];
}

export interface ServiceSummary {
  id: string;
  name: string;
  vnf_count: number;
  vcpu: number;
  memory_mb: number;
  storage_gb: number;
}

export interface TelemetryToken {
  token_id: string;
  secret: string;
  expires_at: number;
}

export interface PathMeasurement {
  path: string;
  latency_us: number | null;
  jitter_us: number | null;
  loss_rate: number;
  throughput_mbps: number | null;
  bandwidth_mbps: number | null;
  measured_at: number;
}

export class ApiError extends Error {
  constructor(public status: number, public body: { error?: string; type?: string }) {
    super(body.error ?? `HTTP ${status}`);
  }
}

export class ConsoleApi {
  constructor(public baseUrl: string, private fetchFn: typeof fetch = fetch) {}

  private async request<T>(method: string, path: string, body?: unknown,
                           token?: string): Promise<T> {
    const headers: Record<string, string> = { "Content-Type": "application/json" };
    if (token) headers["Authorization"] = `Bearer ${token}`;
    const resp = await this.fetchFn(`${this.baseUrl}${path}`, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const text = await resp.text();
    const parsed = text ? JSON.parse(text) : {};
    if (!resp.ok) throw new ApiError(resp.status, parsed);
    return parsed as T;
  }

  health(): Promise<{ status: string; scenario: string; now_us: number }> {
    return this.request("GET", "/health");
  }

  topology(): Promise<Topology> {
    return this.request("GET", "/topology");
  }

  catalog(): Promise<ServiceSummary[]> {
    return this.request("GET", "/catalog");
  }

  listInstances(): Promise<Record<string, string>> {
    return this.request("GET", "/ns");
  }

  instantiate(nsd: string): Promise<{ instance: string; state: string }> {
    return this.request("POST", "/ns", { nsd });
  }

  describe(instance: string): Promise<NsDescription> {
    return this.request("GET", `/ns/${instance}`);
  }

  migrate(instance: string, vnf: string, targetVim: string): Promise<{ state: string }> {
    return this.request("POST", `/ns/${instance}/migrate`, { vnf, target_vim: targetVim });
  }

  scale(instance: string, vnf: string, delta: number): Promise<{ replicas: number }> {
    return this.request("POST", `/ns/${instance}/scale`, { vnf, delta });
  }

  terminate(instance: string): Promise<{ state: string }> {
    return this.request("DELETE", `/ns/${instance}`);
  }

  signup(clientName: string): Promise<TelemetryToken> {
    return this.request("POST", "/telemetry/signup", { client_name: clientName });
  }

  queryRaw(token: string, source: string, metric: string, t0: number,
           t1: number): Promise<Array<[number, number]>> {
    const qs = `source=${encodeURIComponent(source)}&metric=${metric}&t0=${t0}&t1=${t1}&agg=raw`;
    return this.request<{ points: Array<[number, number]> }>(
      "GET", `/telemetry/query?${qs}`, undefined, token).then(r => r.points);
  }

  queryAgg(token: string, source: string, metric: string, t0: number, t1: number,
           agg: "mean" | "max" | "p95"): Promise<number> {
    const qs = `source=${encodeURIComponent(source)}&metric=${metric}&t0=${t0}&t1=${t1}&agg=${agg}`;
    return this.request<{ value: number }>(
      "GET", `/telemetry/query?${qs}`, undefined, token).then(r => r.value);
  }

  pathMeasure(pathId: string): Promise<PathMeasurement> {
    return this.request("GET", `/sdn/paths/${pathId}/measure`);
  }

  hagStats(session: string): Promise<Record<string, unknown>> {
    return this.request("GET", `/hag/sessions/${session}/stats`);
  }

  clock(): Promise<{ now_us: number; paused: boolean }> {
    return this.request("GET", "/control/clock");
  }

  pause(): Promise<unknown> {
    return this.request("POST", "/control/pause");
  }

  resume(): Promise<unknown> {
    return this.request("POST", "/control/resume");
  }

  advance(seconds: number): Promise<{ now_us: number }> {
    return this.request("POST", "/control/advance", { seconds });
  }
}
