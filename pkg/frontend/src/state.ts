/**
 * Console-wide state, updated from a single ordered event queue so panel
 * views can never observe events out of order. Mutating requests happen only
 * in response to explicit operator actions routed through the api client.
 */

import type { AuditEvent, Topology } from "./api.js";

export interface InstanceView {
  instanceId: string;
  nsd: string;
  state: string;
  lastError: string | null;
  stateHistory: string[];
}

export type Listener = () => void;

export class ConsoleState {
  topology: Topology | null = null;
  instances = new Map<string, InstanceView>();
  linkState = new Map<string, boolean>();
  stale = false;
  lastEventId = 0;
  eventLog: AuditEvent[] = [];
  private listeners: Listener[] = [];
  private queue: AuditEvent[] = [];
  private draining = false;

  subscribe(listener: Listener): void {
    this.listeners.push(listener);
  }

  private notify(): void {
    for (const l of this.listeners) l();
  }

  setTopology(topology: Topology): void {
    this.topology = topology;
    for (const link of topology.links) this.linkState.set(link.id, link.up);
    this.notify();
  }

  setStale(stale: boolean): void {
    if (this.stale !== stale) {
      this.stale = stale;
      this.notify();
    }
  }

  /** Enqueue a stream event; events are applied strictly in arrival order. */
  enqueue(event: AuditEvent): void {
    this.queue.push(event);
    if (this.draining) return;
    this.draining = true;
    try {
      while (this.queue.length) {
        this.apply(this.queue.shift()!);
      }
    } finally {
      this.draining = false;
    }
    this.notify();
  }

  private apply(event: AuditEvent): void {
    if (event.id <= this.lastEventId) return;
    this.lastEventId = event.id;
    this.eventLog.push(event);
    if (this.eventLog.length > 500) this.eventLog.shift();
    const instance = event["instance"] as string | undefined;
    switch (event.kind) {
      case "ns_created": {
        this.instances.set(instance!, {
          instanceId: instance!,
          nsd: String(event["nsd"]),
          state: "created",
          lastError: null,
          stateHistory: ["created"],
        });
        break;
      }
      case "ns_state": {
        const view = this.instances.get(instance!);
        if (view) {
          view.state = String(event["state"]);
          view.stateHistory.push(view.state);
        }
        break;
      }
      case "ns_error": {
        const view = this.instances.get(instance!);
        if (view) view.lastError = String(event["error"]);
        break;
      }
      case "link_state": {
        this.linkState.set(String(event["link"]), Boolean(event["up"]));
        break;
      }
      case "hot_plug": {
        if (this.topology) {
          const endpoint = String(event["endpoint"]);
          if (!this.topology.endpoints.includes(endpoint)) {
            this.topology.endpoints.push(endpoint);
          }
        }
        break;
      }
      default:
        break; // metric/audit kinds the panels read from eventLog directly
    }
  }
}
