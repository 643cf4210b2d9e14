// Live stats panel: polls /api/stats; all numbers come straight from the
// API (nothing is recomputed client-side). Three failed polls in a row mark
// the panel stale.

import { CurationApi, ServiceStats } from "./api";

export const POLL_INTERVAL_MS = 5000;
export const STALE_AFTER_FAILURES = 3;

export class StatsPanel {
  private failures = 0;
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(private root: HTMLElement, private api: CurationApi) {
    this.root.classList.add("stats-panel");
    this.root.innerHTML = `
      <h2>Loop stats <span class="stale-badge" hidden>stale</span></h2>
      <dl>
        <dt>Queue depth</dt><dd data-role="queue">—</dd>
        <dt>Approval rate</dt><dd data-role="approval">—</dd>
        <dt>Resolved</dt><dd data-role="resolved">—</dd>
      </dl>
      <div class="rejection-chart" data-role="chart"></div>`;
  }

  start(): void {
    void this.poll();
    this.timer = setInterval(() => void this.poll(), POLL_INTERVAL_MS);
  }

  stop(): void {
    if (this.timer !== null) clearInterval(this.timer);
    this.timer = null;
  }

  async poll(): Promise<void> {
    try {
      const stats = await this.api.stats();
      this.failures = 0;
      this.render(stats);
    } catch {
      this.failures += 1;
      if (this.failures >= STALE_AFTER_FAILURES) {
        this.q(".stale-badge").hidden = false;
      }
    }
  }

  private render(stats: ServiceStats): void {
    this.q(".stale-badge").hidden = true;
    this.q("[data-role=queue]").textContent = String(stats.queue_depth);
    this.q("[data-role=approval]").textContent =
      stats.approval_rate === null ? "—" : `${Math.round(stats.approval_rate * 100)}%`;
    this.q("[data-role=resolved]").textContent = String(stats.resolved);
    const chart = this.q("[data-role=chart]");
    chart.innerHTML = "";
    for (const [concept, rate] of Object.entries(stats.per_concept_rejection)) {
      const row = document.createElement("div");
      row.className = "bar-row";
      const label = document.createElement("span");
      label.className = "bar-label";
      label.textContent = concept;
      const bar = document.createElement("div");
      bar.className = "bar";
      bar.style.width = `${Math.round(rate * 100)}%`;
      bar.title = `${Math.round(rate * 100)}%`;
      row.append(label, bar);
      chart.appendChild(row);
    }
  }

  private q(selector: string): HTMLElement {
    const el = this.root.querySelector<HTMLElement>(selector);
    if (!el) throw new Error(`missing element ${selector}`);
    return el;
  }
}
