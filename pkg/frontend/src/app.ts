// Review board: fetch a leased task, show it, collect the verdict.
//
// The server is the source of truth: controls disable the moment the local
// lease countdown hits zero, a verdict is only ever sent for the task whose
// lease this holder currently displays, and at most one verdict request is
// in flight at a time.

import { ApiError, CurationApi, PseudoLabel, ReviewTask } from "./api";

export type Clock = () => number; // epoch seconds

export class ReviewBoard {
  private task: ReviewTask | null = null;
  private submitting = false;
  private timer: ReturnType<typeof setInterval> | null = null;
  private keyHandler = (ev: KeyboardEvent) => this.onKey(ev);

  constructor(
    private root: HTMLElement,
    private api: CurationApi,
    readonly holder: string,
    private clock: Clock = () => Date.now() / 1000,
  ) {
    this.root.classList.add("review-board");
    document.addEventListener("keydown", this.keyHandler);
  }

  dispose(): void {
    this.stopTimer();
    document.removeEventListener("keydown", this.keyHandler);
  }

  // -- state/queries ---------------------------------------------------------

  currentTask(): ReviewTask | null {
    return this.task;
  }

  leaseSecondsLeft(): number {
    if (!this.task || !this.task.lease) return 0;
    return Math.max(0, this.task.lease[1] - this.clock());
  }

  private leaseHeld(): boolean {
    return this.task !== null && this.task.lease !== null
      && this.task.lease[0] === this.holder && this.leaseSecondsLeft() > 0;
  }

  // -- flows -------------------------------------------------------------

  async fetchNext(): Promise<void> {
    this.stopTimer();
    this.renderLoading();
    let task: ReviewTask | null;
    try {
      task = await this.api.nextTask(this.holder);
    } catch (err) {
      this.task = null;
      this.renderError(err);
      return;
    }
    this.task = task;
    if (task === null) {
      this.renderEmpty();
    } else {
      this.renderTask(task);
      this.startTimer();
    }
  }

  async approve(): Promise<void> {
    await this.submit("approve");
  }

  async reject(correction?: PseudoLabel): Promise<void> {
    await this.submit("reject", correction);
  }

  private async submit(verdict: "approve" | "reject", correction?: PseudoLabel): Promise<void> {
    if (!this.task || this.submitting) return;
    if (!this.leaseHeld()) {
      this.toast("lease expired; fetching a fresh task");
      await this.fetchNext();
      return;
    }
    this.submitting = true;
    this.setControlsEnabled(false);
    try {
      await this.api.submitVerdict(this.task.task_id, this.holder, verdict, correction);
      this.submitting = false;
      await this.fetchNext(); // success: move straight to the next task
    } catch (err) {
      this.submitting = false;
      if (err instanceof ApiError && err.code === "lease_violation") {
        this.toast("lease expired on the server; fetching a fresh task");
        await this.fetchNext();
      } else {
        this.renderError(err);
      }
    }
  }

  openCorrection(): void {
    if (!this.leaseHeld()) return;
    const modal = this.root.querySelector<HTMLElement>(".correction-modal");
    if (modal) modal.hidden = false;
    this.syncCorrectionSubmit();
  }

  // -- rendering -----------------------------------------------------------

  private renderLoading(): void {
    this.root.innerHTML = `<p class="loading">fetching task…</p>`;
  }

  private renderEmpty(): void {
    this.root.innerHTML = `<p class="empty-queue">Queue is empty — nothing to review.</p>
      <button class="refetch">Check again</button>`;
    this.root.querySelector(".refetch")!.addEventListener("click", () => this.fetchNext());
  }

  private renderError(err: unknown): void {
    const message = err instanceof Error ? err.message : String(err);
    this.root.innerHTML = `<div class="error-banner">
        <span>Request failed: ${escapeHtml(message)}</span>
        <button class="retry">Retry</button>
      </div>`;
    this.root.querySelector(".retry")!.addEventListener("click", () => this.fetchNext());
  }

  private renderTask(task: ReviewTask): void {
    const scores = Object.entries(task.pseudo_label.scores)
      .map(
        ([name, value]) =>
          `<tr><td>${escapeHtml(name)}</td><td class="score">${value.toFixed(3)}</td></tr>`,
      )
      .join("");
    const reasons = task.ai_verdict?.reasons ?? [];
    this.root.innerHTML = `
      <div class="task" data-task-id="${escapeHtml(task.task_id)}">
        <img class="task-image" src="${this.api.mediaUrl(task.record_id)}" alt="record media">
        <div class="task-meta">
          <p class="caption">${escapeHtml(task.pseudo_label.caption)}</p>
          <table class="scores"><tbody>${scores}</tbody></table>
          ${reasons.length ? `<p class="ai-reasons">flagged: ${escapeHtml(reasons.join(", "))}</p>` : ""}
          <p class="countdown" data-role="countdown"></p>
          <div class="controls">
            <button class="approve" title="a">Approve</button>
            <button class="reject" title="r">Reject</button>
            <button class="correct" title="c">Reject with correction</button>
          </div>
          <p class="expired-note" hidden>Lease expired — controls disabled.
            <button class="refetch">Fetch next</button></p>
        </div>
        <div class="correction-modal" hidden>
          <textarea class="correction-text" placeholder="corrected caption"></textarea>
          <button class="correction-submit" disabled>Submit correction</button>
          <button class="correction-cancel">Cancel</button>
        </div>
      </div>`;
    this.q(".approve").addEventListener("click", () => void this.approve());
    this.q(".reject").addEventListener("click", () => void this.reject());
    this.q(".correct").addEventListener("click", () => this.openCorrection());
    this.q(".refetch").addEventListener("click", () => void this.fetchNext());
    this.q(".correction-cancel").addEventListener("click", () => {
      this.q(".correction-modal").hidden = true;
    });
    this.q(".correction-text").addEventListener("input", () => this.syncCorrectionSubmit());
    this.q(".correction-submit").addEventListener("click", () => {
      const text = (this.q(".correction-text") as HTMLTextAreaElement).value.trim();
      if (!text) return;
      void this.reject({ caption: text, scores: {} });
    });
    this.updateCountdown();
  }

  private syncCorrectionSubmit(): void {
    const text = (this.q(".correction-text") as HTMLTextAreaElement).value.trim();
    (this.q(".correction-submit") as HTMLButtonElement).disabled = text.length === 0;
  }

  private setControlsEnabled(enabled: boolean): void {
    for (const sel of [".approve", ".reject", ".correct"]) {
      const btn = this.root.querySelector<HTMLButtonElement>(sel);
      if (btn) btn.disabled = !enabled;
    }
  }

  private updateCountdown(): void {
    const label = this.root.querySelector<HTMLElement>("[data-role=countdown]");
    if (!label || !this.task) return;
    const left = this.leaseSecondsLeft();
    label.textContent = `lease: ${Math.floor(left)}s`;
    if (left <= 0) {
      this.setControlsEnabled(false);
      const note = this.root.querySelector<HTMLElement>(".expired-note");
      if (note) note.hidden = false;
      this.stopTimer();
    }
  }

  private startTimer(): void {
    this.timer = setInterval(() => this.updateCountdown(), 1000);
  }

  private stopTimer(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  toast(message: string): void {
    // lives on document.body so board re-renders cannot wipe it
    let el = document.getElementById("zc-toast");
    if (!el) {
      el = document.createElement("div");
      el.id = "zc-toast";
      el.className = "toast";
      document.body.appendChild(el);
    }
    el.textContent = message;
    el.hidden = false;
    setTimeout(() => {
      if (el) el.hidden = true;
    }, 4000);
  }

  private onKey(ev: KeyboardEvent): void {
    if (ev.target instanceof HTMLTextAreaElement || ev.target instanceof HTMLInputElement) return;
    if (!this.leaseHeld() || this.submitting) return;
    if (ev.key === "a") void this.approve();
    else if (ev.key === "r") void this.reject();
    else if (ev.key === "c") this.openCorrection();
  }

  private q(selector: string): HTMLElement {
    const el = this.root.querySelector<HTMLElement>(selector);
    if (!el) throw new Error(`missing element ${selector}`);
    return el;
  }
}

function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function holderId(storage: Storage = localStorage): string {
  let holder = storage.getItem("zcurate_holder");
  if (!holder) {
    holder = `reviewer-${Math.random().toString(36).slice(2, 10)}`;
    storage.setItem("zcurate_holder", holder);
  }
  return holder;
}
