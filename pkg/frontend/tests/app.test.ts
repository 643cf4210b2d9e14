// ReviewBoard behavior against a mocked API.

import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { CurationApi, ReviewTask } from "../src/api";
import { ReviewBoard, holderId } from "../src/app";

const NOW = 1_000_000; // epoch seconds used by the fake clock

function makeTask(overrides: Partial<ReviewTask> = {}): ReviewTask {
  return {
    task_id: "task-000001",
    record_id: "a".repeat(64),
    pseudo_label: { caption: "a fluffy cat", scores: { aesthetic: 0.8123 } },
    state: "pending_human",
    ai_verdict: { passed: true, reasons: [] },
    human_verdict: null,
    correction: null,
    lease: ["tester", NOW + 600],
    history: ["proposed", "ai_checked"],
    seq: 1,
    ...overrides,
  };
}

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

describe("ReviewBoard", () => {
  let root: HTMLElement;
  let board: ReviewBoard;
  let fetchMock: ReturnType<typeof vi.fn>;

  beforeEach(() => {
    document.body.innerHTML = `<div id="board"></div>`;
    root = document.getElementById("board")!;
    fetchMock = vi.fn();
    vi.stubGlobal("fetch", fetchMock);
    board = new ReviewBoard(root, new CurationApi(""), "tester", () => NOW);
  });

  afterEach(() => {
    board.dispose();
  });

  it("renders a fetched task with caption, scores, image and countdown", async () => {
    fetchMock.mockResolvedValueOnce(jsonResponse(makeTask()));
    await board.fetchNext();
    expect(root.querySelector(".caption")!.textContent).toBe("a fluffy cat");
    expect(root.querySelector(".scores")!.textContent).toContain("0.812");
    expect(root.querySelector<HTMLImageElement>(".task-image")!.src).toContain(
      `/api/media/${"a".repeat(64)}`,
    );
    expect(root.querySelector("[data-role=countdown]")!.textContent).toBe("lease: 600s");
  });

  it("shows the empty-queue notice on 204", async () => {
    fetchMock.mockResolvedValueOnce(new Response(null, { status: 204 }));
    await board.fetchNext();
    expect(root.querySelector(".empty-queue")).not.toBeNull();
    expect(board.currentTask()).toBeNull();
  });

  it("shows a retry banner on network error and retries on click", async () => {
    fetchMock.mockRejectedValueOnce(new TypeError("network down"));
    await board.fetchNext();
    expect(root.querySelector(".error-banner")!.textContent).toContain("network down");
    fetchMock.mockResolvedValueOnce(jsonResponse(makeTask()));
    (root.querySelector(".retry") as HTMLButtonElement).click();
    await vi.waitFor(() => expect(root.querySelector(".caption")).not.toBeNull());
  });

  it("approve posts the verdict and auto-fetches the next task", async () => {
    fetchMock.mockResolvedValueOnce(jsonResponse(makeTask()));
    await board.fetchNext();
    fetchMock.mockResolvedValueOnce(jsonResponse(makeTask({ state: "approved" })));
    fetchMock.mockResolvedValueOnce(new Response(null, { status: 204 }));
    await board.approve();
    const verdictCall = fetchMock.mock.calls[1];
    expect(verdictCall[0]).toBe("/api/tasks/task-000001/verdict");
    expect(JSON.parse(verdictCall[1].body)).toEqual({ holder: "tester", verdict: "approve" });
    expect(root.querySelector(".empty-queue")).not.toBeNull();
  });

  it("correction submit stays disabled until text is non-empty", async () => {
    fetchMock.mockResolvedValueOnce(jsonResponse(makeTask()));
    await board.fetchNext();
    board.openCorrection();
    const submit = root.querySelector<HTMLButtonElement>(".correction-submit")!;
    const text = root.querySelector<HTMLTextAreaElement>(".correction-text")!;
    expect(submit.disabled).toBe(true);
    text.value = "   ";
    text.dispatchEvent(new Event("input"));
    expect(submit.disabled).toBe(true);
    text.value = "a red car";
    text.dispatchEvent(new Event("input"));
    expect(submit.disabled).toBe(false);
  });

  it("reject with correction posts the corrected caption", async () => {
    fetchMock.mockResolvedValueOnce(jsonResponse(makeTask()));
    await board.fetchNext();
    board.openCorrection();
    const text = root.querySelector<HTMLTextAreaElement>(".correction-text")!;
    text.value = "a red car";
    text.dispatchEvent(new Event("input"));
    fetchMock.mockResolvedValueOnce(jsonResponse(makeTask({ state: "corrected" })));
    fetchMock.mockResolvedValueOnce(new Response(null, { status: 204 }));
    (root.querySelector(".correction-submit") as HTMLButtonElement).click();
    await vi.waitFor(() => expect(root.querySelector(".empty-queue")).not.toBeNull());
    const body = JSON.parse(fetchMock.mock.calls[1][1].body);
    expect(body.verdict).toBe("reject");
    expect(body.correction).toEqual({ caption: "a red car", scores: {} });
  });

  it("lease_violation shows a toast and refetches", async () => {
    fetchMock.mockResolvedValueOnce(jsonResponse(makeTask()));
    await board.fetchNext();
    fetchMock.mockResolvedValueOnce(
      jsonResponse({ code: "lease_violation", message: "not yours" }, 409),
    );
    fetchMock.mockResolvedValueOnce(new Response(null, { status: 204 }));
    await board.approve();
    // refetch happened (next call after the failed verdict)
    expect(fetchMock.mock.calls[2][0]).toContain("/api/tasks/next");
  });

  it("expired lease disables controls and never submits", async () => {
    // lease already expired relative to the fake clock
    fetchMock.mockResolvedValueOnce(jsonResponse(makeTask({ lease: ["tester", NOW - 5] })));
    await board.fetchNext();
    expect(board.leaseSecondsLeft()).toBe(0);
    fetchMock.mockResolvedValueOnce(new Response(null, { status: 204 }));
    await board.approve(); // refuses to post a verdict, fetches instead
    const verdictCalls = fetchMock.mock.calls.filter((c) => String(c[0]).includes("/verdict"));
    expect(verdictCalls).toHaveLength(0);
  });

  it("never submits a verdict for a task leased to someone else", async () => {
    fetchMock.mockResolvedValueOnce(jsonResponse(makeTask({ lease: ["other", NOW + 600] })));
    await board.fetchNext();
    fetchMock.mockResolvedValueOnce(new Response(null, { status: 204 }));
    await board.approve();
    const verdictCalls = fetchMock.mock.calls.filter((c) => String(c[0]).includes("/verdict"));
    expect(verdictCalls).toHaveLength(0);
  });

  it("keyboard shortcut a approves", async () => {
    fetchMock.mockResolvedValueOnce(jsonResponse(makeTask()));
    await board.fetchNext();
    fetchMock.mockResolvedValueOnce(jsonResponse(makeTask({ state: "approved" })));
    fetchMock.mockResolvedValueOnce(new Response(null, { status: 204 }));
    document.dispatchEvent(new KeyboardEvent("keydown", { key: "a" }));
    await vi.waitFor(() => {
      const verdictCalls = fetchMock.mock.calls.filter((c) => String(c[0]).includes("/verdict"));
      expect(verdictCalls).toHaveLength(1);
    });
  });
});

describe("holderId", () => {
  it("persists in storage", () => {
    const data: Record<string, string> = {};
    const storage = {
      getItem: (k: string) => data[k] ?? null,
      setItem: (k: string, v: string) => {
        data[k] = v;
      },
    } as Storage;
    const first = holderId(storage);
    expect(holderId(storage)).toBe(first);
    expect(first).toMatch(/^reviewer-/);
  });
});
