// Integration: the real UI drives a live curation service over real HTTP.
//
// jsdom stands in for the browser (no browser binary is installable in this
// environment); the DOM, fetch calls, and service below are all real. Setup
// seeds a store through the CLI, then serves it with three proposed tasks.

import { spawn, spawnSync, type ChildProcess } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { CurationApi, ReviewTask } from "../src/api";
import { ReviewBoard } from "../src/app";
import { StatsPanel } from "../src/stats";

const PYTHON = process.env.ZCURATE_PYTHON ?? "python3";
const LEASE_SECONDS = 1.5;

// three tiny 8x8 noise PNGs, pre-encoded
const SEED_IMAGES = [
  "iVBORw0KGgoAAAANSUhEUgAAAAgAAAAICAIAAABLbSncAAAA00lEQVR4nAHIADf/AKWCvgkl7JalaKVfPMSo9qnJFwdWe6KnBwESpC15My37VkHgE0nCbexqfuwJRAp6qscBY2UBFqtBa3Y468UAtxVU2SkB5Cvk8NxcAROLvJm5GQsajst1D+Q/FPXG23vaVdgkhwJuMaPzJReXrUW3vo7zRB6NAkFbEexJAUkCSNvCPnUGxRLW7t+s3QuEPFjeGgcEpY3sAe5uIiTbmU83QmcY0a8DP1K+1ebgmiNRjgSJ7lycxiPv/I99+neC8IIQI79dni/smeE3VFze1q/M1QAAAABJRU5ErkJggg==",
  "iVBORw0KGgoAAAANSUhEUgAAAAgAAAAICAIAAABLbSncAAAA00lEQVR4nAHIADf/AcZGsIbDClT0C7tMXeaEPkgLQVkLqA4gNAJ53ZZ6Oujrmjrdxblhor8mzGcT7wVlCAgCI1I+zti5No8Muu/KizbV208IBBcx1YReBBvtig+5LGchxCLQZBCH+fdOov910a+3rAHT4e0oj/iotwNQCtWYEu11gdtKHjTlqQ8AuCC/UMU9EEH14CY8zdEZF+FJXtAi2082BOzn3qKhLqX6lFHK0oH9mFb+GsZ6GAKr9QEOnhKiqnl6xg9XjrHSUMvdT4YAqt2N0AhTRmAeG2cC2gAAAABJRU5ErkJggg==",
  "iVBORw0KGgoAAAANSUhEUgAAAAgAAAAICAIAAABLbSncAAAA00lEQVR4nAHIADf/Ad2uolKBqncpFRMJDEYNJnJWENR9cQ+UvAJB5xMNPihZV5QCPbHASVXbMuWLEO3N2KABnB4MsJky9tnsujhH1rvDBDzmtjCIOHCUAbJFXjo7fDBqDRHh83aN5K0oAFfD2i/4LwLSOWC7eKI5nFciOA9rQ5QJyuzfKaKccMcEDqTPzO5ADBBm2q3CaK62sbl0wSADHSLkAR/+01+mSwlJiwP/XQmAeBXQXDK6GVi/KwQQOF/4l9AUxu8Qki8VzY38EOf4hBQuOmC5gVfjmATHMAAAAABJRU5ErkJggg==",
];

let server: ChildProcess;
let baseUrl: string;
let api: CurationApi;

function cli(workdir: string, configPath: string, dataDir: string, ...args: string[]): void {
  const result = spawnSync(
    PYTHON,
    ["-m", "zcurate.cli", "--config", configPath, "--data-dir", dataDir, ...args],
    { cwd: workdir, encoding: "utf-8" },
  );
  if (result.status !== 0) {
    throw new Error(`cli ${args.join(" ")} failed: ${result.stdout}\n${result.stderr}`);
  }
}

beforeAll(async () => {
  const workdir = mkdtempSync(join(tmpdir(), "zcurate-ui-"));
  const manifest = join(workdir, "seed.jsonl");
  const lines = SEED_IMAGES.map((b64, i) =>
    JSON.stringify({
      media_b64: b64,
      source: "t2i",
      tags: ["cat"],
      captions: { short: `a cat ${i}` },
    }),
  );
  writeFileSync(manifest, lines.join("\n") + "\n");
  const configPath = join(workdir, "config.json");
  writeFileSync(
    configPath,
    JSON.stringify({
      profiler: { border_width: 1, filter_rules: [] },
      curation: { lease_duration: LEASE_SECONDS, auto_approve: false, thresholds: {} },
    }),
  );
  const dataDir = join(workdir, "data");
  cli(workdir, configPath, dataDir, "ingest", manifest);
  cli(workdir, configPath, dataDir, "profile");
  cli(workdir, configPath, dataDir, "dedup");

  server = spawn(
    PYTHON,
    [
      "-m", "zcurate.cli", "--config", configPath, "--data-dir", dataDir,
      "serve", "--addr", "127.0.0.1:0", "--propose", "3", "--seed", "1",
    ],
    { stdio: ["ignore", "pipe", "pipe"] },
  );
  baseUrl = await new Promise<string>((resolve, reject) => {
    let buffer = "";
    const timer = setTimeout(() => reject(new Error(`serve never came up: ${buffer}`)), 20000);
    server.stdout!.on("data", (chunk: Buffer) => {
      buffer += chunk.toString();
      const match = buffer.match(/serving on (http:\/\/[\d.]+:\d+)/);
      if (match) {
        clearTimeout(timer);
        resolve(match[1]);
      }
    });
    server.stderr!.on("data", (chunk: Buffer) => (buffer += chunk.toString()));
    server.on("exit", (code) => reject(new Error(`serve exited ${code}: ${buffer}`)));
  });
  api = new CurationApi(baseUrl);
});

afterAll(() => {
  server?.kill();
});

function makeBoard(holder: string, clock?: () => number): { board: ReviewBoard; root: HTMLElement } {
  document.body.innerHTML = `<div id="board"></div>`;
  const root = document.getElementById("board")!;
  return { board: new ReviewBoard(root, api, holder, clock), root };
}

async function serverTask(taskId: string): Promise<ReviewTask> {
  return api.getTask(taskId);
}

const sleep = (s: number) => new Promise((r) => setTimeout(r, s * 1000));

describe("review flows against the live service", () => {
  // the board auto-fetches (and so auto-leases) the next task after every
  // verdict, so each flow disposes its board and the next one waits out any
  // lease it left behind

  it("fetch then approve: service state matches", async () => {
    const { board, root } = makeBoard("approver");
    await board.fetchNext();
    const task = board.currentTask();
    expect(task).not.toBeNull();
    expect(root.querySelector(".caption")!.textContent).toMatch(/a cat \d/);
    expect(root.querySelector<HTMLImageElement>(".task-image")!.src).toContain("/api/media/");

    (root.querySelector(".approve") as HTMLButtonElement).click();
    await sleep(0.3);

    const after = await serverTask(task!.task_id);
    expect(after.state).toBe("approved");
    expect(after.human_verdict).toBe("approve");
    expect(after.lease).toBeNull();
    board.dispose();
  });

  it("fetch then reject-with-correction: correction persisted", async () => {
    const { board, root } = makeBoard("corrector");
    await board.fetchNext();
    const task = board.currentTask()!;

    (root.querySelector(".correct") as HTMLButtonElement).click();
    const textarea = root.querySelector<HTMLTextAreaElement>(".correction-text")!;
    const submit = root.querySelector<HTMLButtonElement>(".correction-submit")!;
    expect(submit.disabled).toBe(true); // empty correction cannot submit
    textarea.value = "a red car";
    textarea.dispatchEvent(new Event("input"));
    expect(submit.disabled).toBe(false);
    submit.click();
    await sleep(0.3);

    const after = await serverTask(task.task_id);
    expect(after.state).toBe("corrected");
    expect(after.correction!.caption).toBe("a red car");
    board.dispose();
  });

  it("stale submit: lease-violation toast and task re-leasable", async () => {
    await sleep(LEASE_SECONDS + 0.6); // let auto-leases from earlier flows lapse
    // freeze the board clock at lease time so the CLIENT still believes the
    // lease is valid while it expires on the server
    const frozen = Date.now() / 1000;
    const { board, root } = makeBoard("sloth", () => frozen);
    await board.fetchNext();
    const task = board.currentTask()!;
    await sleep(LEASE_SECONDS + 0.6); // server-side expiry

    (root.querySelector(".approve") as HTMLButtonElement).click();
    await sleep(0.3);

    const toast = document.getElementById("zc-toast");
    expect(toast).not.toBeNull();
    expect(toast!.hidden).toBe(false);
    expect(toast!.textContent).toContain("lease expired on the server");

    const after = await serverTask(task.task_id);
    expect(after.state).toBe("pending_human"); // verdict was refused
    board.dispose();

    await sleep(LEASE_SECONDS + 0.6); // the board re-leased it on auto-refetch
    const again = await api.nextTask("second-reviewer");
    expect(again!.task_id).toBe(task.task_id); // re-leasable after expiry
    // resolve it so the queue drains cleanly
    await api.submitVerdict(task.task_id, "second-reviewer", "approve");
  });

  it("stats panel reflects live service numbers", async () => {
    document.body.innerHTML = `<div id="stats"></div>`;
    const panel = new StatsPanel(document.getElementById("stats")!, api);
    await panel.poll();
    const stats = await api.stats();
    expect(document.querySelector("[data-role=queue]")!.textContent).toBe(
      String(stats.queue_depth),
    );
    expect(stats.resolved).toBe(3); // approved, corrected, approved-after-expiry
    expect(stats.queue_depth).toBe(0);
  });

  it("empty queue renders the empty notice", async () => {
    const { board, root } = makeBoard("late-reviewer");
    await board.fetchNext();
    expect(root.querySelector(".empty-queue")).not.toBeNull();
    board.dispose();
  });
});
