// Typed client over the curation service JSON API.

export interface PseudoLabel {
  caption: string;
  scores: Record<string, number>;
}

export interface ReviewTask {
  task_id: string;
  record_id: string;
  pseudo_label: PseudoLabel;
  state: string;
  ai_verdict: { passed: boolean; reasons: string[] } | null;
  human_verdict: string | null;
  correction: PseudoLabel | null;
  lease: [string, number] | null;
  history: string[];
  seq: number;
}

export interface ServiceStats {
  queue_depth: number;
  approval_rate: number | null;
  resolved: number;
  per_concept_rejection: Record<string, number>;
}

export class ApiError extends Error {
  constructor(public code: string, message: string, public status: number) {
    super(message);
  }
}

async function parseError(res: Response): Promise<ApiError> {
  try {
    const body = (await res.json()) as { code?: string; message?: string };
    return new ApiError(body.code ?? "unknown", body.message ?? res.statusText, res.status);
  } catch {
    return new ApiError("unknown", res.statusText, res.status);
  }
}

export class CurationApi {
  constructor(private baseUrl: string = "") {}

  mediaUrl(recordId: string): string {
    return `${this.baseUrl}/api/media/${recordId}`;
  }

  async nextTask(holder: string): Promise<ReviewTask | null> {
    const res = await fetch(
      `${this.baseUrl}/api/tasks/next?holder=${encodeURIComponent(holder)}`,
      { headers: { Accept: "application/json" } },
    );
    if (res.status === 204) return null;
    if (!res.ok) throw await parseError(res);
    return (await res.json()) as ReviewTask;
  }

  async getTask(taskId: string): Promise<ReviewTask> {
    const res = await fetch(`${this.baseUrl}/api/tasks/${taskId}`);
    if (!res.ok) throw await parseError(res);
    return (await res.json()) as ReviewTask;
  }

  async submitVerdict(
    taskId: string,
    holder: string,
    verdict: "approve" | "reject",
    correction?: PseudoLabel,
  ): Promise<ReviewTask> {
    const res = await fetch(`${this.baseUrl}/api/tasks/${taskId}/verdict`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ holder, verdict, ...(correction ? { correction } : {}) }),
    });
    if (!res.ok) throw await parseError(res);
    return (await res.json()) as ReviewTask;
  }

  async stats(): Promise<ServiceStats> {
    const res = await fetch(`${this.baseUrl}/api/stats`);
    if (!res.ok) throw await parseError(res);
    return (await res.json()) as ServiceStats;
  }
}
