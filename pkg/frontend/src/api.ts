/**
 * Typed client for the annotation service plus an idempotent submit queue.
 *
 * Submissions carry a natural idempotency token (task id + labeler id):
 * the service returns the same record id for retries, so the queue can
 * resend after network failures without ever creating a second record.
 */

import type {
  AnnotationTask,
  ProgressPayload,
  SubmitAck,
  SubmitPayload,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public readonly code: string,
    public readonly status: number,
    detail: string,
  ) {
    super(`${code}: ${detail}`);
  }
}

/** Thrown for transport-level failures (offline, connection refused). */
export class NetworkError extends Error {}

type FetchLike = typeof fetch;

export class AnnotationApi {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike = fetch,
  ) {}

  private async request(path: string, init?: RequestInit): Promise<Response> {
    let response: Response;
    try {
      response = await this.fetchFn(`${this.baseUrl}${path}`, init);
    } catch (err) {
      throw new NetworkError(String(err));
    }
    return response;
  }

  private async parseError(response: Response): Promise<never> {
    let code = `HTTP${response.status}`;
    let detail = response.statusText;
    try {
      const body = await response.json();
      if (body && typeof body.error === "string") {
        code = body.error;
        detail = body.detail ?? "";
      }
    } catch {
      /* non-JSON error body; keep the HTTP status */
    }
    throw new ApiError(code, response.status, detail);
  }

  /** Lease the next open task; null when the pool is exhausted. */
  async fetchTask(labelerId: string): Promise<AnnotationTask | null> {
    const response = await this.request(
      `/task?labeler=${encodeURIComponent(labelerId)}`,
    );
    if (response.status === 404) {
      const body = await response.json().catch(() => ({}));
      if (body.error === "NoTasksRemaining") return null;
      throw new ApiError(body.error ?? "HTTP404", 404, body.detail ?? "");
    }
    if (!response.ok) await this.parseError(response);
    return (await response.json()) as AnnotationTask;
  }

  async submit(payload: SubmitPayload): Promise<SubmitAck> {
    const response = await this.request("/submit", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    });
    if (!response.ok) await this.parseError(response);
    return (await response.json()) as SubmitAck;
  }

  async progress(): Promise<ProgressPayload> {
    const response = await this.request("/progress");
    if (!response.ok) await this.parseError(response);
    return (await response.json()) as ProgressPayload;
  }

  imageUrl(imageId: string): string {
    return `${this.baseUrl}/image/${encodeURIComponent(imageId)}`;
  }
}

interface QueueEntry {
  key: string;
  payload: SubmitPayload;
  resolve: (ack: SubmitAck) => void;
  reject: (err: unknown) => void;
}

/**
 * Serializes submissions and retries network failures with backoff.
 * Service-level rejections (LeaseExpired, validation) are NOT retried;
 * they surface to the caller immediately.
 */
export class SubmitQueue {
  private entries: QueueEntry[] = [];
  private draining = false;

  constructor(
    private readonly api: AnnotationApi,
    private readonly retryDelayMs = 1000,
    private readonly maxAttempts = 8,
    private readonly sleep: (ms: number) => Promise<void> = (ms) =>
      new Promise((r) => setTimeout(r, ms)),
  ) {}

  get pending(): number {
    return this.entries.length;
  }

  /** Enqueue a submission; duplicate (task, labeler) keys coalesce. */
  enqueue(payload: SubmitPayload): Promise<SubmitAck> {
    const key = `${payload.task_id}${payload.labeler_id}`;
    const existing = this.entries.find((e) => e.key === key);
    if (existing) {
      return new Promise((resolve, reject) => {
        const prevResolve = existing.resolve;
        const prevReject = existing.reject;
        existing.resolve = (ack) => {
          prevResolve(ack);
          resolve(ack);
        };
        existing.reject = (err) => {
          prevReject(err);
          reject(err);
        };
      });
    }
    return new Promise<SubmitAck>((resolve, reject) => {
      this.entries.push({ key, payload, resolve, reject });
      void this.drain();
    });
  }

  private async drain(): Promise<void> {
    if (this.draining) return;
    this.draining = true;
    try {
      while (this.entries.length > 0) {
        const entry = this.entries[0]!;
        let attempt = 0;
        for (;;) {
          try {
            const ack = await this.api.submit(entry.payload);
            this.entries.shift();
            entry.resolve(ack);
            break;
          } catch (err) {
            if (err instanceof NetworkError && attempt < this.maxAttempts - 1) {
              attempt += 1;
              await this.sleep(this.retryDelayMs * Math.min(attempt, 4));
              continue;
            }
            this.entries.shift();
            entry.reject(err);
            break;
          }
        }
      }
    } finally {
      this.draining = false;
    }
  }
}
