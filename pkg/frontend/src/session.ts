/**
 * Drives one labeler's annotation loop: lease a task, collect the ranking
 * gestures, submit, move on. Holds no DOM; the view subscribes to state
 * changes and re-renders.
 *
 * Submission outcomes map to statuses the view can surface directly:
 * lease expiry prompts a re-fetch (the service will re-issue the task),
 * network failures park the payload in the idempotent retry queue.
 */

import { AnnotationApi, ApiError, NetworkError, SubmitQueue } from "./api.js";
import {
  TaskViewState,
  buildPayload,
  canSubmit,
  confirmAllTied,
  initViewState,
  placeAsNewGroup,
  placeIntoGroup,
  returnToTray,
  setAccuracy,
  setGrade,
} from "./model.js";

export type SessionPhase = "idle" | "loading" | "active" | "done" | "fatal";

export class AnnotationSession {
  state: TaskViewState | null = null;
  phase: SessionPhase = "idle";
  banner: string | null = null;
  completed = 0;

  private listeners: Array<() => void> = [];

  constructor(
    readonly api: AnnotationApi,
    readonly labelerId: string,
    private readonly queue: SubmitQueue = new SubmitQueue(api),
  ) {}

  onChange(listener: () => void): void {
    this.listeners.push(listener);
  }

  private emit(): void {
    for (const l of this.listeners) l();
  }

  private setState(state: TaskViewState | null): void {
    this.state = state;
    this.emit();
  }

  async start(): Promise<void> {
    this.phase = "loading";
    this.banner = null;
    this.emit();
    try {
      const task = await this.api.fetchTask(this.labelerId);
      if (task === null) {
        this.phase = "done";
        this.setState(null);
        return;
      }
      this.phase = "active";
      this.setState(initViewState(task));
    } catch (err) {
      this.phase = err instanceof NetworkError ? "idle" : "fatal";
      this.banner = String(err instanceof Error ? err.message : err);
      this.emit();
    }
  }

  /** Re-fetch after lease expiry or a transient failure. */
  async refetch(): Promise<void> {
    await this.start();
  }

  // -- gestures ---------------------------------------------------------

  private update(fn: (s: TaskViewState) => TaskViewState): void {
    if (this.state && this.state.status !== "submitting") this.setState(fn(this.state));
  }

  dropAsNewGroup(captionId: string, position: number): void {
    this.update((s) => placeAsNewGroup(s, captionId, position));
  }

  dropIntoGroup(captionId: string, groupIndex: number): void {
    this.update((s) => placeIntoGroup(s, captionId, groupIndex));
  }

  dropToTray(captionId: string): void {
    this.update((s) => returnToTray(s, captionId));
  }

  toggleAccuracy(captionId: string, value: boolean): void {
    this.update((s) => setAccuracy(s, captionId, value));
  }

  grade(
    captionId: string,
    criterion: "completeness" | "vividness" | "context",
    value: 0 | 1 | 2,
  ): void {
    this.update((s) => setGrade(s, captionId, criterion, value));
  }

  setAllTied(confirmed: boolean): void {
    this.update((s) => confirmAllTied(s, confirmed));
  }

  get submittable(): boolean {
    return this.state !== null && this.state.status === "ranking" && canSubmit(this.state);
  }

  // -- submission --------------------------------------------------------

  async submit(): Promise<void> {
    if (!this.state || !this.submittable) return;
    const payload = buildPayload(this.state, this.labelerId);
    this.setState({ ...this.state, status: "submitting" });
    try {
      await this.queue.enqueue(payload);
      this.completed += 1;
      this.setState({ ...this.state!, status: "submitted" });
      await this.start(); // auto-fetch the next task
    } catch (err) {
      if (err instanceof ApiError && err.code === "LeaseExpired") {
        this.banner = "lease expired before submission; re-fetch to continue";
        this.setState({ ...this.state!, status: "lease-expired" });
        return;
      }
      if (err instanceof NetworkError) {
        this.banner = "offline: submission queued, retrying";
        this.setState({ ...this.state!, status: "queued-offline" });
        return;
      }
      this.banner = String(err instanceof Error ? err.message : err);
      this.setState({ ...this.state!, status: "error" });
    }
  }
}
