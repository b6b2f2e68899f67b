/**
 * View model of one annotation task.
 *
 * The screen splits captions between an unranked tray and an ordered list
 * of rank groups. Every transition preserves the partition invariant:
 * tray plus groups always hold each of the task's captions exactly once,
 * so the submitted ranking can never drop or duplicate a caption. Ties
 * are an explicit gesture (dropping onto an existing group); dropping
 * into a gap creates a new group at that position.
 *
 * Transitions are pure: they return a new state and never mutate, which
 * keeps the serialized payload a function of the visible ordering alone.
 */

import type { AnnotationTask, CriteriaToggles, SubmitPayload } from "./types.js";
import { SUPPORTED_SCHEMA_VERSION } from "./types.js";

export type SubmissionStatus =
  | "ranking"
  | "submitting"
  | "queued-offline"
  | "submitted"
  | "lease-expired"
  | "error";

export interface TaskViewState {
  task: AnnotationTask;
  /** Caption ids not yet placed, in the service-provided shuffled order. */
  tray: string[];
  /** Ordered rank groups, best first; each group is a tie set. */
  groups: string[][];
  criteria: Record<string, CriteriaToggles>;
  allTiedConfirmed: boolean;
  status: SubmissionStatus;
  /** Non-blocking warnings (missing image, ...) and blocking error text. */
  warning: string | null;
  error: string | null;
}

export class PartitionViolation extends Error {}

const defaultToggles = (): CriteriaToggles => ({
  accuracy: false,
  completeness: 0,
  vividness: 0,
  context: 0,
});

export function initViewState(task: AnnotationTask): TaskViewState {
  if (task.schema_version !== SUPPORTED_SCHEMA_VERSION) {
    return {
      task,
      tray: [],
      groups: [],
      criteria: {},
      allTiedConfirmed: false,
      status: "error",
      warning: null,
      error:
        `payload schema version ${task.schema_version} not supported ` +
        `(this frontend speaks version ${SUPPORTED_SCHEMA_VERSION})`,
    };
  }
  const criteria: Record<string, CriteriaToggles> = {};
  for (const c of task.captions) criteria[c.caption_id] = defaultToggles();
  return {
    task,
    tray: task.captions.map((c) => c.caption_id),
    groups: [],
    criteria,
    allTiedConfirmed: false,
    status: "ranking",
    warning: task.image_uri ? null : "image location missing; showing placeholder",
    error: null,
  };
}

function assertPartition(state: TaskViewState): void {
  const seen = new Set<string>();
  for (const id of state.tray) {
    if (seen.has(id)) throw new PartitionViolation(`caption ${id} appears twice`);
    seen.add(id);
  }
  for (const group of state.groups) {
    if (group.length === 0) throw new PartitionViolation("empty rank group");
    for (const id of group) {
      if (seen.has(id)) throw new PartitionViolation(`caption ${id} appears twice`);
      seen.add(id);
    }
  }
  const all = new Set(state.task.captions.map((c) => c.caption_id));
  if (seen.size !== all.size)
    throw new PartitionViolation(
      `${all.size - seen.size} caption(s) missing from the view`,
    );
  for (const id of seen)
    if (!all.has(id)) throw new PartitionViolation(`unknown caption ${id}`);
}

function detach(state: TaskViewState, captionId: string): TaskViewState {
  const tray = state.tray.filter((id) => id !== captionId);
  const groups = state.groups
    .map((g) => g.filter((id) => id !== captionId))
    .filter((g) => g.length > 0);
  return { ...state, tray, groups };
}

/** Drop into a gap: the caption becomes its own group at ``position``. */
export function placeAsNewGroup(
  state: TaskViewState,
  captionId: string,
  position: number,
): TaskViewState {
  const base = detach(state, captionId);
  const groups = [...base.groups];
  const at = Math.max(0, Math.min(position, groups.length));
  groups.splice(at, 0, [captionId]);
  const next = { ...base, groups, allTiedConfirmed: false };
  assertPartition(next);
  return next;
}

/** Drop onto an existing group: an explicit tie with that group. */
export function placeIntoGroup(
  state: TaskViewState,
  captionId: string,
  groupIndex: number,
): TaskViewState {
  if (groupIndex < 0 || groupIndex >= state.groups.length) return state;
  const anchor = state.groups[groupIndex]!.find((id) => id !== captionId);
  if (anchor === undefined) return state; // dropping onto its own singleton
  const base = detach(state, captionId);
  const groups = base.groups.map((g) => (g.includes(anchor) ? [...g, captionId] : g));
  const next = { ...base, groups, allTiedConfirmed: false };
  assertPartition(next);
  return next;
}

/** Drag back to the tray; the caption returns to its shuffled slot. */
export function returnToTray(state: TaskViewState, captionId: string): TaskViewState {
  const base = detach(state, captionId);
  const order = state.task.captions.map((c) => c.caption_id);
  const tray = order.filter(
    (id) => base.tray.includes(id) || id === captionId,
  );
  const next = { ...base, tray };
  assertPartition(next);
  return next;
}

export function setAccuracy(
  state: TaskViewState,
  captionId: string,
  value: boolean,
): TaskViewState {
  const current = state.criteria[captionId];
  if (!current) return state;
  return {
    ...state,
    criteria: { ...state.criteria, [captionId]: { ...current, accuracy: value } },
  };
}

export function setGrade(
  state: TaskViewState,
  captionId: string,
  criterion: "completeness" | "vividness" | "context",
  value: 0 | 1 | 2,
): TaskViewState {
  const current = state.criteria[captionId];
  if (!current) return state;
  return {
    ...state,
    criteria: { ...state.criteria, [captionId]: { ...current, [criterion]: value } },
  };
}

export function confirmAllTied(state: TaskViewState, confirmed: boolean): TaskViewState {
  return { ...state, allTiedConfirmed: confirmed };
}

/** Submit gate: everything placed, and at least 2 groups unless the
 *  labeler explicitly confirmed an all-tied ranking. */
export function canSubmit(state: TaskViewState): boolean {
  if (state.status === "error") return false;
  if (state.tray.length > 0) return false;
  if (state.groups.length === 0) return false;
  if (state.groups.length < 2 && !state.allTiedConfirmed) return false;
  return true;
}

/** The wire payload is a pure function of the visible ranking and toggles. */
export function buildPayload(state: TaskViewState, labelerId: string): SubmitPayload {
  if (!canSubmit(state)) throw new PartitionViolation("ranking incomplete");
  assertPartition(state);
  return {
    schema_version: SUPPORTED_SCHEMA_VERSION,
    task_id: state.task.task_id,
    labeler_id: labelerId,
    ranking: state.groups.map((g) => [...g]),
    criteria: Object.fromEntries(
      Object.entries(state.criteria).map(([id, t]) => [id, { ...t }]),
    ),
  };
}
