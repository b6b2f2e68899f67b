/** Payload types of the annotation service API (schema version 1). */

export const SUPPORTED_SCHEMA_VERSION = 1;

export interface CaptionPayload {
  caption_id: string;
  text: string;
}

export interface RubricItem {
  name: string;
  kind: "boolean" | "grade-0-2";
  prompt: string;
}

export interface LeasePayload {
  labeler_id: string;
  expires_at: number;
}

export interface AnnotationTask {
  schema_version: number;
  task_id: string;
  image_id: string;
  image_uri: string;
  captions: CaptionPayload[];
  rubric: RubricItem[];
  lease: LeasePayload;
}

export interface CriteriaToggles {
  accuracy: boolean;
  completeness: 0 | 1 | 2;
  vividness: 0 | 1 | 2;
  context: 0 | 1 | 2;
}

export interface SubmitPayload {
  schema_version: number;
  task_id: string;
  labeler_id: string;
  ranking: string[][];
  criteria: Record<string, CriteriaToggles>;
}

export interface SubmitAck {
  schema_version: number;
  record_id: string;
}

export interface ProgressPayload {
  schema_version: number;
  total_tasks: number;
  annotated: number;
  leased: number;
  per_labeler: Record<string, number>;
}
