// Wire types for the healthdial REST API. These mirror the server's JSON
// exactly; the graph view model is a projection of them, never a fork.

export interface OptionDto {
  id: string;
  label: string;
  target: string; // state id or "END"
}

export interface StateDto {
  id: string;
  utterance: string;
  entry: boolean;
  options: OptionDto[];
  tags: string[];
}

export interface FsmDto {
  session_id: string;
  entry: string;
  states: StateDto[];
}

export interface SessionDto {
  id: string;
  topic: string;
  key_points: string[];
}

export interface PlanDto {
  sessions: SessionDto[];
  revision_note?: string;
}

export interface ProjectDto {
  project_id: string;
  title: string;
  material_source: string;
  plan: PlanDto | null;
  plan_approved: boolean;
  fsms: Record<string, FsmDto>;
  content_hash: string;
  revision_count: number;
  can_undo: boolean;
  can_redo: boolean;
  progress: Record<string, { status: string; updated: number | null }>;
}

export interface EditResultDto {
  content_hash: string;
  revision_count: number;
  can_undo: boolean;
  can_redo: boolean;
}

export interface CoverageDto {
  [keyPoint: string]: { covered: boolean; witness_states: string[] };
}

export interface GenerateResultDto {
  fsm: FsmDto;
  coverage: CoverageDto;
}

export interface DraftDto {
  label: string;
}

export interface TranscriptTurnDto {
  state_id: string;
  agent: string;
  chosen: string | null;
}

export interface PlayDto {
  play_id: string;
  project_id: string;
  session_id: string;
  finished: boolean;
  options: string[];
  transcript: TranscriptTurnDto[];
}

export type CommandKind =
  | "edit-utterance"
  | "add-state"
  | "delete-state"
  | "add-option"
  | "edit-option-label"
  | "delete-option"
  | "connect-option"
  | "reorder-topics"
  | "add-topic"
  | "delete-topic"
  | "rename-topic"
  | "accept-suggestion";

export interface EditCommand {
  kind: CommandKind;
  payload: Record<string, unknown>;
}

export const END = "END";
