// Shapes of the service API documents. Field names mirror the JSON
// exactly; the UI renders these and nothing else.

export interface Keypoint {
  id: number;
  u: number;
  v: number;
}

export interface StateDoc {
  setup: "fpv" | "tpv";
  step_index: number;
  frame_png: string;
  action_ids: number[];
  keypoints: Keypoint[];
  episodic_text: string;
  target_object: string | null;
  prompt: string;
  done: boolean;
  event: string | null;
}

export interface StepReply {
  event: string;
  state: StateDoc;
}

export interface FinishReply {
  episode_id: string;
  n_samples: number;
  memory_count: number;
}

export interface TraceEntry {
  seed: number;
  episode: number;
  plan: number[];
  explanation: string;
}

export interface EpisodeRow {
  seed: number;
  episode: number;
  success: boolean;
  steps: number;
  dangerous: boolean;
  ts_term: number;
  failure_reason: string;
}

export interface SuiteRow {
  mode: string;
  cl: number;
  scenario: string;
  n: number;
  ts: number;
  d: number;
  sr: number;
  spl: number;
}

export interface RunStatus {
  active: boolean;
  aborted: boolean;
  setup: string;
  backend: string;
  n_episodes: number;
  seeds: number[];
  results: EpisodeRow[];
  row: SuiteRow | null;
  seed?: number;
  episode?: number;
  plan?: number[];
  explanation?: string;
  keypoints?: Keypoint[];
  frame_png?: string;
  updated_at?: number;
  trace_tail?: TraceEntry[];
}

export interface ErrorBody {
  code: string;
  detail: string;
}
