import type { FinishReply, RunStatus, StateDoc, StepReply } from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    public detail: string,
  ) {
    super(`${code}: ${detail}`);
  }
}

let base = "";

export function setBase(url: string) {
  base = url.replace(/\/$/, "");
}

async function request<T>(path: string, init?: RequestInit): Promise<T> {
  const res = await fetch(base + path, init);
  if (!res.ok) {
    let code = "HTTP_" + res.status;
    let detail = res.statusText;
    try {
      const body = await res.json();
      code = body.code ?? code;
      detail = body.detail ?? detail;
    } catch {
      // non-JSON error body; keep the status line
    }
    throw new ApiError(res.status, code, detail);
  }
  return res.json() as Promise<T>;
}

function post<T>(path: string, body: unknown): Promise<T> {
  return request<T>(path, {
    method: "POST",
    headers: { "content-type": "application/json" },
    body: JSON.stringify(body),
  });
}

export const getState = () => request<StateDoc>("/state");

export const demoStep = (action: number, explanation: string) =>
  post<StepReply>("/demo/step", { action, explanation });

export const demoFinish = (targetObject: string) =>
  post<FinishReply>("/demo/finish", { target_object: targetObject });

export const runStatus = () => request<RunStatus>("/run/status");

export const runAbort = () =>
  post<{ aborted: boolean; active: boolean }>("/run/abort", {});

export interface Api {
  getState: typeof getState;
  demoStep: typeof demoStep;
  demoFinish: typeof demoFinish;
  runStatus: typeof runStatus;
  runAbort: typeof runAbort;
}

export const api: Api = { getState, demoStep, demoFinish, runStatus, runAbort };
