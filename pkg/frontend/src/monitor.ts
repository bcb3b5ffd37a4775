// Live run monitor: poll /run/status once a second, show the latest
// frame with the planned waypoints drawn over it, stream the planner's
// explanations, and offer an abort button. Silence (>5 s without a
// successful poll) raises a stale badge with the last-updated time.

import { ApiError, api as realApi, type Api } from "./api.js";
import { el, frameUrl, showBanner } from "./dom.js";
import type { RunStatus } from "./types.js";

export const POLL_MS = 1000;
export const STALE_MS = 5000;

export interface MonitorHandle {
  element: HTMLElement;
  settled(): Promise<unknown>;
  stop(): void;
}

export function mountMonitor(
  root: HTMLElement,
  deps: Api = realApi,
  pollMs = POLL_MS,
  staleMs = STALE_MS,
): MonitorHandle {
  const banners = el("div", "banners");
  const frame = el("img", "frame");
  const overlay = el("div", "overlay");
  const frameWrap = el("div", "frame-wrap");
  frameWrap.append(frame, overlay);

  const statusLine = el("div", "status-line");
  const stateChip = el("span", "state-chip");
  const progress = el("span", "progress");
  statusLine.append(stateChip, " ", progress);
  const staleBadge = el("div", "stale-badge");
  staleBadge.hidden = true;
  const rowSummary = el("div", "row-summary");
  const explanationBox = el("div", "explanation");
  const trace = el("ul", "trace");
  const abort = el("button", "abort", "abort run");

  const side = el("div", "side");
  side.append(statusLine, staleBadge, rowSummary, explanationBox, trace,
              abort);
  const view = el("div", "monitor");
  view.append(banners, frameWrap, side);
  root.appendChild(view);

  let lastOk = Date.now();
  let polling = false;
  let stopped = false;
  let pending: Promise<unknown> = Promise.resolve();

  function fail(err: unknown) {
    if (err instanceof ApiError) showBanner(banners, err.code, err.detail);
    else showBanner(banners, "NETWORK", String(err));
  }

  function render(doc: RunStatus) {
    stateChip.textContent = doc.active
      ? "running"
      : doc.aborted
        ? "aborted"
        : "finished";
    const total = doc.n_episodes * doc.seeds.length;
    progress.textContent =
      `${doc.backend} / ${doc.setup} — ${doc.results.length}/${total} episodes`;

    if (doc.frame_png) frame.src = frameUrl(doc.frame_png);
    overlay.replaceChildren();
    if (doc.plan && doc.keypoints) {
      const byId = new Map(doc.keypoints.map((kp) => [kp.id, kp]));
      doc.plan.forEach((id, order) => {
        const kp = byId.get(id);
        if (!kp) return; // first-person plans carry no pixel positions
        const marker = el("div", "waypoint", String(order + 1));
        marker.dataset.action = String(id);
        marker.style.left = `${kp.u}px`;
        marker.style.top = `${kp.v}px`;
        overlay.appendChild(marker);
      });
    }
    explanationBox.textContent = doc.explanation ?? "";

    trace.replaceChildren();
    for (const entry of doc.trace_tail ?? []) {
      trace.appendChild(
        el(
          "li",
          "trace-entry",
          `s${entry.seed}e${entry.episode} [${entry.plan.join(", ")}] ` +
            entry.explanation,
        ),
      );
    }

    rowSummary.replaceChildren();
    if (doc.row) {
      rowSummary.textContent =
        `TS ${doc.row.ts.toFixed(2)}/${doc.row.n} · D ${doc.row.d} · ` +
        `SR ${doc.row.sr.toFixed(2)} · SPL ${doc.row.spl.toFixed(3)}`;
    }

    abort.disabled = !doc.active;
    if (!doc.active) stop();
  }

  function updateStale() {
    const silent = Date.now() - lastOk;
    if (silent > staleMs) {
      staleBadge.hidden = false;
      staleBadge.textContent =
        "stale — last update " + new Date(lastOk).toLocaleTimeString();
    } else {
      staleBadge.hidden = true;
    }
  }

  function tick() {
    updateStale();
    if (polling || stopped) return;
    polling = true;
    pending = deps
      .runStatus()
      .then((doc) => {
        lastOk = Date.now();
        render(doc);
        updateStale();
      })
      .catch(() => {
        // poll failure: no banner spam, the stale badge tells the story
      })
      .finally(() => {
        polling = false;
      });
  }

  abort.addEventListener("click", () => {
    pending = deps.runAbort().catch(fail);
  });

  const timer = setInterval(tick, pollMs);
  function stop() {
    stopped = true;
    clearInterval(timer);
  }

  tick();
  return { element: view, settled: () => pending, stop };
}
