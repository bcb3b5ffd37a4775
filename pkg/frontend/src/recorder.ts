// Demonstration recorder: show the annotated frame, let the operator
// pick an action (numbered button for first-person, keypoint hotspot for
// top-view), require a think-aloud explanation, submit, and finally save
// the episode under a target-object name.

import { ApiError, api as realApi, type Api } from "./api.js";
import { el, frameUrl, showBanner } from "./dom.js";
import { HIT_RADIUS_PX, hitTest } from "./hit.js";
import type { StateDoc } from "./types.js";

export interface RecorderHandle {
  element: HTMLElement;
  /** resolves once the last user-triggered request settles (test hook) */
  settled(): Promise<unknown>;
}

export function mountRecorder(
  root: HTMLElement,
  deps: Api = realApi,
): RecorderHandle {
  const banners = el("div", "banners");
  const frame = el("img", "frame");
  const overlay = el("div", "overlay");
  const actionBar = el("div", "actions");
  const frameWrap = el("div", "frame-wrap");
  frameWrap.append(frame, overlay);

  const counter = el("span", "step-count", "0");
  const eventChip = el("span", "event-chip");
  const target = el("span", "target");
  const episodic = el("pre", "episodic");
  const explanation = el("textarea", "explanation");
  explanation.placeholder = "why this action (required)";
  const submit = el("button", "submit", "submit step");
  const finishOpen = el("button", "finish-open", "finish episode");

  const dialog = el("div", "finish-dialog");
  dialog.hidden = true;
  const targetInput = el("input", "target-input");
  targetInput.placeholder = "target object";
  const finishConfirm = el("button", "finish-confirm", "save episode");
  const finishCancel = el("button", "finish-cancel", "cancel");
  const finishNote = el("span", "finish-note");
  dialog.append(targetInput, finishConfirm, finishCancel, finishNote);

  const side = el("div", "side");
  const statusLine = el("div", "status-line");
  statusLine.append("step ", counter, " ", eventChip, " ", target);
  side.append(statusLine, episodic, explanation, submit, finishOpen, dialog);

  const view = el("div", "recorder");
  view.append(banners, frameWrap, actionBar, side);
  root.appendChild(view);

  let state: StateDoc | null = null;
  let selected: number | null = null;
  let inFlight = false;
  let pending: Promise<unknown> = Promise.resolve();

  function track<T>(p: Promise<T>): Promise<T> {
    pending = p.catch(() => undefined);
    return p;
  }

  function fail(err: unknown) {
    if (err instanceof ApiError) showBanner(banners, err.code, err.detail);
    else showBanner(banners, "NETWORK", String(err));
  }

  function updateControls() {
    const ready =
      state !== null &&
      !state.done &&
      !inFlight &&
      selected !== null &&
      explanation.value.trim() !== "";
    submit.disabled = !ready;
    finishConfirm.disabled = inFlight;
  }

  function select(id: number) {
    selected = id;
    for (const node of view.querySelectorAll(".hotspot, .action-btn")) {
      node.classList.toggle(
        "selected",
        Number((node as HTMLElement).dataset.action) === id,
      );
    }
    updateControls();
  }

  function render(doc: StateDoc) {
    state = doc;
    selected = null;
    frame.src = frameUrl(doc.frame_png);
    counter.textContent = String(doc.step_index);
    eventChip.textContent = doc.event ?? "";
    target.textContent = doc.target_object
      ? `target: ${doc.target_object}`
      : "";
    episodic.textContent = doc.episodic_text;

    overlay.replaceChildren();
    actionBar.replaceChildren();
    if (doc.setup === "tpv") {
      // hotspots are drawn from the label coordinates the API sent; the
      // PNG itself is untouched
      const clickable = new Set(doc.action_ids);
      for (const kp of doc.keypoints) {
        if (!clickable.has(kp.id)) continue;
        const spot = el("div", "hotspot");
        spot.dataset.action = String(kp.id);
        spot.style.left = `${kp.u - HIT_RADIUS_PX}px`;
        spot.style.top = `${kp.v - HIT_RADIUS_PX}px`;
        spot.style.width = spot.style.height = `${2 * HIT_RADIUS_PX}px`;
        overlay.appendChild(spot);
      }
    } else {
      // ten buttons laid out on a half circle, mirroring the on-frame
      // glyph fan
      doc.action_ids.forEach((id, i) => {
        const btn = el("button", "action-btn", String(id));
        btn.dataset.action = String(id);
        const angle = Math.PI * (i / (doc.action_ids.length - 1 || 1));
        btn.style.transform =
          `translate(${(-Math.cos(angle) * 120).toFixed(1)}px, ` +
          `${(-Math.sin(angle) * 48).toFixed(1)}px)`;
        btn.addEventListener("click", () => select(id));
        actionBar.appendChild(btn);
      });
    }
    updateControls();
  }

  overlay.addEventListener("click", (ev) => {
    if (!state || state.setup !== "tpv") return;
    const rect = overlay.getBoundingClientRect();
    const clickable = new Set(state.action_ids);
    const hit = hitTest(
      state.keypoints.filter((kp) => clickable.has(kp.id)),
      ev.clientX - rect.left,
      ev.clientY - rect.top,
    );
    if (hit !== null) select(hit);
  });

  explanation.addEventListener("input", updateControls);

  submit.addEventListener("click", () => {
    if (submit.disabled || selected === null) return;
    const action = selected;
    const text = explanation.value.trim();
    inFlight = true;
    // optimistic: count the step now, reconcile from the reply
    counter.textContent = String(Number(counter.textContent) + 1);
    updateControls();
    track(
      deps
        .demoStep(action, text)
        .then((reply) => {
          explanation.value = "";
          render(reply.state);
          eventChip.textContent = reply.event;
        })
        .catch((err) => {
          if (state) counter.textContent = String(state.step_index);
          fail(err);
        })
        .finally(() => {
          inFlight = false;
          updateControls();
        }),
    );
  });

  finishOpen.addEventListener("click", () => {
    dialog.hidden = false;
    finishNote.textContent = "";
  });
  finishCancel.addEventListener("click", () => {
    dialog.hidden = true;
  });
  finishConfirm.addEventListener("click", () => {
    const name = targetInput.value.trim();
    if (!name) {
      finishNote.textContent = "target object is required";
      return;
    }
    inFlight = true;
    updateControls();
    track(
      deps
        .demoFinish(name)
        .then((reply) => {
          dialog.hidden = true;
          targetInput.value = "";
          showBanner(
            banners,
            "SAVED",
            `${reply.episode_id}: ${reply.n_samples} samples, ` +
              `memory now ${reply.memory_count}`,
          );
          return deps.getState().then(render);
        })
        .catch(fail)
        .finally(() => {
          inFlight = false;
          updateControls();
        }),
    );
  });

  track(deps.getState().then(render).catch(fail));
  return { element: view, settled: () => pending };
}
