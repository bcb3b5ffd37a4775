import { mountMonitor } from "./monitor.js";
import { mountRecorder } from "./recorder.js";

function mount(page: string) {
  const host = document.getElementById("app");
  if (!host) return;
  host.replaceChildren();
  if (page === "monitor") mountMonitor(host);
  else mountRecorder(host);
}

for (const tab of document.querySelectorAll<HTMLElement>("[data-page]")) {
  tab.addEventListener("click", () => mount(tab.dataset.page ?? ""));
}

mount(new URLSearchParams(location.search).get("page") ?? "recorder");
