// Tiny element helpers; the app is plain DOM, no framework.

export function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className = "",
  text = "",
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text) node.textContent = text;
  return node;
}

/** Dismissible error strip. Every 4xx/5xx the app sees lands here. */
export function showBanner(host: HTMLElement, code: string, detail: string) {
  const banner = el("div", "banner");
  banner.appendChild(el("span", "banner-text", `${code}: ${detail}`));
  const close = el("button", "banner-dismiss", "×");
  close.addEventListener("click", () => banner.remove());
  banner.appendChild(close);
  host.appendChild(banner);
  return banner;
}

export function frameUrl(png_b64: string): string {
  return "data:image/png;base64," + png_b64;
}
