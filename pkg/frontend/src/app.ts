/**
 * DOM wiring for the search console.  All logic that decides what to
 * render lives in core.ts; this file only moves strings between the
 * session and the page.
 */

import {
  DEFAULT_RESULT_COUNT,
  Hit,
  MAX_RESULT_COUNT,
  SearchOutcome,
  SearchSession,
  canCopy,
  canSubmit,
  clampResultCount,
  formatLatency,
  renderResultsHtml,
} from "./core.js";

function element<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (el === null) {
    throw new Error(`missing element #${id}`);
  }
  return el as T;
}

const session = new SearchSession();
let lastHits: Hit[] = [];

const searchForm = element<HTMLFormElement>("search-form");
const queryInput = element<HTMLTextAreaElement>("query");
const countInput = element<HTMLInputElement>("count");
const submitButton = element<HTMLButtonElement>("submit");
const resultsView = element<HTMLDivElement>("results");
const banner = element<HTMLDivElement>("banner");
const bannerText = element<HTMLSpanElement>("banner-text");
const bannerClose = element<HTMLButtonElement>("banner-close");
const latencyView = element<HTMLSpanElement>("latency");
const statusView = element<HTMLSpanElement>("status");
const baseUrlInput = element<HTMLInputElement>("base-url");

function refreshSubmit(): void {
  submitButton.disabled = !canSubmit(queryInput.value);
}

function showBanner(message: string): void {
  bannerText.textContent = message;
  banner.hidden = false;
}

function renderOutcome(outcome: SearchOutcome): void {
  if (outcome.kind === "failure") {
    showBanner(outcome.message);
    return;
  }
  banner.hidden = true;
  lastHits = outcome.hits;
  resultsView.innerHTML = renderResultsHtml(outcome.hits);
  const noun = outcome.hits.length === 1 ? "hit" : "hits";
  latencyView.textContent = `${outcome.hits.length} ${noun} in ${formatLatency(outcome.latencyMs)}`;
}

async function runSearch(): Promise<void> {
  const text = queryInput.value;
  if (!canSubmit(text)) {
    return;
  }
  const n = clampResultCount(Number(countInput.value));
  countInput.value = String(n);
  latencyView.textContent = "searching…";
  const outcome = await session.search(text, n);
  if (outcome === null) {
    return; // superseded by a newer query
  }
  renderOutcome(outcome);
}

async function refreshHealth(): Promise<void> {
  statusView.textContent = "checking service…";
  statusView.classList.remove("status-ok", "status-bad");
  const result = await session.health();
  if (result.ok) {
    statusView.textContent = `${result.corpusSize} snippets indexed`;
    statusView.classList.add("status-ok");
  } else {
    statusView.textContent = result.message;
    statusView.classList.add("status-bad");
  }
}

function copyHit(button: HTMLButtonElement): void {
  const index = Number(button.dataset["index"]);
  const hit = lastHits[index];
  if (hit === undefined || !canCopy(hit.code)) {
    return;
  }
  void navigator.clipboard.writeText(hit.code).then(() => {
    const original = button.textContent;
    button.textContent = "copied";
    button.classList.add("copied");
    window.setTimeout(() => {
      button.textContent = original;
      button.classList.remove("copied");
    }, 1200);
  });
}

searchForm.addEventListener("submit", (event) => {
  event.preventDefault();
  void runSearch();
});
queryInput.addEventListener("input", refreshSubmit);
bannerClose.addEventListener("click", () => {
  banner.hidden = true;
});
baseUrlInput.addEventListener("change", () => {
  session.setBaseUrl(baseUrlInput.value);
  baseUrlInput.value = session.baseUrl;
  void refreshHealth();
});
resultsView.addEventListener("click", (event) => {
  const target = event.target;
  if (target instanceof HTMLButtonElement && target.classList.contains("copy-button")) {
    copyHit(target);
  }
});

countInput.max = String(MAX_RESULT_COUNT);
countInput.value = String(DEFAULT_RESULT_COUNT);
baseUrlInput.value = session.baseUrl;
refreshSubmit();
void refreshHealth();
