/**
 * Core console logic, free of DOM dependencies.
 *
 * The console is a pure presentation of service responses: hits are
 * rendered in the exact order the service returned them, distances are
 * shown raw to four decimals, and nothing here re-ranks, filters, or
 * re-scores.  All rendering decisions live in this module as plain
 * string/array transformations so they can be tested without a browser;
 * app.ts only wires them to elements.
 */

export interface Hit {
  id: string;
  distance: number;
  rank: number;
  doc: string;
  code: string;
}

export interface SearchSuccess {
  kind: "success";
  hits: Hit[];
  latencyMs: number;
}

export interface SearchFailure {
  kind: "failure";
  message: string;
}

export type SearchOutcome = SearchSuccess | SearchFailure;

/** Structural subset of fetch/Response, so tests can inject fakes. */
export interface ResponseLike {
  status: number;
  json(): Promise<unknown>;
}

export interface SearchRequestInit {
  method: string;
  headers: Record<string, string>;
  body: string;
}

export type FetchLike = (url: string, init: SearchRequestInit) => Promise<ResponseLike>;

export const DEFAULT_BASE_URL = "http://127.0.0.1:8080";
export const DEFAULT_RESULT_COUNT = 10;
export const MAX_RESULT_COUNT = 100;

export interface SessionOptions {
  baseUrl?: string;
  fetchImpl?: FetchLike;
  now?: () => number;
}

/**
 * One user's search flow against the service.
 *
 * At most one in-flight request is honored: each search takes a fresh
 * sequence number, and an outcome is delivered only if no newer search
 * started while it was in flight (latest wins, stale resolves to null).
 */
export class SearchSession {
  private readonly fetchImpl: FetchLike;
  private readonly now: () => number;
  private requestCounter = 0;
  private base: string;

  constructor(options: SessionOptions = {}) {
    this.base = normalizeBaseUrl(options.baseUrl ?? DEFAULT_BASE_URL);
    this.fetchImpl = options.fetchImpl ?? defaultFetch;
    this.now = options.now ?? (() => Date.now());
  }

  get baseUrl(): string {
    return this.base;
  }

  setBaseUrl(url: string): void {
    this.base = normalizeBaseUrl(url);
  }

  /** POST the query; resolves null when a newer search superseded this one. */
  async search(text: string, n: number): Promise<SearchOutcome | null> {
    const requestId = ++this.requestCounter;
    const started = this.now();
    let outcome: SearchOutcome;
    try {
      const response = await this.fetchImpl(`${this.base}/search`, {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ query: text, n }),
      });
      const body: unknown = await response.json().catch(() => undefined);
      if (response.status === 200) {
        const hits = parseHits(body);
        outcome =
          hits === null
            ? { kind: "failure", message: "malformed response from service" }
            : { kind: "success", hits, latencyMs: this.now() - started };
      } else {
        outcome = { kind: "failure", message: errorMessage(body, response.status) };
      }
    } catch (err) {
      outcome = { kind: "failure", message: `request failed: ${describeError(err)}` };
    }
    return requestId === this.requestCounter ? outcome : null;
  }

  /** GET /health; returns the advertised corpus size or a failure message. */
  async health(): Promise<{ ok: true; corpusSize: number } | { ok: false; message: string }> {
    try {
      const response = await this.fetchImpl(`${this.base}/health`, {
        method: "GET",
        headers: {},
        body: "",
      });
      const body: unknown = await response.json().catch(() => undefined);
      if (response.status !== 200 || typeof body !== "object" || body === null) {
        return { ok: false, message: `service returned status ${response.status}` };
      }
      const size = (body as { corpus_size?: unknown }).corpus_size;
      return typeof size === "number"
        ? { ok: true, corpusSize: size }
        : { ok: false, message: "malformed health response" };
    } catch (err) {
      return { ok: false, message: `service unreachable: ${describeError(err)}` };
    }
  }
}

function defaultFetch(url: string, init: SearchRequestInit): Promise<ResponseLike> {
  const options =
    init.method === "GET" ? { method: init.method } : { method: init.method, headers: init.headers, body: init.body };
  return fetch(url, options);
}

export function normalizeBaseUrl(url: string): string {
  const trimmed = url.trim();
  return trimmed.endsWith("/") ? trimmed.replace(/\/+$/, "") : trimmed;
}

/**
 * Validate a /search response body, preserving hit order exactly as
 * received.  Returns null if the shape is wrong anywhere.
 */
export function parseHits(body: unknown): Hit[] | null {
  if (typeof body !== "object" || body === null) {
    return null;
  }
  const hits = (body as { hits?: unknown }).hits;
  if (!Array.isArray(hits)) {
    return null;
  }
  const parsed: Hit[] = [];
  for (const raw of hits) {
    const hit = parseHit(raw);
    if (hit === null) {
      return null;
    }
    parsed.push(hit);
  }
  return parsed;
}

function parseHit(raw: unknown): Hit | null {
  if (typeof raw !== "object" || raw === null) {
    return null;
  }
  const record = raw as Record<string, unknown>;
  const id = record["id"];
  const distance = record["distance"];
  const rank = record["rank"];
  const doc = record["doc"];
  const code = record["code"];
  if (typeof id !== "string" || typeof doc !== "string" || typeof code !== "string") {
    return null;
  }
  if (typeof distance !== "number" || !Number.isFinite(distance)) {
    return null;
  }
  if (typeof rank !== "number" || !Number.isInteger(rank) || rank < 1) {
    return null;
  }
  return { id, distance, rank, doc, code };
}

/** The server's own error string when present, else a status fallback. */
export function errorMessage(body: unknown, status: number): string {
  if (typeof body === "object" && body !== null) {
    const err = (body as { error?: unknown }).error;
    if (typeof err === "string" && err.length > 0) {
      return err;
    }
  }
  return `service returned status ${status}`;
}

function describeError(err: unknown): string {
  return err instanceof Error ? err.message : String(err);
}

export function formatDistance(distance: number): string {
  return distance.toFixed(4);
}

export function formatLatency(latencyMs: number): string {
  return `${Math.max(0, Math.round(latencyMs))} ms`;
}

export function canSubmit(text: string): boolean {
  return text.trim().length > 0;
}

export function canCopy(code: string): boolean {
  return code.length > 0;
}

/** Coerce a result-count input into the valid 1..max range. */
export function clampResultCount(value: number, maxN: number = MAX_RESULT_COUNT): number {
  if (!Number.isFinite(value)) {
    return DEFAULT_RESULT_COUNT;
  }
  return Math.min(maxN, Math.max(1, Math.trunc(value)));
}

export type SegmentKind = "keyword" | "string" | "comment" | "number" | "plain";

export interface Segment {
  text: string;
  kind: SegmentKind;
}

const KEYWORDS = new Set([
  "and", "as", "assert", "async", "await", "break", "class", "const",
  "continue", "def", "del", "elif", "else", "except", "export", "False",
  "finally", "for", "from", "function", "global", "if", "import", "in",
  "is", "lambda", "let", "new", "None", "nonlocal", "not", "null", "or",
  "pass", "raise", "return", "this", "True", "try", "var", "while",
  "with", "yield",
]);

const TOKEN_PATTERN =
  "(#[^\\n]*|//[^\\n]*)" +
  "|(\"\"\"[\\s\\S]*?\"\"\"|'''[\\s\\S]*?'''|\"(?:\\\\.|[^\"\\\\\\n])*\"|'(?:\\\\.|[^'\\\\\\n])*')" +
  "|(\\b\\d+(?:\\.\\d+)?\\b)" +
  "|([A-Za-z_][A-Za-z0-9_]*)";

/**
 * Split code into classified segments for display.  Lossless by
 * construction: concatenating segment texts reproduces the input byte
 * for byte, so highlighting can never alter what copy_snippet copies.
 */
export function highlightCode(code: string): Segment[] {
  const segments: Segment[] = [];
  const push = (kind: SegmentKind, text: string): void => {
    if (text.length === 0) {
      return;
    }
    const last = segments[segments.length - 1];
    if (last !== undefined && last.kind === kind) {
      last.text += text;
    } else {
      segments.push({ text, kind });
    }
  };
  const pattern = new RegExp(TOKEN_PATTERN, "g");
  let cursor = 0;
  for (let match = pattern.exec(code); match !== null; match = pattern.exec(code)) {
    push("plain", code.slice(cursor, match.index));
    const full = match[0] ?? "";
    const [, comment, str, num, word] = match;
    if (comment !== undefined) {
      push("comment", full);
    } else if (str !== undefined) {
      push("string", full);
    } else if (num !== undefined) {
      push("number", full);
    } else {
      push(word !== undefined && KEYWORDS.has(word) ? "keyword" : "plain", full);
    }
    cursor = match.index + full.length;
  }
  push("plain", code.slice(cursor));
  return segments;
}

const HTML_ESCAPES: Record<string, string> = {
  "&": "&amp;",
  "<": "&lt;",
  ">": "&gt;",
  '"': "&quot;",
  "'": "&#39;",
};

export function escapeHtml(text: string): string {
  return text.replace(/[&<>"']/g, (ch) => HTML_ESCAPES[ch] ?? ch);
}

export function renderCodeHtml(code: string): string {
  return highlightCode(code)
    .map((seg) =>
      seg.kind === "plain"
        ? escapeHtml(seg.text)
        : `<span class="tok-${seg.kind}">${escapeHtml(seg.text)}</span>`,
    )
    .join("");
}

export function renderHitCardHtml(hit: Hit, index: number): string {
  const copyDisabled = canCopy(hit.code) ? "" : " disabled";
  return (
    `<article class="hit" data-id="${escapeHtml(hit.id)}">` +
    `<header class="hit-header">` +
    `<span class="hit-rank">#${hit.rank}</span>` +
    `<span class="hit-id">${escapeHtml(hit.id)}</span>` +
    `<span class="hit-distance">distance ${formatDistance(hit.distance)}</span>` +
    `<button type="button" class="copy-button" data-index="${index}"${copyDisabled}>copy</button>` +
    `</header>` +
    `<p class="hit-doc">${escapeHtml(hit.doc)}</p>` +
    `<pre class="hit-code"><code>${renderCodeHtml(hit.code)}</code></pre>` +
    `</article>`
  );
}

/** Cards in response order; the console never re-sorts or filters. */
export function renderResultsHtml(hits: Hit[]): string {
  return hits.map((hit, index) => renderHitCardHtml(hit, index)).join("");
}
