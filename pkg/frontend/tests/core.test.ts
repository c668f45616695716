/**
 * Console contract against a mocked service: response-order rendering,
 * the stale-response guard, and error-banner text, plus the pure
 * formatting and highlighting helpers.
 */

import { describe, expect, it } from "vitest";

import {
  DEFAULT_RESULT_COUNT,
  Hit,
  SearchOutcome,
  SearchRequestInit,
  SearchSession,
  canCopy,
  canSubmit,
  clampResultCount,
  errorMessage,
  escapeHtml,
  formatDistance,
  formatLatency,
  highlightCode,
  normalizeBaseUrl,
  parseHits,
  renderCodeHtml,
  renderResultsHtml,
} from "../src/core";

interface Deferred<T> {
  promise: Promise<T>;
  resolve: (value: T) => void;
  reject: (reason: unknown) => void;
}

function deferred<T>(): Deferred<T> {
  let resolve!: (value: T) => void;
  let reject!: (reason: unknown) => void;
  const promise = new Promise<T>((res, rej) => {
    resolve = res;
    reject = rej;
  });
  return { promise, resolve, reject };
}

function jsonResponse(status: number, body: unknown) {
  return { status, json: async () => body };
}

function hit(id: string, distance: number, rank: number): Hit {
  return { id, distance, rank, doc: `doc for ${id}`, code: `code_${id}()` };
}

function hitsBody(hits: Hit[]): unknown {
  return { hits: hits.map((h) => ({ ...h })) };
}

describe("response-order rendering", () => {
  it("keeps hits exactly as the service ordered them", async () => {
    const served = [hit("gamma", 0.9, 1), hit("alpha", 0.1, 2), hit("beta", 0.5, 3)];
    const session = new SearchSession({
      fetchImpl: async () => jsonResponse(200, hitsBody(served)),
    });
    const outcome = await session.search("query", 3);
    expect(outcome).not.toBeNull();
    expect(outcome!.kind).toBe("success");
    const hits = (outcome as { hits: Hit[] }).hits;
    expect(hits.map((h) => h.id)).toEqual(["gamma", "alpha", "beta"]);
    expect(hits.map((h) => h.distance)).toEqual([0.9, 0.1, 0.5]);
  });

  it("renders three mocked hits as three cards in response order", () => {
    const hits = [hit("first", 0.25, 1), hit("second", 0.5, 2), hit("third", 0.75, 3)];
    const html = renderResultsHtml(hits);
    const ids = [...html.matchAll(/data-id="([^"]+)"/g)].map((m) => m[1]);
    expect(ids).toEqual(["first", "second", "third"]);
    expect(html.match(/<article/g)).toHaveLength(3);
    expect(html).toContain("distance 0.2500");
    expect(html).toContain("#2");
  });

  it("parseHits never reorders, even when distances are shuffled", () => {
    const body = hitsBody([hit("z", 0.99, 1), hit("a", 0.01, 2)]);
    const parsed = parseHits(body);
    expect(parsed).not.toBeNull();
    expect(parsed!.map((h) => h.id)).toEqual(["z", "a"]);
  });
});

describe("stale-response guard", () => {
  it("discards a slower earlier response after a newer one resolved", async () => {
    const first = deferred<{ status: number; json(): Promise<unknown> }>();
    const second = deferred<{ status: number; json(): Promise<unknown> }>();
    const pending = [first, second];
    let calls = 0;
    const session = new SearchSession({
      fetchImpl: () => pending[calls++]!.promise,
    });

    const firstSearch = session.search("old query", 5);
    const secondSearch = session.search("new query", 5);

    second.resolve(jsonResponse(200, hitsBody([hit("fresh", 0.1, 1)])));
    const newer = await secondSearch;
    expect(newer).not.toBeNull();
    expect(newer!.kind).toBe("success");

    first.resolve(jsonResponse(200, hitsBody([hit("stale", 0.2, 1)])));
    expect(await firstSearch).toBeNull();
  });

  it("discards the earlier response even if it arrives first", async () => {
    const first = deferred<{ status: number; json(): Promise<unknown> }>();
    const second = deferred<{ status: number; json(): Promise<unknown> }>();
    const pending = [first, second];
    let calls = 0;
    const session = new SearchSession({
      fetchImpl: () => pending[calls++]!.promise,
    });

    const firstSearch = session.search("old", 5);
    const secondSearch = session.search("new", 5);

    first.resolve(jsonResponse(200, hitsBody([hit("stale", 0.2, 1)])));
    expect(await firstSearch).toBeNull();

    second.resolve(jsonResponse(200, hitsBody([hit("fresh", 0.1, 1)])));
    const newer = await secondSearch;
    expect(newer).not.toBeNull();
  });

  it("applies to failures too: a stale error never surfaces", async () => {
    const first = deferred<{ status: number; json(): Promise<unknown> }>();
    const second = deferred<{ status: number; json(): Promise<unknown> }>();
    const pending = [first, second];
    let calls = 0;
    const session = new SearchSession({
      fetchImpl: () => pending[calls++]!.promise,
    });

    const firstSearch = session.search("old", 5);
    const secondSearch = session.search("new", 5);
    first.resolve(jsonResponse(503, { error: "embedder offline" }));
    second.resolve(jsonResponse(200, hitsBody([hit("ok", 0.3, 1)])));
    expect(await firstSearch).toBeNull();
    expect((await secondSearch)!.kind).toBe("success");
  });
});

describe("error banner text", () => {
  it("surfaces the server's error string verbatim", async () => {
    const session = new SearchSession({
      fetchImpl: async () => jsonResponse(422, { error: "query vector has dim 8, index has dim 32" }),
    });
    const outcome = (await session.search("q", 5)) as SearchOutcome;
    expect(outcome.kind).toBe("failure");
    expect((outcome as { message: string }).message).toBe(
      "query vector has dim 8, index has dim 32",
    );
  });

  it("falls back to the status code when the body has no error string", async () => {
    const session = new SearchSession({
      fetchImpl: async () => jsonResponse(500, "not an object"),
    });
    const outcome = (await session.search("q", 5)) as SearchOutcome;
    expect(outcome.kind).toBe("failure");
    expect((outcome as { message: string }).message).toBe("service returned status 500");
  });

  it("reports thrown fetch errors as failures", async () => {
    const session = new SearchSession({
      fetchImpl: async () => {
        throw new Error("connection refused");
      },
    });
    const outcome = (await session.search("q", 5)) as SearchOutcome;
    expect(outcome.kind).toBe("failure");
    expect((outcome as { message: string }).message).toContain("connection refused");
  });

  it("treats malformed success bodies as failures", async () => {
    const bodies: unknown[] = [
      { hits: "nope" },
      { hits: [{ id: "x" }] },
      { hits: [{ ...hit("x", 0.1, 1), distance: "0.1" }] },
      { hits: [{ ...hit("x", 0.1, 0) }] },
      { hits: [{ ...hit("x", Number.NaN, 1) }] },
      [],
      null,
    ];
    for (const body of bodies) {
      const session = new SearchSession({ fetchImpl: async () => jsonResponse(200, body) });
      const outcome = (await session.search("q", 5)) as SearchOutcome;
      expect(outcome.kind, JSON.stringify(body)).toBe("failure");
    }
  });

  it("errorMessage prefers the server string", () => {
    expect(errorMessage({ error: "boom" }, 400)).toBe("boom");
    expect(errorMessage({ error: 7 }, 400)).toBe("service returned status 400");
    expect(errorMessage(undefined, 404)).toBe("service returned status 404");
  });
});

describe("request wiring", () => {
  it("POSTs the documented body to <base>/search", async () => {
    const seen: Array<{ url: string; init: SearchRequestInit }> = [];
    const session = new SearchSession({
      baseUrl: "http://example.test:9999/",
      fetchImpl: async (url, init) => {
        seen.push({ url, init });
        return jsonResponse(200, hitsBody([]));
      },
    });
    await session.search("find a parser", 7);
    expect(seen).toHaveLength(1);
    expect(seen[0]!.url).toBe("http://example.test:9999/search");
    expect(seen[0]!.init.method).toBe("POST");
    expect(seen[0]!.init.headers["content-type"]).toBe("application/json");
    expect(JSON.parse(seen[0]!.init.body)).toEqual({ query: "find a parser", n: 7 });
  });

  it("setBaseUrl normalizes and redirects subsequent requests", async () => {
    const urls: string[] = [];
    const session = new SearchSession({
      fetchImpl: async (url) => {
        urls.push(url);
        return jsonResponse(200, hitsBody([]));
      },
    });
    session.setBaseUrl("  http://other.test:8081// ");
    expect(session.baseUrl).toBe("http://other.test:8081");
    await session.search("q", 1);
    expect(urls[0]).toBe("http://other.test:8081/search");
    expect(normalizeBaseUrl("http://a/")).toBe("http://a");
  });

  it("measures latency with the injected clock", async () => {
    let tick = 1000;
    const session = new SearchSession({
      now: () => tick,
      fetchImpl: async () => {
        tick += 345;
        return jsonResponse(200, hitsBody([hit("x", 0.1, 1)]));
      },
    });
    const outcome = (await session.search("q", 1)) as { latencyMs: number };
    expect(outcome.latencyMs).toBe(345);
  });

  it("reads corpus size from /health", async () => {
    const session = new SearchSession({
      fetchImpl: async (url) =>
        url.endsWith("/health")
          ? jsonResponse(200, { status: "ok", corpus_size: 412, model_dims: [1024, 768] })
          : jsonResponse(404, undefined),
    });
    expect(await session.health()).toEqual({ ok: true, corpusSize: 412 });
  });
});

describe("formatting", () => {
  it("shows distances raw to four decimals", () => {
    expect(formatDistance(0.87654321)).toBe("0.8765");
    expect(formatDistance(2)).toBe("2.0000");
    expect(formatDistance(0)).toBe("0.0000");
    expect(formatDistance(13.00006)).toBe("13.0001");
  });

  it("rounds latency to whole milliseconds", () => {
    expect(formatLatency(345.4)).toBe("345 ms");
    expect(formatLatency(0.2)).toBe("0 ms");
    expect(formatLatency(-5)).toBe("0 ms");
  });

  it("disables submit for empty or whitespace text", () => {
    expect(canSubmit("")).toBe(false);
    expect(canSubmit("   \n\t")).toBe(false);
    expect(canSubmit("parse json")).toBe(true);
  });

  it("disables copy for empty snippets", () => {
    expect(canCopy("")).toBe(false);
    expect(canCopy("x = 1")).toBe(true);
  });

  it("clamps the result count into 1..max", () => {
    expect(clampResultCount(0)).toBe(1);
    expect(clampResultCount(7.9)).toBe(7);
    expect(clampResultCount(1000)).toBe(100);
    expect(clampResultCount(Number.NaN)).toBe(DEFAULT_RESULT_COUNT);
  });
});

describe("syntax highlighting", () => {
  const SNIPPETS = [
    "def parse(tokens):\n    return [t for t in tokens if t]  # keep truthy",
    'message = "quoted \\"inner\\" text" + \'single\'',
    "# only a comment\n",
    "x = 3.14 + 42",
    "async function load() { return null; }",
    "λ = 'unicode';  // trailing comment",
    "'''triple\nquoted\nblock'''",
    "",
    "no_keywords_here(just, plain, calls)",
  ];

  it("is lossless: concatenated segments reproduce the input exactly", () => {
    for (const code of SNIPPETS) {
      const joined = highlightCode(code)
        .map((seg) => seg.text)
        .join("");
      expect(joined).toBe(code);
    }
  });

  it("classifies keywords, strings, comments, and numbers", () => {
    const kinds = new Map(highlightCode("def f():\n    return 42  # answer").map((s) => [s.text, s.kind]));
    expect(kinds.get("def")).toBe("keyword");
    expect(kinds.get("return")).toBe("keyword");
    expect(kinds.get("42")).toBe("number");
    expect(kinds.get("# answer")).toBe("comment");
    const stringSeg = highlightCode('x = "hello"').find((s) => s.kind === "string");
    expect(stringSeg?.text).toBe('"hello"');
  });

  it("does not mark identifiers that merely contain keywords", () => {
    const segs = highlightCode("classify = definite + 1");
    expect(segs.every((s) => s.kind !== "keyword")).toBe(true);
  });

  it("escapes HTML inside rendered code", () => {
    const html = renderCodeHtml('if x < 3: print("<b>&amp;</b>")');
    expect(html).not.toContain("<b>");
    expect(html).toContain("&lt;b&gt;");
    expect(html).toContain('<span class="tok-keyword">if</span>');
  });

  it("escapes hit fields before they reach markup", () => {
    const malicious = hit("x", 0.5, 1);
    malicious.doc = '<img src=x onerror="alert(1)">';
    malicious.id = '"><script>bad()</script>';
    const html = renderResultsHtml([malicious]);
    expect(html).not.toContain("<script>");
    expect(html).not.toContain("<img");
  });
});

describe("escapeHtml", () => {
  it("escapes the five significant characters and nothing else", () => {
    expect(escapeHtml(`&<>"'plain λ`)).toBe("&amp;&lt;&gt;&quot;&#39;plain λ");
  });
});
