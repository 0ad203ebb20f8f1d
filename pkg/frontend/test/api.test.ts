import { describe, expect, it } from "vitest";

import { AnnotationApi, ApiError, loadDoc, pgmPayload, saveDoc } from "../src/api.js";
import { NUM_CHANNELS } from "../src/channels.js";
import { encodeCmap } from "../src/cmap.js";
import { createDoc, defaultBrush, paintStroke } from "../src/doc.js";

function pgmBytes(width: number, height: number, fill = 7): Uint8Array {
  const header = new TextEncoder().encode(`P5\n${width} ${height}\n255\n`);
  const out = new Uint8Array(header.length + width * height);
  out.set(header, 0);
  out.fill(fill, header.length);
  return out;
}

type Route = (init?: RequestInit) => Response;

function fakeFetch(routes: Record<string, Route>): typeof fetch {
  return (async (input: RequestInfo | URL, init?: RequestInit) => {
    const url = String(input);
    const route = routes[url];
    if (!route) {
      return new Response(JSON.stringify({ error: "not found" }), { status: 404 });
    }
    return route(init);
  }) as typeof fetch;
}

function binary(bytes: Uint8Array): Response {
  return new Response(bytes.slice(), {
    status: 200,
    headers: { "Content-Type": "application/octet-stream" },
  });
}

describe("pgmPayload", () => {
  it("takes the trailing width*height bytes", () => {
    const bytes = pgmBytes(4, 3, 42);
    const payload = pgmPayload(bytes, 4, 3);
    expect(payload.length).toBe(12);
    expect(payload.every((v) => v === 42)).toBe(true);
  });

  it("rejects short buffers", () => {
    expect(() => pgmPayload(new Uint8Array(5), 4, 3)).toThrow(/shorter/);
  });
});

describe("loadDoc", () => {
  it("loads an unlabeled image with all-zero overlays", async () => {
    const api = new AnnotationApi("", fakeFetch({
      "/api/images/scan/meta": () => Response.json({ width: 4, height: 3 }),
      "/api/images/scan/raw": () => binary(pgmBytes(4, 3)),
    }));
    const doc = await loadDoc(api, "scan");
    expect(doc.width).toBe(4);
    for (const plane of doc.overlays) {
      expect(plane.every((v) => v === 0)).toBe(true);
    }
  });

  it("rehydrates a stored label", async () => {
    const planes = Array.from({ length: NUM_CHANNELS }, () => new Uint8Array(12));
    planes[2][5] = 80;
    const api = new AnnotationApi("", fakeFetch({
      "/api/images/scan/meta": () => Response.json({ width: 4, height: 3 }),
      "/api/images/scan/raw": () => binary(pgmBytes(4, 3)),
      "/api/labels/scan": () => binary(encodeCmap(planes, 4, 3)),
    }));
    const doc = await loadDoc(api, "scan");
    expect(doc.overlays[2][5]).toBe(80);
  });
});

describe("saveDoc", () => {
  function paintedDoc() {
    const doc = createDoc("scan", 4, 3, new Uint8Array(12));
    const brush = defaultBrush();
    brush.confidence = 60;
    paintStroke(doc, brush, [{ x: 1, y: 1 }]);
    return doc;
  }

  it("PUTs the serialized map and clears the dirty flag", async () => {
    let sent: Uint8Array | null = null;
    const api = new AnnotationApi("", fakeFetch({
      "/api/labels/scan": (init) => {
        sent = new Uint8Array(init!.body as Uint8Array);
        return Response.json({ revision: 3 });
      },
    }));
    const doc = paintedDoc();
    expect(doc.dirty).toBe(true);
    const revision = await saveDoc(api, doc);
    expect(revision).toBe(3);
    expect(doc.dirty).toBe(false);
    expect(doc.revision).toBe(3);
    expect(sent).not.toBeNull();
    expect(sent!.length).toBe(17 + NUM_CHANNELS * 12);
  });

  it("surfaces the 422 reason verbatim and keeps local state", async () => {
    const api = new AnnotationApi("", fakeFetch({
      "/api/labels/scan": () =>
        new Response(JSON.stringify({ error: "value out of range" }), { status: 422 }),
    }));
    const doc = paintedDoc();
    let caught: ApiError | null = null;
    try {
      await saveDoc(api, doc);
    } catch (err) {
      caught = err as ApiError;
    }
    expect(caught).toBeInstanceOf(ApiError);
    expect(caught!.status).toBe(422);
    expect(caught!.reason).toBe("value out of range");
    expect(doc.dirty).toBe(true);       // local edits kept
    expect(doc.overlays[0][1 * 4 + 1]).toBe(60);
  });

  it("network failure keeps local state", async () => {
    const failing = (async () => {
      throw new TypeError("network down");
    }) as unknown as typeof fetch;
    const api = new AnnotationApi("", failing);
    const doc = paintedDoc();
    await expect(saveDoc(api, doc)).rejects.toThrow(/network down/);
    expect(doc.dirty).toBe(true);
  });
});

describe("listings", () => {
  it("parses image and channel listings", async () => {
    const api = new AnnotationApi("", fakeFetch({
      "/api/images": () =>
        Response.json([{ id: "a", width: 4, height: 3, has_label: false }]),
      "/api/channels": () =>
        Response.json(["sharp_pleura", "fuzzy_pleura", "fascia_band",
                       "a_line", "sub_a_line", "vertical_line"]),
    }));
    const rows = await api.listImages();
    expect(rows[0].id).toBe("a");
    const channels = await api.channels();
    expect(channels.length).toBe(NUM_CHANNELS);
  });
});
