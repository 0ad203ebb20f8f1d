/** HTTP client for the annotation service, fetch injectable for tests. */

import { decodeCmap } from "./cmap.js";
import { CanvasDoc, createDoc, serializeDoc } from "./doc.js";
import { NUM_CHANNELS } from "./channels.js";

export interface ImageInfo {
  id: string;
  width: number;
  height: number;
  has_label: boolean;
}

export class ApiError extends Error {
  constructor(public status: number, public reason: string) {
    super(`HTTP ${status}: ${reason}`);
  }
}

async function errorReason(resp: Response): Promise<string> {
  try {
    const doc = await resp.json();
    return typeof doc.error === "string" ? doc.error : resp.statusText;
  } catch {
    return resp.statusText;
  }
}

export class AnnotationApi {
  constructor(
    private base: string = "",
    private fetchFn: typeof fetch = globalThis.fetch.bind(globalThis),
  ) {}

  private async get(path: string): Promise<Response> {
    const resp = await this.fetchFn(this.base + path);
    if (!resp.ok) {
      throw new ApiError(resp.status, await errorReason(resp));
    }
    return resp;
  }

  async listImages(): Promise<ImageInfo[]> {
    return (await this.get("/api/images")).json();
  }

  async channels(): Promise<string[]> {
    return (await this.get("/api/channels")).json();
  }

  async imageMeta(id: string): Promise<{ width: number; height: number }> {
    return (await this.get(`/api/images/${id}/meta`)).json();
  }

  async imageRaw(id: string): Promise<Uint8Array> {
    const resp = await this.get(`/api/images/${id}/raw`);
    return new Uint8Array(await resp.arrayBuffer());
  }

  /** The stored label bytes, or null when the image is unlabeled. */
  async getLabel(id: string): Promise<Uint8Array | null> {
    const resp = await this.fetchFn(`${this.base}/api/labels/${id}`);
    if (resp.status === 404) return null;
    if (!resp.ok) {
      throw new ApiError(resp.status, await errorReason(resp));
    }
    return new Uint8Array(await resp.arrayBuffer());
  }

  /** Persist label bytes; resolves to the new revision. */
  async putLabel(id: string, bytes: Uint8Array): Promise<number> {
    const resp = await this.fetchFn(`${this.base}/api/labels/${id}`, {
      method: "PUT",
      headers: { "Content-Type": "application/octet-stream" },
      body: bytes.slice(),  // fresh ArrayBuffer keeps BodyInit happy
    });
    if (!resp.ok) {
      throw new ApiError(resp.status, await errorReason(resp));
    }
    const doc = await resp.json();
    return doc.revision as number;
  }
}

/** Extract the greyscale payload from a binary PGM using known dimensions
 * (the meta endpoint supplies them, so the header is never re-parsed). */
export function pgmPayload(bytes: Uint8Array, width: number, height: number): Uint8Array {
  const size = width * height;
  if (bytes.length < size) {
    throw new Error(`pgm payload shorter than ${size} bytes`);
  }
  return bytes.slice(bytes.length - size);
}

/** Fetch an image (and its label, if any) into a fresh document. */
export async function loadDoc(api: AnnotationApi, id: string): Promise<CanvasDoc> {
  const meta = await api.imageMeta(id);
  const raw = await api.imageRaw(id);
  const doc = createDoc(id, meta.width, meta.height,
                        pgmPayload(raw, meta.width, meta.height));
  const label = await api.getLabel(id);
  if (label !== null) {
    const decoded = decodeCmap(label);
    if (decoded.width !== meta.width || decoded.height !== meta.height) {
      throw new Error("stored label does not match image dimensions");
    }
    for (let c = 0; c < NUM_CHANNELS; c++) {
      doc.overlays[c].set(decoded.planes[c]);
    }
  }
  return doc;
}

/** Serialize and PUT the document; clears the dirty flag on success and
 * leaves local state untouched on failure. */
export async function saveDoc(api: AnnotationApi, doc: CanvasDoc): Promise<number> {
  const revision = await api.putLabel(doc.imageId, serializeDoc(doc));
  doc.dirty = false;
  doc.revision = revision;
  return revision;
}
