/** Binary .cmap serialization, byte-identical to the backend writer.
 *
 * Layout: "CMAP" | version u8 = 1 | width u32 LE | height u32 LE |
 * channels u32 LE = 6 | payload channels*height*width bytes (0..100,
 * channel-major, row-major within a channel).
 */

import { NUM_CHANNELS } from "./channels.js";

export const CMAP_MAGIC = [0x43, 0x4d, 0x41, 0x50]; // "CMAP"
export const CMAP_VERSION = 1;
export const CMAP_HEADER_SIZE = 17;

export interface DecodedCmap {
  width: number;
  height: number;
  /** One Uint8Array of length width*height per channel. */
  planes: Uint8Array[];
}

export class CmapFormatError extends Error {}

export function encodeCmap(planes: Uint8Array[], width: number, height: number): Uint8Array {
  if (planes.length !== NUM_CHANNELS) {
    throw new CmapFormatError(`expected ${NUM_CHANNELS} planes, got ${planes.length}`);
  }
  const planeSize = width * height;
  const out = new Uint8Array(CMAP_HEADER_SIZE + NUM_CHANNELS * planeSize);
  const view = new DataView(out.buffer);
  out.set(CMAP_MAGIC, 0);
  view.setUint8(4, CMAP_VERSION);
  view.setUint32(5, width, true);
  view.setUint32(9, height, true);
  view.setUint32(13, NUM_CHANNELS, true);
  planes.forEach((plane, c) => {
    if (plane.length !== planeSize) {
      throw new CmapFormatError(`plane ${c} has ${plane.length} bytes, expected ${planeSize}`);
    }
    for (const v of plane) {
      if (v > 100) {
        throw new CmapFormatError(`confidence value ${v} out of range`);
      }
    }
    out.set(plane, CMAP_HEADER_SIZE + c * planeSize);
  });
  return out;
}

export function decodeCmap(bytes: Uint8Array): DecodedCmap {
  if (bytes.length < CMAP_HEADER_SIZE) {
    throw new CmapFormatError("truncated cmap header");
  }
  for (let i = 0; i < 4; i++) {
    if (bytes[i] !== CMAP_MAGIC[i]) {
      throw new CmapFormatError("bad cmap magic");
    }
  }
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  const version = view.getUint8(4);
  if (version !== CMAP_VERSION) {
    throw new CmapFormatError(`unsupported cmap version ${version}`);
  }
  const width = view.getUint32(5, true);
  const height = view.getUint32(9, true);
  const channels = view.getUint32(13, true);
  if (channels !== NUM_CHANNELS) {
    throw new CmapFormatError(`expected ${NUM_CHANNELS} channels, got ${channels}`);
  }
  const planeSize = width * height;
  if (bytes.length < CMAP_HEADER_SIZE + channels * planeSize) {
    throw new CmapFormatError("truncated cmap payload");
  }
  const planes: Uint8Array[] = [];
  for (let c = 0; c < channels; c++) {
    const start = CMAP_HEADER_SIZE + c * planeSize;
    const plane = bytes.slice(start, start + planeSize);
    for (const v of plane) {
      if (v > 100) {
        throw new CmapFormatError(`confidence value ${v} out of range`);
      }
    }
    planes.push(plane);
  }
  return { width, height, planes };
}
