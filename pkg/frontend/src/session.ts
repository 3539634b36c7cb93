/**
 * Session state: the loaded source image, the three overlay layers, and an
 * append-only history of submitted (request, response) pairs.
 */

import { LayerBitmap } from "./layers.js";
import { bytesToBase64, encodeGrayPNG, encodeRGBPNG } from "./png.js";

export interface InpaintRequestBody {
  image: string;
  mask: string;
  edge_hint?: string;
  seg_hint?: string;
  seed?: number;
}

export interface InpaintResponseBody {
  result: string;
  raw: string;
  timings_ms: Record<string, number>;
}

export interface HistoryEntry {
  request: InpaintRequestBody;
  response: InpaintResponseBody;
  /** true iff every unmasked pixel of the result equals the source */
  matched: boolean;
}

export class SubmitBlocked extends Error {}

export class CanvasSession {
  readonly width: number;
  readonly height: number;
  /** RGB bytes, 3 per pixel; never mutated after construction. */
  readonly source: Uint8Array;
  readonly mask: LayerBitmap;
  readonly edge: LayerBitmap;
  readonly seg: LayerBitmap;
  allKnown = false; // explicit opt-in for an empty mask submit
  private readonly entries: HistoryEntry[] = [];

  constructor(width: number, height: number, sourceRGB: Uint8Array) {
    if (sourceRGB.length !== width * height * 3) {
      throw new Error(`source buffer ${sourceRGB.length} != ${width}x${height}x3`);
    }
    this.width = width;
    this.height = height;
    this.source = sourceRGB;
    this.mask = new LayerBitmap(width, height);
    this.edge = new LayerBitmap(width, height);
    this.seg = new LayerBitmap(width, height);
  }

  get history(): readonly HistoryEntry[] {
    return this.entries;
  }

  /**
   * Serialize the layers into a request body. Empty hint layers are
   * omitted (the server treats absent hints as zero matrices). Throws
   * SubmitBlocked when the mask is empty without the explicit all-known
   * flag, or when any layer dimension drifted from the source.
   */
  exportLayers(seed?: number): InpaintRequestBody {
    for (const [name, layer] of [
      ["mask", this.mask],
      ["edge", this.edge],
      ["seg", this.seg],
    ] as const) {
      if (layer.width !== this.width || layer.height !== this.height) {
        throw new SubmitBlocked(
          `${name} layer is ${layer.width}x${layer.height}, source is ${this.width}x${this.height}`
        );
      }
    }
    if (this.mask.isEmpty() && !this.allKnown) {
      throw new SubmitBlocked("mask is empty; brush a region or mark the image all-known");
    }
    const body: InpaintRequestBody = {
      image: bytesToBase64(encodeRGBPNG(this.width, this.height, this.source)),
      mask: bytesToBase64(encodeGrayPNG(this.width, this.height, this.mask.data)),
    };
    if (!this.edge.isEmpty()) {
      body.edge_hint = bytesToBase64(encodeGrayPNG(this.width, this.height, this.edge.data));
    }
    if (!this.seg.isEmpty()) {
      body.seg_hint = bytesToBase64(encodeGrayPNG(this.width, this.height, this.seg.data));
    }
    if (seed !== undefined) {
      body.seed = seed;
    }
    return body;
  }

  recordResult(
    request: InpaintRequestBody,
    response: InpaintResponseBody,
    matched: boolean
  ): HistoryEntry {
    const entry = { request, response, matched };
    this.entries.push(entry);
    return entry;
  }
}

/**
 * The green-badge predicate: every pixel the mask marks as known must be
 * byte-identical between the source and the returned composite.
 */
export function unmaskedPixelsEqual(
  source: Uint8Array,
  result: Uint8Array,
  mask: Uint8Array
): boolean {
  if (source.length !== result.length || source.length !== mask.length * 3) {
    return false;
  }
  for (let i = 0; i < mask.length; i++) {
    if (mask[i] !== 0) continue;
    if (
      source[3 * i] !== result[3 * i] ||
      source[3 * i + 1] !== result[3 * i + 1] ||
      source[3 * i + 2] !== result[3 * i + 2]
    ) {
      return false;
    }
  }
  return true;
}
