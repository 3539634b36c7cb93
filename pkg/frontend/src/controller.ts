/**
 * Submit flow shared by the browser UI and the tests: export the layers,
 * post them, verify the hard constraint on the returned composite, and
 * append to the session history.
 */

import { InpaintClient } from "./api.js";
import {
  CanvasSession,
  HistoryEntry,
  unmaskedPixelsEqual,
} from "./session.js";

export interface DecodedImage {
  width: number;
  height: number;
  data: Uint8Array; // RGB, 3 bytes per pixel
}

export type PngDecoder = (base64: string) => Promise<DecodedImage>;

export async function submitAndCompare(
  session: CanvasSession,
  client: InpaintClient,
  decode: PngDecoder,
  seed?: number
): Promise<HistoryEntry> {
  const request = session.exportLayers(seed);
  const response = await client.inpaint(request);
  const decoded = await decode(response.result);
  const matched =
    decoded.width === session.width &&
    decoded.height === session.height &&
    unmaskedPixelsEqual(session.source, decoded.data, session.mask.data);
  return session.recordResult(request, response, matched);
}
