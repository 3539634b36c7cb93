/**
 * Per-pixel overlay layers. Every edit the user makes lands in one of
 * these bitmaps; the source image itself is never modified.
 */

export class LayerBitmap {
  readonly width: number;
  readonly height: number;
  readonly data: Uint8Array;

  constructor(width: number, height: number, data?: Uint8Array) {
    if (data && data.length !== width * height) {
      throw new Error(`layer buffer ${data.length} != ${width}x${height}`);
    }
    this.width = width;
    this.height = height;
    this.data = data ?? new Uint8Array(width * height);
  }

  clone(): LayerBitmap {
    return new LayerBitmap(this.width, this.height, this.data.slice());
  }

  isEmpty(): boolean {
    return this.data.every((v) => v === 0);
  }

  clear(): void {
    this.data.fill(0);
  }

  equals(other: LayerBitmap): boolean {
    if (other.width !== this.width || other.height !== this.height) return false;
    for (let i = 0; i < this.data.length; i++) {
      if (this.data[i] !== other.data[i]) return false;
    }
    return true;
  }

  /** Fraction of nonzero pixels. */
  coverage(): number {
    let n = 0;
    for (const v of this.data) if (v !== 0) n++;
    return n / this.data.length;
  }

  paintDisc(cx: number, cy: number, radius: number, value: number): void {
    if (radius < 1) throw new Error("brush radius must be >= 1");
    const r2 = radius * radius;
    const x0 = Math.max(0, Math.floor(cx - radius));
    const x1 = Math.min(this.width - 1, Math.ceil(cx + radius));
    const y0 = Math.max(0, Math.floor(cy - radius));
    const y1 = Math.min(this.height - 1, Math.ceil(cy + radius));
    for (let y = y0; y <= y1; y++) {
      for (let x = x0; x <= x1; x++) {
        const dx = x - cx;
        const dy = y - cy;
        if (dx * dx + dy * dy <= r2) {
          this.data[y * this.width + x] = value;
        }
      }
    }
  }

  /** Stamp discs along a segment so fast pointer moves leave no gaps. */
  paintStroke(
    x0: number,
    y0: number,
    x1: number,
    y1: number,
    radius: number,
    value: number
  ): void {
    const dist = Math.hypot(x1 - x0, y1 - y0);
    const steps = Math.max(1, Math.ceil(dist / Math.max(1, radius / 2)));
    for (let i = 0; i <= steps; i++) {
      const t = i / steps;
      this.paintDisc(x0 + (x1 - x0) * t, y0 + (y1 - y0) * t, radius, value);
    }
  }
}

export type BrushMode = "mask" | "edge" | "seg" | "erase";

export interface BrushTool {
  mode: BrushMode;
  radius: number;
  activeLabel: number;
}

export function makeBrush(mode: BrushMode = "mask", radius = 8, activeLabel = 1): BrushTool {
  if (radius < 1) throw new Error("brush radius must be >= 1");
  return { mode, radius, activeLabel };
}

/**
 * Apply one stroke of the active tool to the session layers.
 * Erase clears all three hint layers under the stroke.
 */
export function applyStroke(
  layers: { mask: LayerBitmap; edge: LayerBitmap; seg: LayerBitmap },
  tool: BrushTool,
  x0: number,
  y0: number,
  x1: number,
  y1: number
): void {
  switch (tool.mode) {
    case "mask":
      layers.mask.paintStroke(x0, y0, x1, y1, tool.radius, 255);
      break;
    case "edge":
      layers.edge.paintStroke(x0, y0, x1, y1, tool.radius, 255);
      break;
    case "seg":
      layers.seg.paintStroke(x0, y0, x1, y1, tool.radius, tool.activeLabel);
      break;
    case "erase":
      layers.mask.paintStroke(x0, y0, x1, y1, tool.radius, 0);
      layers.edge.paintStroke(x0, y0, x1, y1, tool.radius, 0);
      layers.seg.paintStroke(x0, y0, x1, y1, tool.radius, 0);
      break;
  }
}
