/** DOM wiring for the guided-inpainting client. */

import { ApiError, InpaintClient } from "./api.js";
import { applyStroke, BrushMode, makeBrush } from "./layers.js";
import { submitAndCompare, DecodedImage } from "./controller.js";
import { base64ToBytes } from "./png.js";
import { CanvasSession, SubmitBlocked } from "./session.js";

const SEG_PALETTE = [
  "#00000000", // label 0 renders transparent
  "#e6194b88",
  "#3cb44488",
  "#ffe11988",
  "#4363d888",
  "#f5821088",
  "#911eb488",
  "#46f0f088",
];

const $ = <T extends HTMLElement>(id: string) => document.getElementById(id) as T;

const client = new InpaintClient("");
let session: CanvasSession | null = null;
let tool = makeBrush("mask", 10, 1);
let pending = false;
let modelResolution = 64;
let numLabels = 1;

function setBanner(text: string, isError: boolean): void {
  const banner = $<HTMLDivElement>("banner");
  banner.textContent = text;
  banner.className = text ? (isError ? "banner error" : "banner info") : "banner hidden";
}

/** Decode a base64 PNG through an offscreen canvas (handles any PNG). */
function canvasDecode(b64: string): Promise<DecodedImage> {
  return new Promise((resolve, reject) => {
    const img = new Image();
    img.onload = () => {
      const canvas = document.createElement("canvas");
      canvas.width = img.naturalWidth;
      canvas.height = img.naturalHeight;
      const ctx = canvas.getContext("2d")!;
      ctx.drawImage(img, 0, 0);
      const rgba = ctx.getImageData(0, 0, canvas.width, canvas.height).data;
      const rgb = new Uint8Array(canvas.width * canvas.height * 3);
      for (let i = 0, j = 0; i < rgba.length; i += 4, j += 3) {
        rgb[j] = rgba[i];
        rgb[j + 1] = rgba[i + 1];
        rgb[j + 2] = rgba[i + 2];
      }
      resolve({ width: canvas.width, height: canvas.height, data: rgb });
    };
    img.onerror = () => reject(new Error("could not decode result image"));
    const bytes = base64ToBytes(b64);
    img.src = URL.createObjectURL(new Blob([bytes.buffer as ArrayBuffer], { type: "image/png" }));
  });
}

function redraw(): void {
  if (!session) return;
  const canvas = $<HTMLCanvasElement>("work");
  const ctx = canvas.getContext("2d")!;
  const { width, height } = session;
  const rgba = new Uint8ClampedArray(width * height * 4);
  for (let i = 0, j = 0; j < rgba.length; i += 3, j += 4) {
    rgba[j] = session.source[i];
    rgba[j + 1] = session.source[i + 1];
    rgba[j + 2] = session.source[i + 2];
    rgba[j + 3] = 255;
  }
  ctx.putImageData(new ImageData(rgba, width, height), 0, 0);
  // overlays: mask red, edge cyan, seg palette
  const overlay = ctx.getImageData(0, 0, width, height);
  for (let p = 0; p < width * height; p++) {
    if (session.mask.data[p]) {
      overlay.data[4 * p] = Math.min(255, overlay.data[4 * p] * 0.4 + 180);
      overlay.data[4 * p + 1] *= 0.4;
      overlay.data[4 * p + 2] *= 0.4;
    }
    if (session.edge.data[p]) {
      overlay.data[4 * p] = 0;
      overlay.data[4 * p + 1] = 220;
      overlay.data[4 * p + 2] = 220;
    }
    const label = session.seg.data[p];
    if (label > 0) {
      const color = SEG_PALETTE[label % SEG_PALETTE.length];
      overlay.data[4 * p] = (overlay.data[4 * p] + parseInt(color.slice(1, 3), 16)) / 2;
      overlay.data[4 * p + 1] = (overlay.data[4 * p + 1] + parseInt(color.slice(3, 5), 16)) / 2;
      overlay.data[4 * p + 2] = (overlay.data[4 * p + 2] + parseInt(color.slice(5, 7), 16)) / 2;
    }
  }
  ctx.putImageData(overlay, 0, 0);
  $<HTMLSpanElement>("coverage").textContent = `mask ${(session.mask.coverage() * 100).toFixed(1)}%`;
}

function canvasPos(ev: PointerEvent): [number, number] {
  const canvas = $<HTMLCanvasElement>("work");
  const rect = canvas.getBoundingClientRect();
  return [
    ((ev.clientX - rect.left) / rect.width) * canvas.width,
    ((ev.clientY - rect.top) / rect.height) * canvas.height,
  ];
}

function wirePainting(): void {
  const canvas = $<HTMLCanvasElement>("work");
  let last: [number, number] | null = null;
  canvas.addEventListener("pointerdown", (ev) => {
    if (!session) return;
    canvas.setPointerCapture(ev.pointerId);
    last = canvasPos(ev);
    applyStroke(session, tool, last[0], last[1], last[0], last[1]);
    redraw();
  });
  canvas.addEventListener("pointermove", (ev) => {
    if (!session || last === null) return;
    const pos = canvasPos(ev);
    applyStroke(session, tool, last[0], last[1], pos[0], pos[1]);
    last = pos;
    redraw();
  });
  canvas.addEventListener("pointerup", () => {
    last = null;
  });
}

async function loadImageFile(file: File): Promise<void> {
  const url = URL.createObjectURL(file);
  const img = new Image();
  await new Promise<void>((resolve, reject) => {
    img.onload = () => resolve();
    img.onerror = () => reject(new Error("could not read the image file"));
    img.src = url;
  });
  const s = modelResolution;
  const canvas = $<HTMLCanvasElement>("work");
  canvas.width = s;
  canvas.height = s;
  const ctx = canvas.getContext("2d")!;
  ctx.drawImage(img, 0, 0, s, s); // client-side resize to the model resolution
  const rgba = ctx.getImageData(0, 0, s, s).data;
  const rgb = new Uint8Array(s * s * 3);
  for (let i = 0, j = 0; i < rgba.length; i += 4, j += 3) {
    rgb[j] = rgba[i];
    rgb[j + 1] = rgba[i + 1];
    rgb[j + 2] = rgba[i + 2];
  }
  session = new CanvasSession(s, s, rgb);
  $<HTMLButtonElement>("submit").disabled = false;
  setBanner("", false);
  redraw();
}

function renderHistory(): void {
  if (!session) return;
  const list = $<HTMLUListElement>("history");
  list.innerHTML = "";
  session.history.forEach((entry, i) => {
    const li = document.createElement("li");
    const badge = entry.matched ? "✓" : "✗";
    li.textContent = `#${i + 1} ${badge} seed=${entry.request.seed ?? "-"} `;
    li.className = entry.matched ? "ok" : "bad";
    const view = document.createElement("button");
    view.textContent = "view";
    view.onclick = () => {
      $<HTMLImageElement>("result").src = "data:image/png;base64," + entry.response.result;
      showBadge(entry.matched);
    };
    li.appendChild(view);
    list.appendChild(li);
  });
}

function showBadge(matched: boolean): void {
  const badge = $<HTMLSpanElement>("badge");
  badge.textContent = matched ? "unmasked pixels preserved" : "composite mismatch";
  badge.className = matched ? "badge ok" : "badge bad";
}

async function onSubmit(): Promise<void> {
  if (!session || pending) return;
  pending = true;
  const btn = $<HTMLButtonElement>("submit");
  btn.disabled = true;
  setBanner("inpainting…", false);
  try {
    const seedRaw = $<HTMLInputElement>("seed").value;
    const seed = seedRaw === "" ? undefined : Number(seedRaw);
    const entry = await submitAndCompare(session, client, canvasDecode, seed);
    $<HTMLImageElement>("result").src = "data:image/png;base64," + entry.response.result;
    showBadge(entry.matched);
    renderHistory();
    setBanner("", false);
  } catch (err) {
    if (err instanceof SubmitBlocked) {
      setBanner(err.message, true);
    } else if (err instanceof ApiError) {
      setBanner(`server error: ${err.message} — session preserved, retry when ready`, true);
    } else {
      setBanner(`request failed: ${(err as Error).message}`, true);
    }
  } finally {
    pending = false;
    btn.disabled = false;
  }
}

function wireControls(): void {
  for (const mode of ["mask", "edge", "seg", "erase"] as BrushMode[]) {
    $<HTMLButtonElement>(`tool-${mode}`).onclick = () => {
      tool = { ...tool, mode };
      document
        .querySelectorAll(".tool")
        .forEach((b) => b.classList.toggle("active", b.id === `tool-${mode}`));
    };
  }
  $<HTMLInputElement>("radius").oninput = (ev) => {
    tool = { ...tool, radius: Number((ev.target as HTMLInputElement).value) };
  };
  $<HTMLSelectElement>("label").onchange = (ev) => {
    tool = { ...tool, activeLabel: Number((ev.target as HTMLSelectElement).value) };
  };
  $<HTMLInputElement>("file").onchange = (ev) => {
    const file = (ev.target as HTMLInputElement).files?.[0];
    if (file) loadImageFile(file).catch((e) => setBanner(e.message, true));
  };
  $<HTMLButtonElement>("submit").onclick = () => void onSubmit();
  $<HTMLButtonElement>("clear").onclick = () => {
    if (!session) return;
    session.mask.clear();
    session.edge.clear();
    session.seg.clear();
    redraw();
  };
}

async function init(): Promise<void> {
  wireControls();
  wirePainting();
  try {
    const health = await client.health();
    modelResolution = health.resolution ?? 64;
    numLabels = health.num_labels ?? 1;
    const label = $<HTMLSelectElement>("label");
    label.innerHTML = "";
    for (let k = 0; k < numLabels; k++) {
      const opt = document.createElement("option");
      opt.value = String(k);
      opt.textContent = `label ${k}`;
      if (k === 1 || numLabels === 1) opt.selected = true;
      label.appendChild(opt);
    }
    setBanner(
      health.status === "ready"
        ? `model ready (${modelResolution}px, ${numLabels} labels)`
        : "service is up but no checkpoint is loaded",
      health.status !== "ready"
    );
  } catch {
    setBanner("inference service unreachable — load it and refresh", true);
  }
}

void init();
