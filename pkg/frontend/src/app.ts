/** Browser bootstrap: canvas stack, toolbar, and event wiring. */

import { AnnotationApi, ApiError, loadDoc, saveDoc } from "./api.js";
import {
  CHANNEL_COLORS,
  CHANNEL_NAMES,
  CONFIDENCE_PALETTE,
  THRESHOLD_LEVELS,
} from "./channels.js";
import {
  BrushState,
  CanvasDoc,
  defaultBrush,
  paintStroke,
  renderOverlayRGBA,
  renderPreviewRGBA,
  setBrushConfidence,
  Point,
} from "./doc.js";

const SCALE = 6; // device pixels per image pixel

class App {
  api = new AnnotationApi("");
  brush: BrushState = defaultBrush();
  doc: CanvasDoc | null = null;
  previewThreshold: number | null = null;
  stroke: Point[] = [];
  painting = false;

  imageList = document.getElementById("images") as HTMLUListElement;
  banner = document.getElementById("banner") as HTMLDivElement;
  baseCanvas = document.getElementById("base") as HTMLCanvasElement;
  overlayCanvas = document.getElementById("overlay") as HTMLCanvasElement;
  toolbar = document.getElementById("toolbar") as HTMLDivElement;

  async start() {
    this.buildToolbar();
    this.overlayCanvas.addEventListener("mousedown", (e) => this.onDown(e));
    this.overlayCanvas.addEventListener("mousemove", (e) => this.onMove(e));
    window.addEventListener("mouseup", () => this.onUp());
    await this.refreshImages();
  }

  notify(text: string, isError = false) {
    this.banner.textContent = text;
    this.banner.className = isError ? "error" : "info";
  }

  async refreshImages() {
    try {
      const rows = await this.api.listImages();
      this.imageList.innerHTML = "";
      for (const row of rows) {
        const item = document.createElement("li");
        item.textContent = `${row.id} (${row.width}x${row.height})` +
          (row.has_label ? " *" : "");
        item.onclick = () => this.open(row.id);
        this.imageList.appendChild(item);
      }
      if (rows.length === 0) {
        this.notify("no images in the data directory");
      }
    } catch (err) {
      this.notify(`cannot list images: ${err}`, true);
    }
  }

  async open(id: string) {
    try {
      this.doc = await loadDoc(this.api, id);
      this.previewThreshold = null;
      this.resizeCanvases();
      this.drawBase();
      this.drawOverlay();
      this.notify(`editing ${id}`);
    } catch (err) {
      this.notify(`cannot load ${id}: ${err}`, true);
    }
  }

  resizeCanvases() {
    if (!this.doc) return;
    for (const canvas of [this.baseCanvas, this.overlayCanvas]) {
      canvas.width = this.doc.width;
      canvas.height = this.doc.height;
      canvas.style.width = `${this.doc.width * SCALE}px`;
      canvas.style.height = `${this.doc.height * SCALE}px`;
    }
  }

  drawBase() {
    if (!this.doc) return;
    const ctx = this.baseCanvas.getContext("2d")!;
    const rgba = new Uint8ClampedArray(this.doc.width * this.doc.height * 4);
    this.doc.background.forEach((v, i) => {
      rgba[i * 4] = rgba[i * 4 + 1] = rgba[i * 4 + 2] = v;
      rgba[i * 4 + 3] = 255;
    });
    ctx.putImageData(new ImageData(rgba, this.doc.width, this.doc.height), 0, 0);
  }

  drawOverlay() {
    if (!this.doc) return;
    const ctx = this.overlayCanvas.getContext("2d")!;
    const rgba = this.previewThreshold === null
      ? renderOverlayRGBA(this.doc)
      : renderPreviewRGBA(this.doc, this.previewThreshold);
    ctx.putImageData(new ImageData(rgba, this.doc.width, this.doc.height), 0, 0);
  }

  canvasPoint(e: MouseEvent): Point {
    const rect = this.overlayCanvas.getBoundingClientRect();
    return {
      x: (e.clientX - rect.left) / SCALE,
      y: (e.clientY - rect.top) / SCALE,
    };
  }

  onDown(e: MouseEvent) {
    if (!this.doc || this.previewThreshold !== null) return;
    this.painting = true;
    this.stroke = [this.canvasPoint(e)];
  }

  onMove(e: MouseEvent) {
    if (!this.painting || !this.doc) return;
    this.stroke.push(this.canvasPoint(e));
    paintStroke(this.doc, this.brush, this.stroke.slice(-2));
    this.drawOverlay();
  }

  onUp() {
    if (!this.painting || !this.doc) return;
    paintStroke(this.doc, this.brush, this.stroke);
    this.painting = false;
    this.stroke = [];
    this.drawOverlay();
  }

  async save() {
    if (!this.doc) return;
    try {
      const revision = await saveDoc(this.api, this.doc);
      this.notify(`saved ${this.doc.imageId} (revision ${revision})`);
      await this.refreshImages();
    } catch (err) {
      if (err instanceof ApiError) {
        this.notify(`save rejected: ${err.reason}`, true);
      } else {
        this.notify(`save failed, local edits kept: ${err}`, true);
      }
    }
  }

  buildToolbar() {
    const channelBox = document.createElement("div");
    channelBox.className = "group";
    CHANNEL_NAMES.forEach((name, idx) => {
      const btn = document.createElement("button");
      btn.textContent = name;
      const [r, g, b] = CHANNEL_COLORS[idx];
      btn.style.borderColor = `rgb(${r},${g},${b})`;
      btn.onclick = () => {
        this.brush.channel = idx;
        this.markActive(channelBox, btn);
      };
      if (idx === 0) btn.classList.add("active");
      channelBox.appendChild(btn);
    });

    const confBox = document.createElement("div");
    confBox.className = "group";
    for (const level of CONFIDENCE_PALETTE) {
      const btn = document.createElement("button");
      btn.textContent = `${level}%`;
      btn.onclick = () => {
        setBrushConfidence(this.brush, level);
        this.brush.mode = "paint";
        this.markActive(confBox, btn);
      };
      if (level === 100) btn.classList.add("active");
      confBox.appendChild(btn);
    }
    const erase = document.createElement("button");
    erase.textContent = "erase";
    erase.onclick = () => {
      this.brush.mode = "erase";
      this.markActive(confBox, erase);
    };
    confBox.appendChild(erase);

    const radius = document.createElement("input");
    radius.type = "range";
    radius.min = "1";
    radius.max = "10";
    radius.value = String(this.brush.radius);
    radius.oninput = () => {
      this.brush.radius = Number(radius.value);
    };

    const preview = document.createElement("select");
    const off = document.createElement("option");
    off.value = "";
    off.textContent = "preview off";
    preview.appendChild(off);
    for (const t of THRESHOLD_LEVELS) {
      const opt = document.createElement("option");
      opt.value = String(t);
      opt.textContent = `threshold ${t === 0 ? "> 0" : ">= " + t}${t === 100 ? " (= 100)" : ""}`;
      preview.appendChild(opt);
    }
    preview.onchange = () => {
      this.previewThreshold = preview.value === "" ? null : Number(preview.value);
      this.drawOverlay();
    };

    const save = document.createElement("button");
    save.textContent = "save";
    save.onclick = () => void this.save();

    this.toolbar.append(channelBox, confBox, radius, preview, save);
  }

  markActive(group: HTMLElement, active: HTMLElement) {
    group.querySelectorAll("button").forEach((b) => b.classList.remove("active"));
    active.classList.add("active");
  }
}

new App().start();
