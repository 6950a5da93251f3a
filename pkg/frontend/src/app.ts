/**
 * Browser entry point: wires the pure view model to an SVG fretboard.
 *
 * All decisions (colors, ack gating, timeouts) live in the imported
 * modules; this file only paints state and forwards clicks.
 */

import { LineClient, serviceUrl } from "./client.js";
import { PALETTES, Palette, tileColor } from "./colors.js";
import { TileBox, boardLayout } from "./fretboard.js";
import { Command } from "./protocol.js";
import {
  BoardState,
  applyLine,
  initialState,
  onDisconnect,
  stageCommand,
  tick,
} from "./viewmodel.js";

const SVG_NS = "http://www.w3.org/2000/svg";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  if (text !== undefined) node.textContent = text;
  return node;
}

interface TileNode {
  box: TileBox;
  ellipse: SVGEllipseElement;
}

class App {
  private state: BoardState = initialState();
  private palette: Palette = PALETTES.classic;
  private tiles: TileNode[] = [];
  private client: LineClient;
  private status!: HTMLElement;
  private banner!: HTMLElement;
  private thresholdInput!: HTMLInputElement;
  private recordBtn!: HTMLButtonElement;
  private stopBtn!: HTMLButtonElement;

  constructor(root: HTMLElement) {
    const url = serviceUrl(window.location.search);
    this.buildDom(root, url);
    this.client = new LineClient({
      url,
      onLine: (line, now) => {
        this.state = applyLine(this.state, line, now);
        this.render();
      },
      onDown: () => {
        this.state = onDisconnect(this.state);
        this.render();
      },
    });
    this.client.connect();
    // Drive timeouts (ack expiry, silence detection) at 4 Hz; the 2 s
    // disconnect budget leaves plenty of slack at that rate.
    setInterval(() => {
      this.state = tick(this.state, Date.now());
      this.render();
    }, 250);
  }

  private buildDom(root: HTMLElement, url: string): void {
    this.banner = el("div", { class: "banner", hidden: "hidden" }, "service unreachable, retrying");
    root.appendChild(this.banner);

    const bar = el("div", { class: "controls" });
    this.thresholdInput = el("input", {
      type: "number",
      step: "0.5",
      min: "0",
      max: "25",
      value: "6",
    });
    const setBtn = el("button", {}, "Set threshold");
    setBtn.addEventListener("click", () => {
      const value = Number(this.thresholdInput.value);
      if (Number.isFinite(value)) this.issue({ cmd: "set_threshold", value });
    });
    this.recordBtn = el("button", {}, "Record");
    this.recordBtn.addEventListener("click", () => this.issue({ cmd: "start_recording" }));
    this.stopBtn = el("button", {}, "Stop");
    this.stopBtn.addEventListener("click", () => this.issue({ cmd: "stop_recording" }));
    const paletteBtn = el("button", {}, "Colorblind palette");
    paletteBtn.addEventListener("click", () => {
      const flip = this.palette === PALETTES.classic;
      this.palette = flip ? PALETTES.colorblind : PALETTES.classic;
      paletteBtn.textContent = flip ? "Classic palette" : "Colorblind palette";
      this.render();
    });
    bar.append(this.thresholdInput, setBtn, this.recordBtn, this.stopBtn, paletteBtn);
    root.appendChild(bar);

    this.status = el("div", { class: "status" }, `connecting to ${url}`);
    root.appendChild(this.status);

    root.appendChild(this.buildBoard());
  }

  private buildBoard(): SVGSVGElement {
    const layout = boardLayout();
    const svg = document.createElementNS(SVG_NS, "svg");
    svg.setAttribute("viewBox", `0 0 ${layout.width} ${layout.height}`);
    svg.setAttribute("width", String(layout.width));
    svg.setAttribute("height", String(layout.height));

    const outline = document.createElementNS(SVG_NS, "path");
    outline.setAttribute("d", layout.outline);
    outline.setAttribute("fill", "#2a2018");
    outline.setAttribute("stroke", "#555");
    svg.appendChild(outline);

    for (let i = 1; i < layout.fretY.length; i++) {
      const y = layout.fretY[i]!;
      const half = layout.halfWidthAt(y);
      const wire = document.createElementNS(SVG_NS, "line");
      wire.setAttribute("x1", String(layout.width / 2 - half));
      wire.setAttribute("x2", String(layout.width / 2 + half));
      wire.setAttribute("y1", String(y));
      wire.setAttribute("y2", String(y));
      wire.setAttribute("stroke", i <= 12 ? "#999" : "#444");
      svg.appendChild(wire);
    }

    for (const box of layout.tiles) {
      const ellipse = document.createElementNS(SVG_NS, "ellipse");
      ellipse.setAttribute("cx", String(box.cx));
      ellipse.setAttribute("cy", String(box.cy));
      ellipse.setAttribute("rx", String(box.rx));
      ellipse.setAttribute("ry", String(box.ry));
      ellipse.setAttribute("fill", this.palette.inert);
      const title = document.createElementNS(SVG_NS, "title");
      ellipse.appendChild(title);
      svg.appendChild(ellipse);
      this.tiles.push({ box, ellipse });
    }
    return svg;
  }

  private issue(cmd: Command): void {
    const staged = stageCommand(this.state, cmd, Date.now());
    if (staged === null) return; // control should have been disabled
    if (this.client.send(staged.line)) {
      this.state = staged.state;
      this.render();
    }
  }

  private render(): void {
    const s = this.state;
    this.banner.hidden = s.connection !== "disconnected";

    const threshold = s.threshold ?? 6;
    for (const { box, ellipse } of this.tiles) {
      const force = s.forces[box.index] ?? 0;
      const over = s.over[box.index] ?? false;
      ellipse.setAttribute("fill", tileColor(force, over, threshold, this.palette));
      const title = ellipse.firstChild;
      if (title) title.textContent = `fret ${box.fret} string ${box.string}: ${force.toFixed(2)} N`;
    }

    const bits = [
      s.connection,
      s.mode ? `mode=${s.mode}` : "",
      s.threshold !== null ? `threshold=${s.threshold.toFixed(1)} N` : "",
      s.recording ? `recording${s.recordingPath ? " " + s.recordingPath : ""}` : "",
      `frames=${s.frameCount}`,
      s.errorCount ? `malformed=${s.errorCount}` : "",
      s.heartbeat ? `dropped=${s.heartbeat.dropped} gaps=${s.heartbeat.gaps}` : "",
      s.lastFailure ? `FAILED ${s.lastFailure}` : "",
      s.replayEnded ? "replay ended" : "",
    ];
    this.status.textContent = bits.filter(Boolean).join(" | ");

    this.recordBtn.disabled = s.connection !== "live" || s.recording;
    this.stopBtn.disabled = s.connection !== "live" || !s.recording;
  }
}

new App(document.getElementById("app")!);
