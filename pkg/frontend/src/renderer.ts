/**
 * Landmark scene renderer.
 *
 * Rendering is split in two: `buildScene` turns a payload into a
 * deterministic list of primitives (testable without a browser), and
 * `paint` draws a scene onto anything implementing the small Canvas2D
 * subset below. A pixel-generator adapter can later replace the point
 * renderer behind the same interface.
 */

import type { Roi } from "./api.js";

export type Overlay = "before" | "after" | "both";

export interface ScenePoint {
  kind: "point";
  x: number;
  y: number;
  radius: number;
  color: string;
}

export interface SceneRect {
  kind: "rect";
  x0: number;
  y0: number;
  x1: number;
  y1: number;
  color: string;
  label: string;
}

export interface SceneBanner {
  kind: "banner";
  text: string;
}

export type SceneNode = ScenePoint | SceneRect | SceneBanner;

export interface Scene {
  nodes: SceneNode[];
  width: number;
  height: number;
}

export interface Canvas2DLike {
  fillStyle: string;
  strokeStyle: string;
  clearRect(x: number, y: number, w: number, h: number): void;
  beginPath(): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  fill(): void;
  strokeRect(x: number, y: number, w: number, h: number): void;
  fillRect(x: number, y: number, w: number, h: number): void;
  fillText(text: string, x: number, y: number): void;
}

const BEFORE_COLOR = "#8a8a8a";
const AFTER_COLOR = "#1668b8";
const ROI_COLOR = "#3aa05a";
const N_LANDMARKS = 468;

function validLandmarks(points: number[][] | undefined): points is number[][] {
  return (
    Array.isArray(points)
    && points.length === N_LANDMARKS
    && points.every((p) => Array.isArray(p) && p.length === 2
      && Number.isFinite(p[0]) && Number.isFinite(p[1]))
  );
}

export function buildScene(
  before: number[][] | undefined,
  after: number[][] | undefined,
  rois: Roi[],
  overlay: Overlay,
  size = 256,
): Scene {
  const nodes: SceneNode[] = [];
  const needBefore = overlay === "before" || overlay === "both";
  const needAfter = overlay === "after" || overlay === "both";
  if ((needBefore && !validLandmarks(before)) || (needAfter && !validLandmarks(after))) {
    return {
      nodes: [{ kind: "banner", text: `malformed landmark payload (expected ${N_LANDMARKS} points)` }],
      width: size,
      height: size,
    };
  }
  for (const roi of rois) {
    nodes.push({
      kind: "rect",
      x0: roi.rect[0],
      y0: roi.rect[1],
      x1: roi.rect[2],
      y1: roi.rect[3],
      color: ROI_COLOR,
      label: roi.region_id,
    });
  }
  if (needBefore && before) {
    for (const [x, y] of before) {
      nodes.push({ kind: "point", x, y, radius: 1.2, color: BEFORE_COLOR });
    }
  }
  if (needAfter && after) {
    for (const [x, y] of after) {
      nodes.push({ kind: "point", x, y, radius: 1.6, color: AFTER_COLOR });
    }
  }
  return { nodes, width: size, height: size };
}

export function paint(ctx: Canvas2DLike, scene: Scene): void {
  ctx.clearRect(0, 0, scene.width, scene.height);
  for (const node of scene.nodes) {
    if (node.kind === "rect") {
      ctx.strokeStyle = node.color;
      ctx.strokeRect(node.x0, node.y0, node.x1 - node.x0, node.y1 - node.y0);
    } else if (node.kind === "point") {
      ctx.fillStyle = node.color;
      ctx.beginPath();
      ctx.arc(node.x, node.y, node.radius, 0, Math.PI * 2);
      ctx.fill();
    } else {
      ctx.fillStyle = "#b00020";
      ctx.fillRect(0, 0, scene.width, 24);
      ctx.fillStyle = "#ffffff";
      ctx.fillText(node.text, 8, 16);
    }
  }
}
