import type { SessionSnapshot } from "../src/api.js";

export function fakeLandmarks(offset = 0): number[][] {
  const pts: number[][] = [];
  for (let i = 0; i < 468; i++) {
    pts.push([(i % 22) * 10 + offset, Math.floor(i / 22) * 10]);
  }
  return pts;
}

export function fakeSnapshot(): SessionSnapshot {
  return {
    session_id: "s-1",
    patient_id: "p-1",
    alpha: [0, 0, 0, 0, 0, 0],
    dose: new Array(22).fill(0),
    residual: 0,
    m_src: [0.04, 0.05, 0.06, 0.02, 2.0, 0.05],
    metrics: [0.04, 0.05, 0.06, 0.02, 2.0, 0.05],
    source_landmarks: fakeLandmarks(),
    landmarks: fakeLandmarks(1),
    rois: [
      { region_id: "brow_L", rect: [68, 67, 121, 92] },
      { region_id: "brow_R", rect: [135, 67, 188, 92] },
      { region_id: "eye_L", rect: [75, 94.5, 117, 121.5] },
      { region_id: "eye_R", rect: [139, 94.5, 181, 121.5] },
      { region_id: "mouth_L", rect: [92, 124, 126, 183.8] },
      { region_id: "mouth_R", rect: [130, 124, 164, 183.8] },
    ],
    history: [],
  };
}

export function adjustResponse(alpha: number[], tag: number) {
  return {
    session_id: "s-1",
    dose_estimate: new Array(22).fill(tag),
    residual: tag / 1000,
    metrics: alpha.map((a) => 0.05 * (1 - a / 2)),
    landmarks: fakeLandmarks(tag),
  };
}

/** Recording stub for the canvas interface. */
export class FakeContext {
  fillStyle = "";
  strokeStyle = "";
  ops: string[] = [];
  clearRect(x: number, y: number, w: number, h: number) {
    this.ops.push(`clear(${x},${y},${w},${h})`);
  }
  beginPath() {
    this.ops.push("beginPath");
  }
  arc(x: number, y: number, r: number) {
    this.ops.push(`arc(${x},${y},${r})`);
  }
  fill() {
    this.ops.push(`fill:${this.fillStyle}`);
  }
  strokeRect(x: number, y: number, w: number, h: number) {
    this.ops.push(`strokeRect(${x},${y},${w},${h}):${this.strokeStyle}`);
  }
  fillRect(x: number, y: number, w: number, h: number) {
    this.ops.push(`fillRect(${x},${y},${w},${h}):${this.fillStyle}`);
  }
  fillText(text: string, x: number, y: number) {
    this.ops.push(`text(${text})@${x},${y}`);
  }
}
