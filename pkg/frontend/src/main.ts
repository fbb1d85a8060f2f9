/** Browser shell: sliders, canvas layers, dose panel, feedback buttons. */

import { PlannerApi } from "./api.js";
import { SessionController } from "./controller.js";
import { REGION_IDS, ViewState } from "./state.js";
import { buildScene, paint, Canvas2DLike, Overlay } from "./renderer.js";

const METRIC_LABELS = [
  "Eyebrows Asym.", "Eyes Asym.", "Furrow", "Outer Eyebr.-Nose",
  "Mouth Angle", "Total Asym.",
];

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function renderDosePanel(state: ViewState): void {
  el<HTMLElement>("residual").textContent = state.residual.toExponential(2);
  const rows = state.dose.map((v, i) => `<tr><td>${i}</td><td>${v.toFixed(2)} U</td></tr>`);
  el<HTMLElement>("dose-table").innerHTML = rows.join("");
  const metricRows = state.metrics.map(
    (v, i) => `<tr><td>${METRIC_LABELS[i]}</td><td>${v.toFixed(4)}</td>`
      + `<td>${state.sourceMetrics[i].toFixed(4)}</td></tr>`,
  );
  el<HTMLElement>("metric-table").innerHTML = metricRows.join("");
  el<HTMLElement>("status").textContent = state.pending
    ? "updating…"
    : state.error ?? "idle";
}

function renderCanvas(state: ViewState, overlay: Overlay): void {
  const canvas = el<HTMLCanvasElement>("face-canvas");
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const scene = buildScene(state.beforeLandmarks, state.afterLandmarks, state.rois, overlay);
  paint(ctx as unknown as Canvas2DLike, scene);
}

export async function boot(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const base = params.get("api") ?? "http://127.0.0.1:8420";
  const patientId = params.get("patient");
  const sessionId = params.get("session");
  const api = new PlannerApi(base);

  const controller = sessionId
    ? await SessionController.reload(api, sessionId)
    : await (async () => {
        if (!patientId) throw new Error("pass ?patient=<id> or ?session=<id>");
        const snapshot = await api.createSession(patientId);
        return new SessionController(api, snapshot);
      })();

  const sliderBox = el<HTMLElement>("sliders");
  REGION_IDS.forEach((region, i) => {
    const wrap = document.createElement("label");
    wrap.textContent = region;
    const input = document.createElement("input");
    input.type = "range";
    input.min = "-0.5";
    input.max = "1.5";
    input.step = "0.01";
    input.value = String(controller.state.sliders[i]);
    input.addEventListener("change", () => {
      controller.commitSlider(region, Number(input.value));
    });
    wrap.appendChild(input);
    sliderBox.appendChild(wrap);
  });

  const overlaySelect = el<HTMLSelectElement>("overlay");
  const redraw = (state: ViewState) => {
    renderDosePanel(state);
    renderCanvas(state, overlaySelect.value as Overlay);
  };
  overlaySelect.addEventListener("change", () => redraw(controller.state));
  controller.onChange(redraw);
  redraw(controller.state);

  el<HTMLButtonElement>("accept").addEventListener("click", () => {
    void controller.submitFeedback(true, "accepted from planner UI");
  });
  el<HTMLButtonElement>("reject").addEventListener("click", () => {
    void controller.submitFeedback(false, "rejected from planner UI");
  });
  el<HTMLButtonElement>("retry").addEventListener("click", () => controller.retry());
}

if (typeof window !== "undefined" && typeof document !== "undefined") {
  window.addEventListener("DOMContentLoaded", () => {
    void boot();
  });
}
