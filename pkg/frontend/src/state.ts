/**
 * View state for one planning session.
 *
 * The state is a pure function of the last session snapshot and the last
 * *completed* adjust response: every request carries a monotone sequence
 * number and stale responses are discarded, so a late response can never
 * clobber a newer one (last writer wins by sequence, not by arrival).
 */

import type { AdjustResponse, Roi, SessionSnapshot } from "./api.js";

export const ALPHA_MIN = -0.5;
export const ALPHA_MAX = 1.5;
export const REGION_IDS = ["brow_L", "brow_R", "eye_L", "eye_R", "mouth_L", "mouth_R"];

export interface ViewState {
  sessionId: string;
  patientId: string;
  sliders: number[]; // 6 alpha values, clamped
  dose: number[]; // 22 units from the last completed adjust
  residual: number;
  metrics: number[];
  sourceMetrics: number[];
  beforeLandmarks: number[][];
  afterLandmarks: number[][];
  rois: Roi[];
  pending: boolean;
  lastAppliedSeq: number;
  error: string | null;
}

export function clampAlpha(value: number): number {
  return Math.min(ALPHA_MAX, Math.max(ALPHA_MIN, value));
}

export function fromSnapshot(snapshot: SessionSnapshot): ViewState {
  return {
    sessionId: snapshot.session_id,
    patientId: snapshot.patient_id,
    sliders: snapshot.alpha.map(clampAlpha),
    dose: [...snapshot.dose],
    residual: snapshot.residual ?? 0,
    metrics: [...snapshot.metrics],
    sourceMetrics: [...snapshot.m_src],
    beforeLandmarks: snapshot.source_landmarks,
    afterLandmarks: snapshot.landmarks,
    rois: snapshot.rois,
    pending: false,
    lastAppliedSeq: 0,
    error: null,
  };
}

export function setSlider(state: ViewState, region: number, value: number): ViewState {
  const sliders = [...state.sliders];
  sliders[region] = clampAlpha(value);
  return { ...state, sliders };
}

/**
 * Apply an adjust response if it is newer than everything applied so far.
 * Dose panel and after-layer update atomically; stale responses are no-ops.
 */
export function applyAdjust(
  state: ViewState,
  seq: number,
  response: AdjustResponse,
  inflightSeq: number,
): ViewState {
  if (seq <= state.lastAppliedSeq) {
    return state;
  }
  return {
    ...state,
    dose: [...response.dose_estimate],
    residual: response.residual,
    metrics: [...response.metrics],
    afterLandmarks: response.landmarks,
    lastAppliedSeq: seq,
    pending: inflightSeq > seq,
    error: null,
  };
}

/** A rejected commit snaps the sliders back to the last applied alpha. */
export function snapBack(state: ViewState, alpha: number[], message: string): ViewState {
  return { ...state, sliders: [...alpha], pending: false, error: message };
}

export function withError(state: ViewState, message: string): ViewState {
  return { ...state, pending: false, error: message };
}
