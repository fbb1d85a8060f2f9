/**
 * Session controller: wires slider commits, the adjust round trip, and
 * feedback submission. At most one adjust request is in flight; commits are
 * debounced (150 ms) and responses are applied through sequence-numbered
 * last-writer-wins, so out-of-order arrivals can never regress the panel.
 */

import { ApiError, PlannerApi } from "./api.js";
import { debounce } from "./debounce.js";
import {
  REGION_IDS,
  ViewState,
  applyAdjust,
  fromSnapshot,
  setSlider,
  snapBack,
  withError,
} from "./state.js";

export const COMMIT_DEBOUNCE_MS = 150;

export class SessionController {
  state: ViewState;
  private seq = 0;
  private inflightSeq = 0;
  private lastGoodAlpha: number[];
  private listeners: Array<(s: ViewState) => void> = [];
  private commitDebounced: (alpha: number[]) => void;
  private feedbackCounter = 0;

  constructor(
    private api: PlannerApi,
    snapshot: Parameters<typeof fromSnapshot>[0],
    debounceMs: number = COMMIT_DEBOUNCE_MS,
  ) {
    this.state = fromSnapshot(snapshot);
    this.lastGoodAlpha = [...this.state.sliders];
    this.commitDebounced = debounce((alpha: number[]) => {
      void this.sendAdjust(alpha);
    }, debounceMs);
  }

  onChange(listener: (s: ViewState) => void): void {
    this.listeners.push(listener);
  }

  private update(next: ViewState): void {
    this.state = next;
    for (const listener of this.listeners) listener(next);
  }

  /** Slider moved and released: debounce, then send the full alpha vector. */
  commitSlider(regionId: string, value: number): void {
    const region = REGION_IDS.indexOf(regionId);
    if (region < 0) throw new Error(`unknown region ${regionId}`);
    const next = setSlider(this.state, region, value);
    this.update({ ...next, pending: true });
    this.commitDebounced([...next.sliders]);
  }

  private async sendAdjust(alpha: number[]): Promise<void> {
    const seq = ++this.seq;
    this.inflightSeq = seq;
    try {
      const response = await this.api.adjust(this.state.sessionId, alpha);
      this.update(applyAdjust(this.state, seq, response, this.inflightSeq));
      if (seq === this.inflightSeq) {
        this.lastGoodAlpha = [...alpha];
      }
    } catch (err) {
      if (seq < this.inflightSeq) return; // superseded; ignore quietly
      if (err instanceof ApiError && err.status === 422) {
        this.update(snapBack(this.state, this.lastGoodAlpha, err.body.message));
      } else {
        // network failure: keep the sliders, surface a retry affordance
        this.update(withError(this.state, `request failed: ${String(err)} (retry)`));
      }
    }
  }

  /** Retry affordance: re-send the current slider vector immediately. */
  retry(): void {
    this.update({ ...this.state, pending: true, error: null });
    void this.sendAdjust([...this.state.sliders]);
  }

  async submitFeedback(accepted: boolean, note = ""): Promise<string> {
    this.feedbackCounter += 1;
    const clientRef = `${this.state.sessionId}-fb-${this.feedbackCounter}`;
    const res = await this.api.submitFeedback(this.state.sessionId, {
      u_new: this.state.dose,
      outcome_metrics: this.state.metrics,
      accepted,
      note,
      client_ref: clientRef,
    });
    return res.feedback_id;
  }

  /** Page reload path: rebuild the whole state from the session endpoint. */
  static async reload(api: PlannerApi, sessionId: string): Promise<SessionController> {
    const snapshot = await api.getSession(sessionId);
    return new SessionController(api, snapshot);
  }
}
