// Editor state: slider values, debounced edit synchronization, and the
// view payload. The service accumulates edit deltas per session, so this
// store sends (target - lastSent) for one changed component at a time,
// keeps at most one request in flight, and discards responses that a newer
// slider change has superseded.

import type { RenderPayload, ServiceClient } from "./api.js";

export type SliderKey = `${number}:${number}:${number}`;

export function sliderKey(cls: number, layer: number, component: number): SliderKey {
  return `${cls}:${layer}:${component}`;
}

export interface EditorView {
  sessionId: string | null;
  seed: number | null;
  image: string | null;
  maskOverlay: string | null;
  coarseMask: string | null;
  baselineImage: string | null;
  busy: boolean;
  settled: boolean;
  error: string | null;
}

interface StoreOptions {
  debounceMs?: number;
  onChange?: () => void;
}

const EPSILON = 1e-9;

export class EditorStore {
  private client: ServiceClient;
  private debounceMs: number;
  private onChange: () => void;

  private session: RenderPayload | null = null;
  private sliders = new Map<SliderKey, number>();
  private sent = new Map<SliderKey, number>();
  private inFlight = false;
  private timer: ReturnType<typeof setTimeout> | null = null;
  private changeCounter = 0;
  private view: EditorView = {
    sessionId: null, seed: null, image: null, maskOverlay: null,
    coarseMask: null, baselineImage: null, busy: false, settled: true,
    error: null,
  };

  constructor(client: ServiceClient, options: StoreOptions = {}) {
    this.client = client;
    this.debounceMs = options.debounceMs ?? 150;
    this.onChange = options.onChange ?? (() => {});
  }

  getView(): EditorView {
    return { ...this.view };
  }

  getSlider(cls: number, layer: number, component: number): number {
    return this.sliders.get(sliderKey(cls, layer, component)) ?? 0;
  }

  async createSession(seed?: number): Promise<void> {
    this.session = await this.client.createSession(seed);
    this.sliders.clear();
    this.sent.clear();
    this.view = {
      sessionId: this.session.session_id,
      seed: this.session.seed,
      image: this.session.image,
      maskOverlay: this.session.mask_overlay,
      coarseMask: this.session.coarse_mask,
      baselineImage: this.session.image,
      busy: false,
      settled: true,
      error: null,
    };
    this.onChange();
  }

  setSlider(cls: number, layer: number, component: number, value: number): void {
    this.sliders.set(sliderKey(cls, layer, component), value);
    this.changeCounter += 1;
    this.view.settled = false;
    this.scheduleSync();
    this.onChange();
  }

  resetPanel(cls: number, layer: number): void {
    for (const key of this.panelKeys(cls, layer)) {
      this.sliders.set(key, 0);
    }
    this.changeCounter += 1;
    this.view.settled = false;
    this.scheduleSync();
    this.onChange();
  }

  private panelKeys(cls: number, layer: number): SliderKey[] {
    const prefix = `${cls}:${layer}:`;
    const keys = new Set<SliderKey>();
    for (const key of this.sliders.keys()) {
      if (key.startsWith(prefix)) keys.add(key);
    }
    for (const key of this.sent.keys()) {
      if (key.startsWith(prefix)) keys.add(key);
    }
    return [...keys];
  }

  private scheduleSync(): void {
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = setTimeout(() => {
      this.timer = null;
      void this.sync();
    }, this.debounceMs);
  }

  private nextDiff(): { key: SliderKey; target: number; delta: number } | null {
    const keys = new Set<SliderKey>([...this.sliders.keys(), ...this.sent.keys()]);
    for (const key of keys) {
      const target = this.sliders.get(key) ?? 0;
      const already = this.sent.get(key) ?? 0;
      if (Math.abs(target - already) > EPSILON) {
        return { key, target, delta: target - already };
      }
    }
    return null;
  }

  private async sync(): Promise<void> {
    if (this.inFlight || this.session === null) return;
    const diff = this.nextDiff();
    if (diff === null) {
      this.view.settled = true;
      this.onChange();
      return;
    }
    const [cls, layer, component] = diff.key.split(":").map(Number);
    const counterAtSend = this.changeCounter;
    this.inFlight = true;
    this.view.busy = true;
    this.onChange();
    try {
      const payload = await this.client.applyEdit(this.session.session_id, {
        class: cls, layer, component, magnitude: diff.delta,
      });
      this.sent.set(diff.key, diff.target);
      this.view.error = null;
      // a newer slider change supersedes this response: discard its render
      if (this.changeCounter === counterAtSend && this.nextDiff() === null) {
        this.view.image = payload.image;
        this.view.maskOverlay = payload.mask_overlay;
        this.view.coarseMask = payload.coarse_mask;
      }
    } catch (err) {
      this.view.error = err instanceof Error ? err.message : String(err);
    } finally {
      this.inFlight = false;
      this.view.busy = false;
    }
    if (this.view.error === null && this.nextDiff() !== null) {
      await this.sync();
    } else {
      this.view.settled = this.nextDiff() === null;
      this.onChange();
    }
  }

  dismissError(): void {
    this.view.error = null;
    this.onChange();
  }
}
