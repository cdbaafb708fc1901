// DOM wiring: class selector, shape/texture layer toggle, direction
// sliders with a +-3 sigma range, mask overlay toggle, and error banners.

import type { DirectionEntry, DirectionList, ServiceClient } from "./api.js";
import { EditorStore } from "./editState.js";

const SHAPE_LAYER = 5;
const TEXTURE_LAYER = 9;

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K, className?: string, text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text) node.textContent = text;
  return node;
}

export class EditorApp {
  private store: EditorStore;
  private client: ServiceClient;
  private root: HTMLElement;
  private directions: DirectionList | null = null;
  private currentClass = 0;
  private currentLayer: number = SHAPE_LAYER;
  private showOverlay = false;

  private imageEl = el("img", "scene-image");
  private overlayEl = el("img", "scene-overlay");
  private classSelect = el("select", "class-select");
  private layerToggle = el("div", "layer-toggle");
  private sliderBox = el("div", "sliders");
  private banner = el("div", "banner hidden");

  constructor(root: HTMLElement, client: ServiceClient) {
    this.root = root;
    this.client = client;
    this.store = new EditorStore(client, { onChange: () => this.renderView() });
  }

  async start(seed?: number): Promise<void> {
    this.buildSkeleton();
    try {
      this.directions = await this.client.listDirections();
      await this.store.createSession(seed);
    } catch (err) {
      this.showBanner(err instanceof Error ? err.message : String(err));
      return;
    }
    this.populateClassSelect();
    this.renderSliders();
    this.renderView();
  }

  private buildSkeleton(): void {
    const stage = el("div", "stage");
    stage.append(this.imageEl, this.overlayEl);
    this.overlayEl.style.display = "none";

    const overlayLabel = el("label", "overlay-toggle");
    const overlayBox = el("input");
    overlayBox.type = "checkbox";
    overlayBox.addEventListener("change", () => {
      this.showOverlay = overlayBox.checked;
      this.renderView();
    });
    overlayLabel.append(overlayBox, document.createTextNode(" mask overlay"));

    const newSceneButton = el("button", "new-scene", "new scene");
    newSceneButton.addEventListener("click", () => {
      void this.store.createSession().then(() => this.renderSliders());
    });

    const resetButton = el("button", "reset", "reset");
    resetButton.addEventListener("click", () => {
      this.store.resetPanel(this.currentClass, this.currentLayer);
      this.renderSliders();
    });

    this.classSelect.addEventListener("change", () => {
      this.currentClass = Number(this.classSelect.value);
      this.renderSliders();
    });

    for (const [label, layer] of [["shape", SHAPE_LAYER], ["texture", TEXTURE_LAYER]] as const) {
      const button = el("button", `layer-${label}`, label);
      button.addEventListener("click", () => {
        this.currentLayer = layer;
        this.renderSliders();
      });
      this.layerToggle.append(button);
    }

    const controls = el("div", "controls");
    controls.append(this.classSelect, this.layerToggle, this.sliderBox,
                    resetButton, newSceneButton, overlayLabel);
    this.root.append(this.banner, stage, controls);
  }

  private populateClassSelect(): void {
    const classes = [...new Set((this.directions?.entries ?? []).map((e) => e.class))];
    classes.sort((a, b) => a - b);
    this.classSelect.replaceChildren();
    for (const cls of classes) {
      const option = el("option", undefined, `class ${cls}`);
      option.value = String(cls);
      this.classSelect.append(option);
    }
    this.currentClass = classes[0] ?? 0;
  }

  private currentEntry(): DirectionEntry | undefined {
    return this.directions?.entries.find(
      (e) => e.class === this.currentClass && e.layer === this.currentLayer,
    );
  }

  private renderSliders(): void {
    this.sliderBox.replaceChildren();
    const entry = this.currentEntry();
    if (!entry) return;
    entry.variances.forEach((variance, component) => {
      const sigma = Math.sqrt(Math.max(variance, 0));
      const bound = 3 * sigma;
      const row = el("div", "slider-row");
      const slider = el("input");
      slider.type = "range";
      slider.min = String(-bound);
      slider.max = String(bound);
      slider.step = String(bound / 100 || 0.01);
      slider.value = String(
        this.store.getSlider(this.currentClass, this.currentLayer, component),
      );
      slider.addEventListener("input", () => {
        this.store.setSlider(
          this.currentClass, this.currentLayer, component, Number(slider.value),
        );
      });
      row.append(el("span", "slider-label", `dir ${component}`), slider);
      this.sliderBox.append(row);
    });
  }

  private showBanner(message: string): void {
    this.banner.textContent = message;
    this.banner.className = "banner";
    const dismiss = el("button", "dismiss", "x");
    dismiss.addEventListener("click", () => {
      this.banner.className = "banner hidden";
      this.store.dismissError();
    });
    this.banner.append(dismiss);
  }

  private renderView(): void {
    const view = this.store.getView();
    if (view.image) this.imageEl.src = `data:image/png;base64,${view.image}`;
    if (view.maskOverlay) this.overlayEl.src = `data:image/png;base64,${view.maskOverlay}`;
    this.overlayEl.style.display = this.showOverlay ? "block" : "none";
    if (view.error) {
      this.showBanner(view.error);
    } else {
      this.banner.className = "banner hidden";
    }
  }
}
