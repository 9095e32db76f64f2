// DOM wiring for the composer: asset palette, placement list with gizmo
// nudges, rubric editor, debounced server previews, save, and eval jobs.

import { ComposerApi, PlacementDoc, RubricDoc, RubricStepDoc } from "./api.js";
import { SceneDraftStore } from "./state.js";
import { GizmoMode, applyDrag, identityPose } from "./gizmo.js";

const PREVIEW_DEBOUNCE_MS = 250;

export class ComposerApp {
  readonly store: SceneDraftStore;
  private previewTimer: number | null = null;
  private previewAbort: AbortController | null = null;
  private previewCamera = "external";

  constructor(
    private readonly api: ComposerApi,
    private readonly root: Document,
  ) {
    this.store = new SceneDraftStore(api);
    this.store.onChange(() => {
      this.renderPlacementList();
      this.renderRubric();
      this.schedulePreview();
    });
  }

  private el<T extends HTMLElement>(id: string): T {
    const node = this.root.getElementById(id);
    if (!node) throw new Error(`missing element #${id}`);
    return node as T;
  }

  async start(): Promise<void> {
    this.el<HTMLButtonElement>("open-btn").addEventListener("click", () => void this.openScene());
    this.el<HTMLButtonElement>("save-btn").addEventListener("click", () => void this.saveScene());
    this.el<HTMLButtonElement>("undo-btn").addEventListener("click", () => void this.undo());
    this.el<HTMLButtonElement>("add-step-btn").addEventListener("click", () => this.addRubricStepRow());
    this.el<HTMLButtonElement>("apply-rubric-btn").addEventListener("click", () => void this.applyRubric());
    this.el<HTMLSelectElement>("preview-camera").addEventListener("change", (ev) => {
      this.previewCamera = (ev.target as HTMLSelectElement).value;
      this.schedulePreview();
    });
    for (const mode of ["translate-xy", "translate-z", "yaw"] as GizmoMode[]) {
      this.el<HTMLButtonElement>(`nudge-${mode}`).addEventListener("click", () => void this.nudge(mode));
    }
    await this.loadAssets();
  }

  async openScene(): Promise<void> {
    const descriptor = this.el<HTMLInputElement>("descriptor-path").value;
    await this.store.open(descriptor);
    const cams = (this.store.draft.cameras ?? []).map((c) => c.name);
    const select = this.el<HTMLSelectElement>("preview-camera");
    select.innerHTML = "";
    for (const name of cams) {
      const opt = this.root.createElement("option");
      opt.value = name;
      opt.textContent = name;
      select.appendChild(opt);
    }
    this.setStatus(`session ${this.store.session} open (v${this.store.version})`);
  }

  async loadAssets(): Promise<void> {
    const list = this.el<HTMLUListElement>("asset-list");
    list.innerHTML = "";
    let assets;
    try {
      assets = await this.api.assets();
    } catch {
      this.setStatus("service unreachable; open a scene once the server is up");
      return;
    }
    for (const asset of assets) {
      const li = this.root.createElement("li");
      const img = this.root.createElement("img");
      img.src = this.api.baseUrl + asset.thumbnail;
      img.width = 48;
      img.height = 48;
      const btn = this.root.createElement("button");
      btn.textContent = `place ${asset.id}`;
      btn.addEventListener("click", () => void this.placeAsset(asset.id));
      li.appendChild(img);
      li.appendChild(btn);
      list.appendChild(li);
    }
  }

  async placeAsset(assetId: string): Promise<void> {
    const n = this.store.placements().length;
    const placement: PlacementDoc = {
      asset: assetId,
      instance: `${assetId}_ui${n + 1}`,
      pose: identityPose(),
    };
    placement.pose[11] = 0.02; // drop new objects just above the table
    await this.store.addPlacement(placement, crypto.randomUUID());
    this.store.select(placement.instance ?? null);
    this.setStatus(`placed ${placement.instance}`);
  }

  async nudge(mode: GizmoMode): Promise<void> {
    const instance = this.store.selection;
    if (!instance) {
      this.setStatus("select a placement first");
      return;
    }
    const placement = this.store.findPlacement(instance);
    if (!placement) return;
    const step = Number(this.el<HTMLInputElement>("nudge-step").value || "0.01");
    const updated: PlacementDoc = {
      ...placement,
      pose: applyDrag({ mode, startPose: placement.pose, metersPerPixel: step }, 1, 1),
    };
    await this.store.updatePlacement(updated);
    this.setStatus(`${mode} ${instance} by ${step} m`);
  }

  renderPlacementList(): void {
    const list = this.el<HTMLUListElement>("placement-list");
    list.innerHTML = "";
    for (const p of this.store.placements()) {
      const li = this.root.createElement("li");
      const btn = this.root.createElement("button");
      const [x, y, z] = [p.pose[3], p.pose[7], p.pose[11]];
      btn.textContent = `${p.instance ?? p.asset} @ (${x.toFixed(3)}, ${y.toFixed(3)}, ${z.toFixed(3)})`;
      if (p.instance === this.store.selection) btn.classList.add("selected");
      btn.addEventListener("click", () => {
        this.store.select(p.instance ?? null);
        this.renderPlacementList();
      });
      const rm = this.root.createElement("button");
      rm.textContent = "remove";
      rm.addEventListener("click", () => void this.store.removePlacement(p.instance ?? ""));
      li.appendChild(btn);
      li.appendChild(rm);
      list.appendChild(li);
    }
  }

  // --- rubric editing ---------------------------------------------------

  addRubricStepRow(step?: RubricStepDoc): void {
    const rows = this.el<HTMLTableSectionElement>("rubric-rows");
    const tr = this.root.createElement("tr");
    tr.innerHTML = `
      <td><input class="step-desc" value="${step?.description ?? ""}" placeholder="description"></td>
      <td><input class="step-kind" value="${step?.kind ?? "reached"}" placeholder="kind"></td>
      <td><input class="step-params" value='${step ? JSON.stringify(step.params) : "{}"}'></td>
      <td class="step-error"></td>
      <td><button class="step-up">up</button><button class="step-down">down</button>
          <button class="step-del">x</button></td>`;
    tr.querySelector(".step-del")!.addEventListener("click", () => tr.remove());
    tr.querySelector(".step-up")!.addEventListener("click", () => {
      if (tr.previousElementSibling) rows.insertBefore(tr, tr.previousElementSibling);
    });
    tr.querySelector(".step-down")!.addEventListener("click", () => {
      if (tr.nextElementSibling) rows.insertBefore(tr.nextElementSibling, tr);
    });
    rows.appendChild(tr);
  }

  readRubricFromDom(): RubricDoc {
    const steps: RubricStepDoc[] = [];
    for (const tr of Array.from(this.el<HTMLTableSectionElement>("rubric-rows").children)) {
      const desc = (tr.querySelector(".step-desc") as HTMLInputElement).value;
      const kind = (tr.querySelector(".step-kind") as HTMLInputElement).value;
      const paramsRaw = (tr.querySelector(".step-params") as HTMLInputElement).value;
      steps.push({ description: desc, kind, params: JSON.parse(paramsRaw || "{}") });
    }
    return {
      task: this.el<HTMLInputElement>("rubric-task").value,
      instruction: this.el<HTMLInputElement>("rubric-instruction").value,
      steps,
    };
  }

  async applyRubric(): Promise<void> {
    const rubric = this.readRubricFromDom();
    const problems = await this.store.validateRubric(rubric);
    const rows = Array.from(this.el<HTMLTableSectionElement>("rubric-rows").children);
    rows.forEach((tr) => ((tr.querySelector(".step-error") as HTMLElement).textContent = ""));
    if (problems.length) {
      // inline per-step errors, and no POST happens
      for (const problem of problems) {
        const match = problem.match(/^step (\d+)/);
        const idx = match ? Number(match[1]) - 1 : 0;
        const cell = rows[idx]?.querySelector(".step-error") as HTMLElement | undefined;
        if (cell) cell.textContent = problem;
      }
      this.setStatus(`rubric not posted: ${problems.length} problem(s)`);
      return;
    }
    await this.store.setRubric(rubric);
    this.setStatus("rubric updated");
  }

  renderRubric(): void {
    const rubric = this.store.draft.rubric;
    if (!rubric) return;
    this.el<HTMLInputElement>("rubric-task").value = rubric.task;
    this.el<HTMLInputElement>("rubric-instruction").value = rubric.instruction;
    const rows = this.el<HTMLTableSectionElement>("rubric-rows");
    rows.innerHTML = "";
    for (const step of rubric.steps) this.addRubricStepRow(step);
  }

  // --- previews and persistence -------------------------------------------

  schedulePreview(): void {
    if (!this.store.session) return;
    if (this.previewTimer !== null) clearTimeout(this.previewTimer);
    this.previewTimer = setTimeout(() => void this.refreshPreview(), PREVIEW_DEBOUNCE_MS) as unknown as number;
  }

  async refreshPreview(): Promise<void> {
    this.previewAbort?.abort();
    this.previewAbort = new AbortController();
    try {
      const blob = await this.api.preview(this.store.session, this.previewCamera, this.previewAbort.signal);
      const img = this.el<HTMLImageElement>("preview-img");
      const url = URL.createObjectURL(blob);
      img.onload = () => URL.revokeObjectURL(url);
      img.src = url;
    } catch (err) {
      if ((err as Error).name !== "AbortError") {
        this.setStatus(`preview failed: ${(err as Error).message}`);
      }
    }
  }

  async saveScene(): Promise<void> {
    const path = this.el<HTMLInputElement>("save-path").value;
    const digest = await this.store.save(path);
    this.setStatus(`saved ${path} (${digest.slice(0, 12)}…)`);
  }

  async undo(): Promise<void> {
    await this.store.undo();
    this.setStatus("undone");
  }

  setStatus(text: string): void {
    this.el<HTMLElement>("status").textContent = text;
  }
}
