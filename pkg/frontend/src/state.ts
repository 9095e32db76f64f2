// Client-side draft store: a mirror of the server session with optimistic
// concurrency. All mutations go through the API; a VersionConflict refreshes
// the local mirror and asks the caller to retry.

import { ComposerApi, DraftDoc, PlacementDoc, RubricDoc, SchemaDoc, VersionConflict } from "./api.js";

export interface DraftListener {
  (draft: DraftDoc, version: number): void;
}

export class SceneDraftStore {
  draft: DraftDoc = {};
  version = 0;
  session = "";
  selection: string | null = null;
  private listeners: DraftListener[] = [];
  private schemaDoc: SchemaDoc | null = null;

  constructor(private readonly api: ComposerApi) {}

  onChange(listener: DraftListener): void {
    this.listeners.push(listener);
  }

  private emit(): void {
    for (const fn of this.listeners) fn(this.draft, this.version);
  }

  async open(descriptor: string): Promise<void> {
    const info = await this.api.openSession(descriptor);
    this.session = info.session;
    this.draft = info.draft;
    this.version = info.version;
    this.emit();
  }

  async refresh(): Promise<void> {
    const info = await this.api.getDraft(this.session);
    this.draft = info.draft;
    this.version = info.version;
    this.emit();
  }

  async schema(): Promise<SchemaDoc> {
    if (!this.schemaDoc) this.schemaDoc = await this.api.schema();
    return this.schemaDoc;
  }

  placements(): PlacementDoc[] {
    return this.draft.placements ?? [];
  }

  findPlacement(instance: string): PlacementDoc | undefined {
    return this.placements().find((p) => p.instance === instance);
  }

  select(instance: string | null): void {
    if (instance !== null && !this.findPlacement(instance)) {
      throw new Error(`selection refers to unknown placement ${instance}`);
    }
    this.selection = instance;
  }

  // One retry after refreshing on a version conflict; a second conflict
  // surfaces to the caller (the UI shows a refresh-and-retry prompt).
  private async withRetry<T>(fn: () => Promise<T>): Promise<T> {
    try {
      return await fn();
    } catch (err) {
      if (err instanceof VersionConflict) {
        await this.refresh();
        return await fn();
      }
      throw err;
    }
  }

  async addPlacement(placement: PlacementDoc, idempotencyKey?: string): Promise<void> {
    await this.withRetry(async () => {
      const out = await this.api.postPlacement(
        this.session, "add", { placement, version: this.version }, idempotencyKey,
      );
      this.version = out.version;
      this.draft.placements = out.placements;
    });
    this.emit();
  }

  async updatePlacement(placement: PlacementDoc): Promise<void> {
    await this.withRetry(async () => {
      const out = await this.api.postPlacement(this.session, "update", {
        placement,
        version: this.version,
      });
      this.version = out.version;
      this.draft.placements = out.placements;
    });
    this.emit();
  }

  async removePlacement(instance: string): Promise<void> {
    await this.withRetry(async () => {
      const out = await this.api.postPlacement(this.session, "remove", {
        instance,
        version: this.version,
      });
      this.version = out.version;
      this.draft.placements = out.placements;
    });
    if (this.selection === instance) this.selection = null;
    this.emit();
  }

  async setRubric(rubric: RubricDoc): Promise<void> {
    const problems = await this.validateRubric(rubric);
    if (problems.length) {
      throw new Error(`rubric invalid: ${problems.join("; ")}`);
    }
    const out = await this.api.postRubric(this.session, rubric);
    this.version = out.version;
    this.draft.rubric = rubric;
    this.emit();
  }

  async undo(): Promise<void> {
    const out = await this.api.undo(this.session);
    this.version = out.version;
    this.draft = out.draft;
    this.emit();
  }

  async save(path: string): Promise<string> {
    const out = await this.api.save(this.session, path);
    return out.content_hash;
  }

  // client-side parameter validation against the served schema; the server
  // remains the authority, this only catches mistakes before any POST
  async validateRubric(rubric: RubricDoc): Promise<string[]> {
    const schema = await this.schema();
    const problems: string[] = [];
    if (!rubric.steps.length) problems.push("rubric needs at least one step");
    rubric.steps.forEach((step, i) => {
      if (!schema.predicate_kinds.includes(step.kind)) {
        problems.push(`step ${i + 1}: unknown predicate kind '${step.kind}'`);
        return;
      }
      for (const key of ["distance", "height", "overlap", "gap", "width"]) {
        const value = step.params[key];
        if (value !== undefined && typeof value === "number" && value <= 0) {
          problems.push(`step ${i + 1}: parameter '${key}' must be positive`);
        }
      }
      const wanted = schema.predicates[step.kind] ?? [];
      for (const name of wanted) {
        if (["overlap", "gap", "width", "distance"].includes(name)) continue; // defaulted server-side
        if (step.params[name] === undefined) {
          problems.push(`step ${i + 1}: missing parameter '${name}'`);
        }
      }
    });
    return problems;
  }

  reorderRubricSteps(from: number, to: number): RubricDoc | null {
    const rubric = this.draft.rubric;
    if (!rubric || from < 0 || from >= rubric.steps.length || to < 0 || to >= rubric.steps.length) {
      return null;
    }
    const steps = rubric.steps.slice();
    const [moved] = steps.splice(from, 1);
    steps.splice(to, 0, moved);
    return { ...rubric, steps };
  }
}
