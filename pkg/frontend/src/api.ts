// Typed client for the composer service HTTP API. The UI never computes
// geometry itself: every preview pixel and every validation verdict comes
// from these endpoints.

export interface PlacementDoc {
  asset: string;
  instance?: string;
  pose: number[]; // 16 floats, row-major 4x4
  randomization?: { x: number[]; y: number[]; z: number[]; yaw: number[] };
}

export interface RubricStepDoc {
  description: string;
  kind: string;
  params: Record<string, unknown>;
}

export interface RubricDoc {
  task: string;
  instruction: string;
  steps: RubricStepDoc[];
}

export interface CameraDoc {
  name: string;
  kind: "external" | "wrist";
  pose?: number[];
  link?: string;
  offset?: number[];
  intrinsics: number[];
  resolution: number[];
}

export interface DraftDoc {
  placements?: PlacementDoc[];
  cameras?: CameraDoc[];
  rubric?: RubricDoc;
  [key: string]: unknown;
}

export interface SessionInfo {
  session: string;
  version: number;
  draft: DraftDoc;
}

export interface SchemaDoc {
  predicates: Record<string, string[]>;
  predicate_kinds: string[];
  endpoints: string[];
}

export interface AssetInfo {
  id: string;
  splats: number;
  bbox: { min: number[]; max: number[] };
  thumbnail: string;
}

export class VersionConflict extends Error {
  constructor(message: string) {
    super(message);
    this.name = "VersionConflict";
  }
}

async function check(resp: Response): Promise<Response> {
  if (resp.status === 409) {
    throw new VersionConflict(await resp.text());
  }
  if (!resp.ok) {
    throw new Error(`HTTP ${resp.status}: ${await resp.text()}`);
  }
  return resp;
}

export class ComposerApi {
  constructor(
    readonly baseUrl: string,
    private readonly fetchFn: typeof fetch = fetch.bind(globalThis),
  ) {}

  private async getJson<T>(path: string): Promise<T> {
    const resp = await check(await this.fetchFn(this.baseUrl + path));
    return (await resp.json()) as T;
  }

  private async postJson<T>(path: string, body: unknown, idempotencyKey?: string): Promise<T> {
    const headers: Record<string, string> = { "Content-Type": "application/json" };
    if (idempotencyKey) headers["Idempotency-Key"] = idempotencyKey;
    const resp = await check(
      await this.fetchFn(this.baseUrl + path, {
        method: "POST",
        headers,
        body: JSON.stringify(body),
      }),
    );
    return (await resp.json()) as T;
  }

  schema(): Promise<SchemaDoc> {
    return this.getJson("/schema");
  }

  assets(): Promise<AssetInfo[]> {
    return this.getJson("/assets");
  }

  openSession(descriptor: string): Promise<SessionInfo> {
    return this.postJson("/session", { descriptor });
  }

  getDraft(session: string): Promise<{ session: string; version: number; draft: DraftDoc; validation: string[] }> {
    return this.getJson(`/scene/${session}`);
  }

  postPlacement(
    session: string,
    op: "add" | "update" | "remove",
    body: { placement?: PlacementDoc; instance?: string; version?: number },
    idempotencyKey?: string,
  ): Promise<{ version: number; placements: PlacementDoc[] }> {
    return this.postJson(`/scene/${session}/placements`, { op, ...body }, idempotencyKey);
  }

  postCamera(session: string, camera: CameraDoc): Promise<{ version: number }> {
    return this.postJson(`/scene/${session}/camera`, camera);
  }

  postRubric(session: string, rubric: RubricDoc): Promise<{ version: number }> {
    return this.postJson(`/scene/${session}/rubric`, rubric);
  }

  undo(session: string): Promise<{ version: number; draft: DraftDoc }> {
    return this.postJson(`/scene/${session}/undo`, {});
  }

  save(session: string, path: string): Promise<{ path: string; content_hash: string }> {
    return this.postJson(`/scene/${session}/save`, { path });
  }

  async preview(session: string, camera: string, signal?: AbortSignal): Promise<Blob> {
    const resp = await check(
      await this.fetchFn(this.baseUrl + "/render/preview", {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ session, camera }),
        signal,
      }),
    );
    return await resp.blob();
  }

  startEval(scene: string, policy: string, episodes: number): Promise<{ job: string }> {
    return this.postJson("/eval/start", { scene, policy, episodes });
  }

  evalStatus(job: string): Promise<{ state: string; completed: number; total: number; error?: string }> {
    return this.getJson(`/eval/${job}/status`);
  }

  jobMetrics(job: string): Promise<{ summary: Record<string, unknown>; scores: number[] }> {
    return this.getJson(`/metrics/${job}`);
  }
}
