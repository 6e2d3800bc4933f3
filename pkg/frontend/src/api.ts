// Typed client for the healthdial service. Every dialogue byte flows through
// the configured base URL and nowhere else.

import type {
  DraftDto,
  EditCommand,
  EditResultDto,
  GenerateResultDto,
  PlanDto,
  PlayDto,
  ProjectDto,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
    public details: unknown[] = [],
  ) {
    super(message);
    this.name = "ApiError";
  }
}

let keyCounter = 0;

/** Idempotency key for a mutating call; retries reuse the same key. */
export function newIdempotencyKey(): string {
  keyCounter += 1;
  return `ui-${Date.now().toString(36)}-${keyCounter}-${Math.random().toString(36).slice(2, 8)}`;
}

/** Client-generated entity id (lowercase alphanumeric plus hyphen, matching
 * the server's id rules) so optimistic updates and the server agree. */
export function newClientId(prefix: string): string {
  let suffix = "";
  for (let i = 0; i < 8; i++) {
    suffix += "0123456789abcdef"[Math.floor(Math.random() * 16)];
  }
  return `${prefix}${suffix}`;
}

export class HealthDialClient {
  constructor(
    private baseUrl: string,
    private token: string = "",
  ) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  private headers(extra: Record<string, string> = {}): Record<string, string> {
    const base: Record<string, string> = { "Content-Type": "application/json", ...extra };
    if (this.token) base["Authorization"] = `Bearer ${this.token}`;
    return base;
  }

  private async request<T>(
    method: string,
    path: string,
    body?: unknown,
    options: { idempotencyKey?: string; raw?: boolean; contentType?: string } = {},
  ): Promise<T> {
    const headers = this.headers(
      options.idempotencyKey ? { "Idempotency-Key": options.idempotencyKey } : {},
    );
    if (options.contentType) headers["Content-Type"] = options.contentType;
    const response = await fetch(`${this.baseUrl}${path}`, {
      method,
      headers,
      body:
        body === undefined
          ? undefined
          : options.contentType
            ? (body as string)
            : JSON.stringify(body),
    });
    if (!response.ok) {
      let code = "error";
      let message = `${response.status}`;
      let details: unknown[] = [];
      try {
        const parsed = (await response.json()) as {
          code?: string;
          message?: string;
          details?: unknown[];
        };
        code = parsed.code ?? code;
        message = parsed.message ?? message;
        details = parsed.details ?? [];
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(response.status, code, message, details);
    }
    if (options.raw) {
      return (await response.text()) as unknown as T;
    }
    return (await response.json()) as T;
  }

  async createProject(title: string, materialText: string): Promise<string> {
    const body = { title, material_text: materialText };
    const result = await this.request<{ project_id: string }>("POST", "/projects", body, {
      idempotencyKey: newIdempotencyKey(),
    });
    return result.project_id;
  }

  async createProjectFromFile(title: string, filename: string, content: string): Promise<string> {
    const encoded = btoa(String.fromCharCode(...new TextEncoder().encode(content)));
    const body = { title, material_base64: encoded, filename };
    const result = await this.request<{ project_id: string }>("POST", "/projects", body, {
      idempotencyKey: newIdempotencyKey(),
    });
    return result.project_id;
  }

  getProject(projectId: string): Promise<ProjectDto> {
    return this.request("GET", `/projects/${projectId}`);
  }

  plan(projectId: string, cue?: string): Promise<PlanDto> {
    return this.request("POST", `/projects/${projectId}/plan`, cue ? { cue } : {}, {
      idempotencyKey: newIdempotencyKey(),
    });
  }

  approvePlan(projectId: string): Promise<{ plan_approved: boolean }> {
    return this.request("PUT", `/projects/${projectId}/plan/approve`, undefined, {
      idempotencyKey: newIdempotencyKey(),
    });
  }

  generate(projectId: string, sessionId: string): Promise<GenerateResultDto> {
    return this.request("POST", `/projects/${projectId}/sessions/${sessionId}/generate`, undefined, {
      idempotencyKey: newIdempotencyKey(),
    });
  }

  async suggest(
    projectId: string,
    sessionId: string,
    stateId: string,
    count: number,
  ): Promise<DraftDto[]> {
    const result = await this.request<{ drafts: DraftDto[] }>(
      "POST",
      `/projects/${projectId}/sessions/${sessionId}/states/${stateId}/suggest`,
      { count },
    );
    return result.drafts;
  }

  applyEdit(projectId: string, command: EditCommand): Promise<EditResultDto> {
    return this.request("POST", `/projects/${projectId}/edits`, command, {
      idempotencyKey: newIdempotencyKey(),
    });
  }

  undo(projectId: string): Promise<EditResultDto> {
    return this.request("POST", `/projects/${projectId}/undo`, undefined, {
      idempotencyKey: newIdempotencyKey(),
    });
  }

  redo(projectId: string): Promise<EditResultDto> {
    return this.request("POST", `/projects/${projectId}/redo`, undefined, {
      idempotencyKey: newIdempotencyKey(),
    });
  }

  exportDocument(projectId: string): Promise<string> {
    return this.request("GET", `/projects/${projectId}/export`, undefined, { raw: true });
  }

  importDocument(projectId: string, text: string): Promise<ProjectDto> {
    return this.request("POST", `/projects/${projectId}/import`, text, {
      contentType: "text/plain; charset=utf-8",
      idempotencyKey: newIdempotencyKey(),
    });
  }

  startPlay(projectId: string, sessionId: string): Promise<PlayDto> {
    return this.request("POST", `/projects/${projectId}/play/${sessionId}`);
  }

  choose(playId: string, index: number): Promise<PlayDto> {
    return this.request("POST", `/play/${playId}/choose`, { index });
  }

  getPlay(playId: string): Promise<PlayDto> {
    return this.request("GET", `/play/${playId}`);
  }
}
