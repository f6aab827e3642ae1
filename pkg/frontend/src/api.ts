// Typed client for the elicitation service. Response shapes mirror the
// server verbatim; nothing here mutates state client-side.

export interface TreeNodeDoc {
  description: string;
  node_type?: string;
  features?: string[];
  is_processed: boolean;
  submodules?: Record<string, TreeNodeDoc>;
}

export interface TreeDoc {
  funcs: Record<string, TreeNodeDoc>;
}

export interface ParsedFeedback {
  kind: string;
  payload: string[];
  confidence: number | null;
}

export interface NextSignal {
  kind: "question" | "node_complete" | "all_complete";
  node_path?: string[];
  question?: string;
  node_complete?: string[];
  summary?: string;
  all_complete?: boolean;
}

export interface CreatedSession {
  session_id: string;
  tree: TreeDoc;
}

export interface TreeView {
  version: number;
  tree: TreeDoc;
  revisions: number[];
}

export interface PreferenceEntry {
  node_path: string[];
  summary: string;
}

export interface SessionView {
  session_id: string;
  status: string;
  origin_query: string;
  tree_version: number;
  current: { node_path: string[]; question: string } | null;
  preference_log: PreferenceEntry[];
  total_turns: number;
  turns_per_node: Record<string, number>;
  prd: string | null;
  checkpoints: number[];
}

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly code: string,
    message: string,
    public readonly detail: unknown = null,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export class Client {
  constructor(private readonly baseUrl: string = "") {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await fetch(this.baseUrl + path, {
      headers: { "content-type": "application/json" },
      ...init,
    });
    let body: unknown = null;
    try {
      body = await response.json();
    } catch {
      body = null;
    }
    if (!response.ok) {
      const err = (body ?? {}) as { code?: string; message?: string; detail?: unknown };
      throw new ApiError(
        response.status,
        err.code ?? "http_error",
        err.message ?? `HTTP ${response.status}`,
        err.detail ?? null,
      );
    }
    return body as T;
  }

  createSession(query: string, clientToken?: string): Promise<CreatedSession> {
    const payload: Record<string, string> = { query };
    if (clientToken !== undefined) payload["client_token"] = clientToken;
    return this.request("/v1/sessions", {
      method: "POST",
      body: JSON.stringify(payload),
    });
  }

  next(sessionId: string): Promise<NextSignal> {
    return this.request(`/v1/sessions/${sessionId}/next`);
  }

  answer(
    sessionId: string,
    nodePath: string[],
    answer: string,
  ): Promise<{ parsed_feedback: ParsedFeedback }> {
    return this.request(`/v1/sessions/${sessionId}/answer`, {
      method: "POST",
      body: JSON.stringify({ node_path: nodePath, answer }),
    });
  }

  tree(sessionId: string): Promise<TreeView> {
    return this.request(`/v1/sessions/${sessionId}/tree`);
  }

  session(sessionId: string): Promise<SessionView> {
    return this.request(`/v1/sessions/${sessionId}`);
  }

  prd(sessionId: string, intermediate: boolean): Promise<{ prd_text: string }> {
    return this.request(`/v1/sessions/${sessionId}/prd`, {
      method: "POST",
      body: JSON.stringify({ intermediate }),
    });
  }
}
