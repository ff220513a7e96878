import type {
  ImageLoadResponse,
  MatchResponse,
  PromptEntry,
  PromptsUpdateResponse,
  TemplateFields,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  const response = await fetch(url, init);
  if (!response.ok) {
    let detail = response.statusText;
    try {
      const body = await response.json();
      if (body && typeof body.detail === "string") {
        detail = body.detail;
      } else if (body && body.detail !== undefined) {
        detail = JSON.stringify(body.detail);
      }
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(response.status, detail);
  }
  return (await response.json()) as T;
}

function jsonInit(method: string, payload: unknown): RequestInit {
  return {
    method,
    headers: { "content-type": "application/json" },
    body: JSON.stringify(payload),
  };
}

/**
 * Typed client for the workbench service. Every number the UI shows comes
 * from these responses; the client never derives similarities itself.
 */
export class WorkbenchClient {
  constructor(private readonly baseUrl: string = "") {}

  createSession(): Promise<{ id: string }> {
    return request(`${this.baseUrl}/sessions`, { method: "POST" });
  }

  loadImage(sessionId: string, image: string): Promise<ImageLoadResponse> {
    return request(
      `${this.baseUrl}/sessions/${sessionId}/images`,
      jsonInit("POST", { image }),
    );
  }

  putPrompts(
    sessionId: string,
    prompts: PromptEntry[],
  ): Promise<PromptsUpdateResponse> {
    return request(
      `${this.baseUrl}/sessions/${sessionId}/prompts`,
      jsonInit("PUT", prompts),
    );
  }

  getMatch(sessionId: string, image: string): Promise<MatchResponse> {
    return request(
      `${this.baseUrl}/sessions/${sessionId}/images/${encodeURIComponent(image)}/match`,
    );
  }

  exportSession(
    sessionId: string,
    formats: string[],
  ): Promise<{ paths: Record<string, string> }> {
    return request(
      `${this.baseUrl}/sessions/${sessionId}/export`,
      jsonInit("POST", { formats }),
    );
  }

  renderPrompt(fields: TemplateFields): Promise<{ description: string }> {
    return request(`${this.baseUrl}/prompts/render`, jsonInit("POST", fields));
  }

  getPromptset(sessionId: string): Promise<PromptEntry[]> {
    return request(this.promptsetUrl(sessionId));
  }

  promptsetUrl(sessionId: string): string {
    return `${this.baseUrl}/sessions/${sessionId}/promptset`;
  }
}
