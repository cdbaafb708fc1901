// REST client for the editing service.

export interface RenderPayload {
  session_id: string;
  seed: number;
  image: string;        // base64 PNG
  mask_overlay: string; // base64 PNG
  coarse_mask: string;  // base64 PNG
}

export interface DirectionEntry {
  class: number;
  layer: number;
  k: number;
  variances: number[];
}

export interface DirectionList {
  style_dim: number;
  entries: DirectionEntry[];
}

export interface EditRequest {
  class: number;
  layer: number;
  component: number;
  magnitude: number;
}

export interface ServiceClient {
  createSession(seed?: number): Promise<RenderPayload>;
  listDirections(): Promise<DirectionList>;
  applyEdit(sessionId: string, edit: EditRequest): Promise<RenderPayload>;
}

async function asJson<T>(response: Response): Promise<T> {
  if (!response.ok) {
    let message = `${response.status}`;
    try {
      const body = await response.json();
      if (body && typeof body.error === "string") message = body.error;
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new Error(message);
  }
  return response.json() as Promise<T>;
}

export function httpClient(baseUrl: string): ServiceClient {
  return {
    async createSession(seed?: number) {
      const body = seed === undefined ? {} : { seed };
      return asJson<RenderPayload>(
        await fetch(`${baseUrl}/sessions`, {
          method: "POST",
          headers: { "Content-Type": "application/json" },
          body: JSON.stringify(body),
        }),
      );
    },
    async listDirections() {
      return asJson<DirectionList>(await fetch(`${baseUrl}/directions`));
    },
    async applyEdit(sessionId: string, edit: EditRequest) {
      return asJson<RenderPayload>(
        await fetch(`${baseUrl}/sessions/${sessionId}/edit`, {
          method: "POST",
          headers: { "Content-Type": "application/json" },
          body: JSON.stringify(edit),
        }),
      );
    },
  };
}
