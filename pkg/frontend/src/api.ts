/** Typed client for the retrieval service's JSON API.
 *
 * Every request the UI makes goes through these four functions, which map
 * one-to-one onto the service's documented endpoints.
 */

export interface ResultPayload {
  image_id: number;
  svg: string;
  score: number;
  rank: number;
}

export interface TurnPayload {
  turn: number;
  text: string;
  results: ResultPayload[];
  target_rank: number;
  status: string;
}

export interface SessionPayload {
  session_id: string;
  target_svg: string;
  max_turns: number;
  top_k: number;
  turn: number;
  status: string;
  history: TurnPayload[];
}

/** Non-2xx response, carrying the server's JSON error body. */
export class ApiError extends Error {
  status: number;
  body: Record<string, unknown>;

  constructor(status: number, body: Record<string, unknown>) {
    super(typeof body.error === "string" ? body.error : `HTTP ${status}`);
    this.name = "ApiError";
    this.status = status;
    this.body = body;
  }

  /** Terminal session status attached to conflict responses, if any. */
  get sessionStatus(): string | null {
    return typeof this.body.status === "string" ? this.body.status : null;
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  const response = await fetch(url, init);
  const text = await response.text();
  let body: unknown;
  try {
    body = JSON.parse(text);
  } catch {
    body = { error: text || "unreadable response" };
  }
  if (!response.ok) {
    throw new ApiError(response.status, body as Record<string, unknown>);
  }
  return body as T;
}

export function createSession(base: string): Promise<SessionPayload> {
  return request<SessionPayload>(`${base}/api/session`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: "{}",
  });
}

export function getSession(base: string, id: string): Promise<SessionPayload> {
  return request<SessionPayload>(`${base}/api/session/${id}`);
}

export function submitQuery(
  base: string,
  id: string,
  text: string,
): Promise<TurnPayload> {
  return request<TurnPayload>(`${base}/api/session/${id}/query`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify({ text }),
  });
}

export function imageUrl(base: string, imageId: number): string {
  return `${base}/api/image/${imageId}.svg`;
}
