/** Pure view-state logic: payloads in, renderable state out.
 *
 * The view mirrors the server exactly — every rank, score, and status
 * shown comes verbatim from a server payload, so rebuilding the view
 * from GET /api/session/{id} after a reload reproduces the same screen.
 */

import type { SessionPayload, TurnPayload } from "./api";

export interface ResultCard {
  imageId: number;
  svg: string;
  score: number;
  rank: number;
  isTarget: boolean;
}

export interface TurnRow {
  turn: number;
  text: string;
  targetRank: number;
  cards: ResultCard[];
}

export interface SessionView {
  sessionId: string;
  targetSvg: string;
  maxTurns: number;
  topK: number;
  turn: number;
  status: string;
  history: TurnRow[];
}

export type Banner =
  | { kind: "none" }
  | { kind: "found"; turn: number }
  | { kind: "exhausted"; maxTurns: number }
  | { kind: "error"; message: string };

function toRow(entry: TurnPayload): TurnRow {
  return {
    turn: entry.turn,
    text: entry.text,
    targetRank: entry.target_rank,
    cards: entry.results.map((r) => ({
      imageId: r.image_id,
      svg: r.svg,
      score: r.score,
      rank: r.rank,
      // the server never names the target, but the reported rank lets the
      // client recognize it whenever it appears among the shown results
      isTarget: r.rank === entry.target_rank,
    })),
  };
}

export function fromSession(payload: SessionPayload): SessionView {
  return {
    sessionId: payload.session_id,
    targetSvg: payload.target_svg,
    maxTurns: payload.max_turns,
    topK: payload.top_k,
    turn: payload.turn,
    status: payload.status,
    history: payload.history.map(toRow),
  };
}

export function appendTurn(view: SessionView, entry: TurnPayload): SessionView {
  return {
    ...view,
    turn: entry.turn,
    status: entry.status,
    history: [...view.history, toRow(entry)],
  };
}

export function bannerFor(view: SessionView): Banner {
  if (view.status === "found") {
    return { kind: "found", turn: view.turn };
  }
  if (view.status === "exhausted") {
    return { kind: "exhausted", maxTurns: view.maxTurns };
  }
  return { kind: "none" };
}

/** The query box accepts input only for live sessions with no request pending. */
export function inputEnabled(view: SessionView, inFlight: boolean): boolean {
  return view.status === "active" && !inFlight;
}
