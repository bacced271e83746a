/** The interactive session screen: wiring between the JSON API, the pure
 * view state, and the DOM.
 *
 * One controller owns one root element. All mutations flow through
 * render(), so the screen is always a function of (view, busy, banner).
 * At most one request per session is in flight; the query box is locked
 * while waiting and after the session reaches a terminal status.
 */

import { ApiError, createSession, getSession, submitQuery } from "./api";
import type { SessionPayload } from "./api";
import {
  appendTurn,
  bannerFor,
  fromSession,
  inputEnabled,
  type Banner,
  type SessionView,
  type TurnRow,
} from "./state";

export interface AppConfig {
  baseUrl: string;
  /** Where the session id survives reloads; pass null to disable. */
  storage?: Storage | null;
}

export interface App {
  start(): Promise<void>;
  submit(text: string): Promise<void>;
  /** Resolves once the operation behind the latest DOM event settles. */
  settled(): Promise<void>;
  readonly view: SessionView | null;
  readonly busy: boolean;
}

const STORAGE_KEY = "searchui.session";

export function createApp(root: HTMLElement, config: AppConfig): App {
  const storage = config.storage === undefined ? null : config.storage;
  let view: SessionView | null = null;
  let busy = false;
  let startError: string | null = null;
  let inlineError: string | null = null;
  let pending: Promise<void> = Promise.resolve();

  // -- skeleton ------------------------------------------------------------

  root.innerHTML = `
    <div class="layout">
      <aside class="target-panel">
        <h1>Find this scene</h1>
        <figure class="target-figure" aria-label="target scene"></figure>
        <p class="turn-counter"></p>
      </aside>
      <main class="session-panel">
        <div class="status-banner" hidden></div>
        <section class="history" aria-live="polite"></section>
        <form class="query-form" hidden>
          <input class="query-input" type="text" autocomplete="off"
                 placeholder="describe one detail of the scene" />
          <button class="query-submit" type="submit">Search</button>
          <p class="inline-error" hidden></p>
        </form>
      </main>
    </div>`;

  const el = {
    target: root.querySelector<HTMLElement>(".target-figure")!,
    counter: root.querySelector<HTMLElement>(".turn-counter")!,
    banner: root.querySelector<HTMLElement>(".status-banner")!,
    history: root.querySelector<HTMLElement>(".history")!,
    form: root.querySelector<HTMLFormElement>(".query-form")!,
    input: root.querySelector<HTMLInputElement>(".query-input")!,
    button: root.querySelector<HTMLButtonElement>(".query-submit")!,
    inlineError: root.querySelector<HTMLElement>(".inline-error")!,
  };

  el.form.addEventListener("submit", (event) => {
    event.preventDefault();
    pending = submit(el.input.value);
  });

  // -- rendering -----------------------------------------------------------

  function renderBanner(banner: Banner): void {
    el.banner.hidden = banner.kind === "none";
    el.banner.className = `status-banner banner-${banner.kind}`;
    el.banner.textContent = "";
    switch (banner.kind) {
      case "none":
        break;
      case "found":
        el.banner.textContent = `Target found on turn ${banner.turn}.`;
        break;
      case "exhausted":
        el.banner.textContent =
          `Out of turns — the target stayed hidden for ${banner.maxTurns} turns.`;
        break;
      case "error": {
        const label = document.createElement("span");
        label.textContent = banner.message;
        const retry = document.createElement("button");
        retry.type = "button";
        retry.className = "retry";
        retry.textContent = "Retry";
        retry.addEventListener("click", () => {
          pending = start();
        });
        el.banner.append(label, retry);
        break;
      }
    }
  }

  function renderRow(row: TurnRow): HTMLElement {
    const section = document.createElement("section");
    section.className = "turn-row";
    const heading = document.createElement("p");
    heading.className = "turn-query";
    heading.textContent = `Turn ${row.turn}: “${row.text}”`;
    const gallery = document.createElement("div");
    gallery.className = "gallery";
    for (const card of row.cards) {
      const figure = document.createElement("figure");
      figure.className = card.isTarget ? "result-card is-target" : "result-card";
      const image = document.createElement("div");
      image.className = "card-svg";
      image.innerHTML = card.svg; // trusted: rendered by our own service
      const caption = document.createElement("figcaption");
      const badge = document.createElement("span");
      badge.className = "rank-badge";
      badge.textContent = `#${card.rank}`;
      const score = document.createElement("span");
      score.className = "score";
      score.textContent = card.score.toFixed(3);
      caption.append(badge, score);
      figure.append(image, caption);
      gallery.append(figure);
    }
    section.append(heading, gallery);
    return section;
  }

  function render(): void {
    if (startError !== null) {
      renderBanner({ kind: "error", message: startError });
      el.form.hidden = true; // no query box without a session
      el.target.innerHTML = "";
      el.counter.textContent = "";
      el.history.textContent = "";
      return;
    }
    if (view === null) {
      renderBanner({ kind: "none" });
      el.form.hidden = true;
      return;
    }
    el.target.innerHTML = view.targetSvg;
    el.counter.textContent = `turn ${view.turn} of ${view.maxTurns}`;
    renderBanner(bannerFor(view));
    el.history.textContent = "";
    for (const row of view.history) {
      el.history.append(renderRow(row));
    }
    el.form.hidden = false;
    const enabled = inputEnabled(view, busy);
    el.input.disabled = !enabled;
    el.button.disabled = !enabled;
    el.inlineError.hidden = inlineError === null;
    el.inlineError.textContent = inlineError ?? "";
  }

  // -- operations ----------------------------------------------------------

  async function resumeOrCreate(): Promise<SessionPayload> {
    const remembered = storage?.getItem(STORAGE_KEY);
    if (remembered) {
      try {
        return await getSession(config.baseUrl, remembered);
      } catch (err) {
        if (!(err instanceof ApiError && err.status === 404)) {
          throw err;
        }
        storage?.removeItem(STORAGE_KEY); // forgotten by the server; start over
      }
    }
    const created = await createSession(config.baseUrl);
    storage?.setItem(STORAGE_KEY, created.session_id);
    return created;
  }

  async function start(): Promise<void> {
    startError = null;
    inlineError = null;
    view = null;
    try {
      view = fromSession(await resumeOrCreate());
    } catch (err) {
      startError = `The retrieval service is unreachable (${describe(err)}).`;
    }
    render();
  }

  async function submit(text: string): Promise<void> {
    if (view === null || busy || view.status !== "active") {
      return; // double submits and post-terminal submits are ignored
    }
    if (text.trim() === "") {
      inlineError = "Type at least one word first.";
      render();
      return;
    }
    busy = true;
    inlineError = null;
    render();
    try {
      const entry = await submitQuery(config.baseUrl, view.sessionId, text);
      view = appendTurn(view, entry);
      el.input.value = "";
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        // the server already considers the session over; mirror it
        view = { ...view, status: err.sessionStatus ?? view.status };
      } else if (err instanceof ApiError && err.status === 400) {
        inlineError = err.message;
      } else {
        inlineError = `Query failed (${describe(err)}) — try again.`;
      }
    } finally {
      busy = false;
      render();
    }
  }

  function describe(err: unknown): string {
    return err instanceof Error ? err.message : String(err);
  }

  return {
    start: () => (pending = start()),
    submit: (text) => (pending = submit(text)),
    settled: async () => {
      await pending;
    },
    get view() {
      return view;
    },
    get busy() {
      return busy;
    },
  };
}
