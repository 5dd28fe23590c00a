// Bootstrap: hash routing, 2 s polling, form wiring. All state lives on the
// server; this file only moves JSON between the admin API and the page.

import { ApiClient, ApiError, type HeavyHitterResult } from "./api.js";
import { heavyHitterChartSvg } from "./charts.js";
import { startPoll, type PollHandle } from "./poll.js";
import {
  dpMeanResultHtml,
  errorBanner,
  faResultsPage,
  modelsPage,
  navBar,
  newSessionPage,
  sessionDetailPage,
  sessionsPage,
} from "./views.js";

const params = new URLSearchParams(window.location.search);
const api = new ApiClient(params.get("api") ?? "");

const root = document.getElementById("app")!;
let poller: PollHandle | null = null;

function setPage(active: string, body: string, onMount?: () => void): void {
  root.innerHTML = navBar(active) + `<main>${body}</main>`;
  onMount?.();
}

function showError(active: string, error: unknown): void {
  const text = error instanceof Error ? error.message : String(error);
  setPage(active, errorBanner(`coordinator unreachable: ${text}`), () => {
    document.getElementById("retry-button")?.addEventListener("click", () => route());
  });
}

function stopPolling(): void {
  poller?.stop();
  poller = null;
}

function showSessions(): void {
  stopPolling();
  poller = startPoll(
    () => api.listSessions(),
    (sessions) =>
      setPage("sessions", sessionsPage(sessions), () => {
        for (const button of root.querySelectorAll<HTMLButtonElement>(".stop-button")) {
          button.addEventListener("click", async () => {
            button.disabled = true;
            try {
              await api.stopSession(button.dataset.session!);
              await poller?.tick();
            } catch (error) {
              showError("sessions", error);
            }
          });
        }
      }),
    (error) => showError("sessions", error),
  );
}

function showSessionDetail(id: string): void {
  stopPolling();
  poller = startPoll(
    async () => {
      const [view, records] = await Promise.all([api.getSession(id), api.rounds(id)]);
      return { view, records };
    },
    ({ view, records }) => setPage("sessions", sessionDetailPage(view, records)),
    (error) => showError("sessions", error),
  );
}

async function showModels(notice = ""): Promise<void> {
  stopPolling();
  try {
    const models = await api.listModels();
    setPage("models", modelsPage(models, notice), () => {
      const form = document.getElementById("upload-form") as HTMLFormElement;
      form.addEventListener("submit", async (event) => {
        event.preventDefault();
        const errorBox = document.getElementById("upload-error")!;
        const text = (document.getElementById("model-json") as HTMLTextAreaElement).value;
        try {
          const result = await api.registerModel(JSON.parse(text));
          await showModels(`registered ${result.model_id} v${result.version}`);
        } catch (error) {
          errorBox.textContent =
            error instanceof ApiError ? error.detail : `invalid JSON: ${String(error)}`;
        }
      });
    });
  } catch (error) {
    showError("models", error);
  }
}

function showNewSession(): void {
  stopPolling();
  setPage("new-session", newSessionPage(), () => {
    const form = document.getElementById("session-form") as HTMLFormElement;
    form.addEventListener("submit", async (event) => {
      event.preventDefault();
      const value = (id: string) => (document.getElementById(id) as HTMLInputElement).value;
      const kind = value("f-kind") as "FL" | "FA";
      const body: Parameters<typeof api.createSession>[0] = {
        kind,
        session_id: value("f-session-id") || undefined,
        model_id: value("f-model-id") || undefined,
        task_label: value("f-task-label") || undefined,
        rounds: Number(value("f-rounds")),
        min_clients: Number(value("f-min-clients")),
        client_fraction: Number(value("f-fraction")),
        round_timeout: Number(value("f-timeout")),
        hyperparams: {
          learning_rate: Number(value("f-lr")),
          epochs: Number(value("f-epochs")),
          seed: Number(value("f-seed")),
        },
      };
      const queryText = (document.getElementById("f-query") as HTMLTextAreaElement).value.trim();
      const errorBox = document.getElementById("session-error")!;
      try {
        if (kind === "FA" && queryText) {
          body.query = JSON.parse(queryText);
        }
        await api.createSession(body);
        window.location.hash = "#/sessions";
      } catch (error) {
        errorBox.textContent = error instanceof ApiError ? error.detail : String(error);
      }
    });
  });
}

function showFaResults(): void {
  stopPolling();
  setPage("fa-results", faResultsPage(""), () => {
    const form = document.getElementById("fa-form") as HTMLFormElement;
    form.addEventListener("submit", async (event) => {
      event.preventDefault();
      const queryId = (document.getElementById("f-query-id") as HTMLInputElement).value.trim();
      const errorBox = document.getElementById("fa-error")!;
      const target = document.getElementById("fa-result")!;
      try {
        const result = await api.queryResult(queryId);
        target.innerHTML =
          result.kind === "heavy_hitters"
            ? heavyHitterChartSvg(result as HeavyHitterResult)
            : dpMeanResultHtml(result as { query_id: string; value: number; n_reports: number });
        errorBox.textContent = "";
      } catch (error) {
        errorBox.textContent = error instanceof ApiError ? error.detail : String(error);
      }
    });
  });
}

function route(): void {
  const hash = window.location.hash || "#/sessions";
  const detail = hash.match(/^#\/sessions\/(.+)$/);
  if (detail) {
    showSessionDetail(decodeURIComponent(detail[1]));
  } else if (hash === "#/models") {
    void showModels();
  } else if (hash === "#/new-session") {
    showNewSession();
  } else if (hash === "#/fa-results") {
    showFaResults();
  } else {
    showSessions();
  }
}

window.addEventListener("hashchange", route);
route();
