// Page renderers: pure functions from API payloads to HTML strings. main.ts
// wires the returned markup into the document and attaches handlers by id.

import type { ModelView, RoundRecord, SessionView } from "./api.js";
import { escapeHtml, lossChartSvg } from "./charts.js";

export function navBar(active: string): string {
  const links: [string, string][] = [
    ["#/sessions", "Sessions"],
    ["#/models", "Models"],
    ["#/new-session", "New Session"],
    ["#/fa-results", "FA Results"],
  ];
  const items = links
    .map(([href, label]) => {
      const cls = href.endsWith(active) ? ' class="active"' : "";
      return `<a href="${href}"${cls}>${label}</a>`;
    })
    .join("");
  return `<nav>${items}</nav>`;
}

export function errorBanner(message: string): string {
  return (
    `<div class="banner error" id="error-banner">${escapeHtml(message)} ` +
    `<button id="retry-button" type="button">retry</button></div>`
  );
}

function stateBadge(view: SessionView): string {
  const cls = view.state.toLowerCase();
  const reason = view.reason ? ` (${escapeHtml(view.reason)})` : "";
  return `<span class="state ${cls}">${view.state}${reason}</span>`;
}

export function sessionsPage(sessions: SessionView[]): string {
  if (sessions.length === 0) {
    return `<h1>Sessions</h1><p class="empty">No sessions yet. Start one from “New Session”.</p>`;
  }
  const rows = sessions
    .map(
      (s) => `
      <tr data-session="${escapeHtml(s.session_id)}">
        <td><a href="#/sessions/${encodeURIComponent(s.session_id)}">${escapeHtml(s.session_id)}</a></td>
        <td>${s.kind}</td>
        <td>${escapeHtml(s.task_label ?? "")}</td>
        <td>${stateBadge(s)}</td>
        <td>${s.port ?? ""}</td>
        <td>${s.current_round}/${s.rounds}</td>
        <td>${s.last_global_loss == null ? "" : s.last_global_loss.toExponential(3)}</td>
        <td>${s.n_clients_joined}</td>
        <td>${terminal(s) ? "" : `<button class="stop-button" data-session="${escapeHtml(s.session_id)}">stop</button>`}</td>
      </tr>`,
    )
    .join("");
  return (
    `<h1>Sessions</h1>` +
    `<table><thead><tr><th>id</th><th>kind</th><th>task</th><th>state</th><th>port</th>` +
    `<th>round</th><th>last loss</th><th>joined</th><th></th></tr></thead><tbody>${rows}</tbody></table>`
  );
}

function terminal(view: SessionView): boolean {
  return view.state === "Completed" || view.state === "Failed";
}

export function sessionDetailPage(view: SessionView, records: RoundRecord[]): string {
  const meta = `
    <dl class="meta">
      <dt>state</dt><dd>${stateBadge(view)}</dd>
      <dt>kind</dt><dd>${view.kind}</dd>
      <dt>task</dt><dd>${escapeHtml(view.task_label ?? "")}</dd>
      <dt>model</dt><dd>${escapeHtml(view.model_id ?? "")}${view.model_version ? " v" + view.model_version : ""}</dd>
      <dt>port</dt><dd>${view.port ?? ""}</dd>
      <dt>round</dt><dd>${view.current_round}/${view.rounds}</dd>
      <dt>joined</dt><dd>${view.n_clients_joined}</dd>
    </dl>`;
  const rows = records
    .map(
      (r) =>
        `<tr><td>${r.round}</td><td>${r.n_selected}</td><td>${r.n_completed}</td>` +
        `<td>${r.global_loss == null ? "" : r.global_loss.toExponential(3)}</td></tr>`,
    )
    .join("");
  const table =
    records.length > 0
      ? `<table><thead><tr><th>round</th><th>selected</th><th>completed</th><th>global loss</th></tr></thead>` +
        `<tbody>${rows}</tbody></table>`
      : "";
  return (
    `<h1>Session ${escapeHtml(view.session_id)}</h1>${meta}` +
    `<h2>Round loss</h2>${lossChartSvg(records)}${table}`
  );
}

export function modelsPage(models: ModelView[], notice = ""): string {
  const rows = models
    .map(
      (m) =>
        `<tr><td>${escapeHtml(m.model_id)}</td><td>${m.version}</td><td>${m.status}</td>` +
        `<td>${escapeHtml(JSON.stringify(m.arch))}</td><td>${m.n_params}</td></tr>`,
    )
    .join("");
  return `
    <h1>Models</h1>
    ${notice ? `<div class="banner notice">${escapeHtml(notice)}</div>` : ""}
    <table id="models-table"><thead>
      <tr><th>model</th><th>version</th><th>status</th><th>arch</th><th>params</th></tr>
    </thead><tbody>${rows}</tbody></table>
    <h2>Upload model document</h2>
    <form id="upload-form">
      <textarea id="model-json" rows="8" spellcheck="false"
        placeholder='{"model_id": "...", "version": 1, "arch": {"kind": "linear"}, "layers": [...], "params": [...]}'></textarea>
      <div class="form-error" id="upload-error"></div>
      <button type="submit">Upload</button>
    </form>`;
}

export function newSessionPage(error = ""): string {
  return `
    <h1>New Session</h1>
    <form id="session-form">
      <label>kind
        <select id="f-kind"><option>FL</option><option>FA</option></select>
      </label>
      <label>session id <input id="f-session-id" placeholder="optional"></label>
      <label>model id <input id="f-model-id" placeholder="FL only"></label>
      <label>task label <input id="f-task-label" placeholder="sleep | activity"></label>
      <label>rounds <input id="f-rounds" type="number" value="5" min="1"></label>
      <label>min clients <input id="f-min-clients" type="number" value="1" min="1"></label>
      <label>client fraction <input id="f-fraction" type="number" value="1.0" step="0.05" min="0.05" max="1"></label>
      <label>round timeout (s) <input id="f-timeout" type="number" value="30" min="1"></label>
      <label>learning rate <input id="f-lr" type="number" value="0.2" step="0.01"></label>
      <label>epochs <input id="f-epochs" type="number" value="2" min="1"></label>
      <label>seed <input id="f-seed" type="number" value="1"></label>
      <label>query JSON (FA only)
        <textarea id="f-query" rows="4" spellcheck="false"></textarea>
      </label>
      <div class="form-error" id="session-error">${escapeHtml(error)}</div>
      <button type="submit">Create</button>
    </form>`;
}

export function faResultsPage(body: string): string {
  return `
    <h1>FA Results</h1>
    <form id="fa-form">
      <label>query id <input id="f-query-id" placeholder="steps-hitters"></label>
      <button type="submit">Load</button>
      <div class="form-error" id="fa-error"></div>
    </form>
    <div id="fa-result">${body}</div>`;
}

export function dpMeanResultHtml(result: { query_id: string; value: number; n_reports: number }): string {
  return (
    `<dl class="meta"><dt>query</dt><dd>${escapeHtml(result.query_id)}</dd>` +
    `<dt>noised mean</dt><dd>${result.value.toFixed(3)}</dd>` +
    `<dt>reports</dt><dd>${result.n_reports}</dd></dl>`
  );
}
