// HTML fragments from state; pure string builders so tests run without a DOM.

import type { AppState } from "./state.js";
import { badgeFor } from "./state.js";

function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function renderTenantList(state: AppState): string {
  const items = state.tenants.map((tenant) => {
    const classes = tenant.selected ? "tenant selected" : "tenant";
    return (
      `<li class="${classes}" data-tenant="${escapeHtml(tenant.name)}">` +
      `<button type="button" class="switch" data-tenant="${escapeHtml(tenant.name)}">` +
      `${escapeHtml(tenant.name)}</button>` +
      `<span class="badge badge-${tenant.kind}">${badgeFor(tenant.kind)}</span>` +
      `</li>`
    );
  });
  return `<ul class="tenants">${items.join("")}</ul>`;
}

export function renderObjects(state: AppState): string {
  if (!state.objectsFresh) {
    return `<p class="loading">loading…</p>`;
  }
  if (state.objects.length === 0) {
    return `<p class="empty">no saved objects in this tenant</p>`;
  }
  const rows = state.objects.map(
    (obj) =>
      `<tr><td class="type">${escapeHtml(obj.type)}</td>` +
      `<td class="title">${escapeHtml(obj.title)}</td>` +
      `<td class="id">${escapeHtml(obj.id)}</td></tr>`,
  );
  return (
    `<table class="objects"><thead><tr><th>type</th><th>title</th><th>id</th></tr></thead>` +
    `<tbody>${rows.join("")}</tbody></table>`
  );
}

export function renderError(state: AppState): string {
  if (state.signedOut) {
    return `<p class="error signin">session expired; <a href="/_ownhome/ui">sign in</a></p>`;
  }
  if (state.error) {
    return `<p class="error">${escapeHtml(state.error)}</p>`;
  }
  return "";
}

export function renderHeader(state: AppState): string {
  return `<h1>Tenants</h1><p class="whoami">signed in as <b>${escapeHtml(state.username)}</b></p>`;
}
