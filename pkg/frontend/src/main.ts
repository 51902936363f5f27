// Browser bootstrap: bind the switcher to the page served at /_ownhome/ui.

import { GatewayClient } from "./api.js";
import { TenantSwitcher } from "./controller.js";
import { renderError, renderHeader, renderObjects, renderTenantList } from "./render.js";

function draw(root: HTMLElement, switcher: TenantSwitcher): void {
  const state = switcher.state;
  if (state.signedOut) {
    window.location.reload(); // basic-auth realm prompts again
    return;
  }
  root.innerHTML =
    `<header>${renderHeader(state)}</header>` +
    `<div class="messages">${renderError(state)}</div>` +
    `<section class="tenant-list">${renderTenantList(state)}</section>` +
    `<section class="object-list">${renderObjects(state)}</section>`;
  for (const button of root.querySelectorAll<HTMLButtonElement>("button.switch")) {
    button.addEventListener("click", () => {
      const name = button.dataset.tenant;
      if (name) {
        void switcher.selectTenant(name);
      }
    });
  }
}

export function boot(): void {
  const root = document.getElementById("app");
  if (root === null) {
    throw new Error("missing #app element");
  }
  const switcher: TenantSwitcher = new TenantSwitcher(new GatewayClient(""), () =>
    draw(root, switcher),
  );
  void switcher.refresh();
}

if (typeof document !== "undefined") {
  boot();
}
