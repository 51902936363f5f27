// View-model transitions and render fragments, no gateway needed.

import { describe, expect, it } from "vitest";

import type { SwitchResponse, TenantsResponse } from "../src/api.js";
import { renderError, renderObjects, renderTenantList } from "../src/render.js";
import {
  badgeFor,
  initialState,
  selectedTenant,
  withError,
  withObjects,
  withSwitch,
  withTenants,
} from "../src/state.js";

const TENANTS: TenantsResponse = {
  username: "user01",
  version: 3,
  tenants: [
    { name: "user01", kind: "private", index: ".kibana_u_user01", selected: true },
    { name: "group01", kind: "group", index: ".kibana_g_group01", selected: false },
  ],
};

describe("state transitions", () => {
  it("mirrors the tenants response exactly", () => {
    const state = withTenants(initialState, TENANTS);
    expect(state.tenants).toEqual(TENANTS.tenants);
    expect(state.username).toBe("user01");
    expect(selectedTenant(state)?.name).toBe("user01");
  });

  it("keeps exactly one tenant selected after a switch", () => {
    let state = withTenants(initialState, TENANTS);
    const switched: SwitchResponse = { selected: "group01", index: ".kibana_g_group01", version: 4 };
    state = withSwitch(state, switched);
    expect(state.tenants.filter((t) => t.selected).map((t) => t.name)).toEqual(["group01"]);
  });

  it("drops the listing across a switch until refetched", () => {
    let state = withTenants(initialState, TENANTS);
    state = withObjects(state, [{ id: "dashboard:a", type: "dashboard", title: "a" }]);
    expect(state.objectsFresh).toBe(true);
    state = withSwitch(state, { selected: "group01", index: ".kibana_g_group01", version: 4 });
    expect(state.objects).toEqual([]);
    expect(state.objectsFresh).toBe(false);
  });

  it("resolves concurrent switches last-response-wins by version", () => {
    let state = withTenants(initialState, TENANTS);
    state = withSwitch(state, { selected: "group01", index: ".kibana_g_group01", version: 9 });
    const stale = withSwitch(state, { selected: "user01", index: ".kibana_u_user01", version: 7 });
    expect(stale).toBe(state); // older version ignored
    expect(selectedTenant(stale)?.name).toBe("group01");
  });

  it("keeps current state on an inline 403", () => {
    let state = withTenants(initialState, TENANTS);
    state = withError(state, 403, "not your tenant");
    expect(state.error).toBe("not your tenant");
    expect(state.tenants).toHaveLength(2);
    expect(state.signedOut).toBe(false);
  });

  it("marks the session signed out on 401", () => {
    const state = withError(withTenants(initialState, TENANTS), 401, "expired");
    expect(state.signedOut).toBe(true);
  });

  it("maps the global kind to a shared badge", () => {
    expect(badgeFor("global")).toBe("shared");
    expect(badgeFor("private")).toBe("private");
    expect(badgeFor("group")).toBe("group");
  });
});

describe("render fragments", () => {
  it("renders tenants with the selection highlighted, private first", () => {
    const html = renderTenantList(withTenants(initialState, TENANTS));
    expect(html).toContain('data-tenant="user01"');
    expect(html).toContain('data-tenant="group01"');
    expect(html.indexOf("user01")).toBeLessThan(html.indexOf("group01"));
    expect(html).toContain('class="tenant selected"');
    expect(html.match(/tenant selected/g)).toHaveLength(1);
  });

  it("renders the listing or its empty state", () => {
    let state = withTenants(initialState, TENANTS);
    expect(renderObjects(state)).toContain("loading");
    state = withObjects(state, []);
    expect(renderObjects(state)).toContain("no saved objects");
    state = withObjects(state, [{ id: "dashboard:a", type: "dashboard", title: "CPU <b>" }]);
    const html = renderObjects(state);
    expect(html).toContain("dashboard:a");
    expect(html).toContain("CPU &lt;b&gt;"); // escaped
  });

  it("renders inline errors and the sign-in prompt", () => {
    const inline = renderError(withError(withTenants(initialState, TENANTS), 403, "nope"));
    expect(inline).toContain("nope");
    const signedOut = renderError(withError(initialState, 401, "x"));
    expect(signedOut).toContain("sign in");
  });
});
