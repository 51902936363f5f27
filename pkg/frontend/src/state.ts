// Pure view-model: every transition takes a state and a gateway response
// and returns a new state. Concurrent switches resolve last-response-wins
// using the gateway's version counter.

import type { SavedObjectRow, SwitchResponse, TenantEntry, TenantsResponse } from "./api.js";

export interface AppState {
  username: string;
  tenants: TenantEntry[];
  objects: SavedObjectRow[];
  objectsFresh: boolean; // false between a switch and the post-switch refetch
  version: number;
  error: string | null;
  signedOut: boolean;
}

export const initialState: AppState = {
  username: "",
  tenants: [],
  objects: [],
  objectsFresh: false,
  version: -1,
  error: null,
  signedOut: false,
};

export function badgeFor(kind: TenantEntry["kind"]): string {
  return kind === "global" ? "shared" : kind;
}

export function selectedTenant(state: AppState): TenantEntry | undefined {
  return state.tenants.find((t) => t.selected);
}

export function withTenants(state: AppState, response: TenantsResponse): AppState {
  if (response.version < state.version) {
    return state; // stale response lost the race
  }
  return {
    ...state,
    username: response.username,
    tenants: response.tenants,
    version: response.version,
    error: null,
    signedOut: false,
  };
}

export function withSwitch(state: AppState, response: SwitchResponse): AppState {
  if (response.version < state.version) {
    return state;
  }
  return {
    ...state,
    version: response.version,
    tenants: state.tenants.map((t) => ({ ...t, selected: t.name === response.selected })),
    objects: [],
    objectsFresh: false, // listings are never carried across a switch
    error: null,
  };
}

export function withObjects(state: AppState, objects: SavedObjectRow[]): AppState {
  return { ...state, objects, objectsFresh: true };
}

export function withError(state: AppState, status: number, message: string): AppState {
  if (status === 401) {
    return { ...state, signedOut: true, error: "session expired; sign in again" };
  }
  // inline error: existing tenant list and listing stay on screen
  return { ...state, error: message };
}
