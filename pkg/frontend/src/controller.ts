// Drives the switcher: refresh pulls tenants + listing, selectTenant issues
// the switch call and always refetches the listing afterwards so the effect
// of a switch is visible immediately.

import { ApiError, GatewayClient } from "./api.js";
import { AppState, initialState, withError, withObjects, withSwitch, withTenants } from "./state.js";

export type StateListener = (state: AppState) => void;

export class TenantSwitcher {
  state: AppState = initialState;

  constructor(
    private readonly client: GatewayClient,
    private readonly onChange: StateListener = () => {},
  ) {}

  private update(next: AppState): AppState {
    this.state = next;
    this.onChange(next);
    return next;
  }

  private fail(err: unknown): AppState {
    if (err instanceof ApiError) {
      return this.update(withError(this.state, err.status, err.message));
    }
    return this.update(withError(this.state, 0, String(err)));
  }

  async refresh(): Promise<AppState> {
    try {
      const tenants = await this.client.getTenants();
      this.update(withTenants(this.state, tenants));
      const objects = await this.client.listSavedObjects();
      return this.update(withObjects(this.state, objects));
    } catch (err) {
      return this.fail(err);
    }
  }

  async selectTenant(name: string): Promise<AppState> {
    try {
      const response = await this.client.switchTenant(name);
      this.update(withSwitch(this.state, response));
    } catch (err) {
      return this.fail(err); // 403 stays inline, current state kept
    }
    try {
      const objects = await this.client.listSavedObjects();
      return this.update(withObjects(this.state, objects));
    } catch (err) {
      return this.fail(err);
    }
  }
}
