// Gateway API client. All state the UI shows comes from these endpoints;
// the UI itself holds no authorization logic.

export type TenantKind = "private" | "group" | "global";

export interface TenantEntry {
  name: string;
  kind: TenantKind;
  index: string;
  selected: boolean;
}

export interface TenantsResponse {
  username: string;
  version: number;
  tenants: TenantEntry[];
}

export interface SwitchResponse {
  selected: string;
  index: string;
  version: number;
}

export interface SavedObjectRow {
  id: string;
  type: string;
  title: string;
}

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
    this.name = "ApiError";
  }
}

interface SearchHit {
  _id: string;
  fields: Record<string, unknown>;
}

interface SearchResponse {
  hits: { total: number; hits: SearchHit[] };
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class GatewayClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchImpl: FetchLike = (input, init) =>
      fetch(input, { credentials: "same-origin", ...init }),
  ) {}

  private async call<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, {
      method,
      headers: body === undefined ? {} : { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!response.ok) {
      let reason = `${response.status}`;
      try {
        const payload = await response.json();
        reason = payload?.error?.reason ?? reason;
      } catch {
        // non-JSON error body: keep the status text
      }
      throw new ApiError(response.status, reason);
    }
    return (await response.json()) as T;
  }

  getTenants(): Promise<TenantsResponse> {
    return this.call<TenantsResponse>("GET", "/_ownhome/tenants");
  }

  switchTenant(name: string): Promise<SwitchResponse> {
    return this.call<SwitchResponse>("POST", "/_ownhome/switch", { tenant: name });
  }

  async listSavedObjects(limit = 100): Promise<SavedObjectRow[]> {
    const response = await this.call<SearchResponse>("POST", "/.kibana/_search", {
      limit,
    });
    return response.hits.hits.map((hit) => ({
      id: hit._id,
      type: String(hit.fields["type"] ?? hit._id.split(":")[0] ?? "object"),
      title: String(hit.fields["title"] ?? hit._id),
    }));
  }
}
