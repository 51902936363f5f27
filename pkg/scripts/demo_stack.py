#!/usr/bin/env python3
"""Start a demo gateway with sample users, groups, rules, and the web UI.

Creates a scratch config under ./demo-etc (credentials for user01/user02/
admin, one shared group, a document-filtered role over a small dataset),
serves the UI from frontend/dist when it has been built, and prints curl
examples. Ctrl+C stops it.
"""

from __future__ import annotations

import json
import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from searchgate.auth import write_credentials
from searchgate.bench.dataset import doc_pairs, generate_dataset
from searchgate.gateway import GatewayCore
from searchgate.config import load_config
from searchgate.server import make_gateway_server

ROOT = pathlib.Path(__file__).resolve().parents[1]
ETC = ROOT / "demo-etc"
LISTEN = "127.0.0.1:9600"

USERS = {"user01": "password01", "user02": "password02", "admin": "adminpass"}


def write_demo_files() -> pathlib.Path:
    ETC.mkdir(exist_ok=True)
    write_credentials(ETC / "credentials", USERS)
    (ETC / "directory.json").write_text(json.dumps(
        {"groups": {"group01": ["user01", "user02"]}}, indent=2))
    (ETC / "acl.json").write_text(json.dumps({
        "roles": [
            {"name": "admin_all", "principals": ["admin"], "index_patterns": ["*"],
             "actions": ["read", "write", "delete", "manage",
                         "cluster_monitor", "cluster_admin"]},
            {"name": "demo_filtered", "principals": ["user01"],
             "index_patterns": ["demo"], "actions": ["read"],
             "doc_filter": {"tenant_id": 123456}},
        ]
    }, indent=2))
    (ETC / "tenants.json").write_text(json.dumps(
        {"tenants": [{"name": "shared-ops", "members": ["g:group01"]}]}, indent=2))
    ui_root = ROOT / "frontend" / "dist"
    config = {
        "auth": {"mode": "basic", "credentials_path": str(ETC / "credentials")},
        "directory": {"path": str(ETC / "directory.json")},
        "acl": {"path": str(ETC / "acl.json")},
        "tenant": {"defs_path": str(ETC / "tenants.json")},
        "gateway": {"listen": LISTEN, "backend": "embedded",
                    "ui_root": str(ui_root) if ui_root.is_dir() else None},
    }
    path = ETC / "config.json"
    path.write_text(json.dumps(config, indent=2))
    return path


def main() -> int:
    config_path = write_demo_files()
    core = GatewayCore.from_config(load_config(config_path))

    # a small filtered dataset so the doc_filter rule has something to bite on
    store = core.backend.store
    store.create_index("demo")
    store.bulk_index("demo", doc_pairs(
        generate_dataset(500, seed=1, tenant_ids=(123456, 777))))

    with make_gateway_server(core) as server:
        url = server.base_url
        print(f"gateway listening on {url}")
        if core.config.gateway.ui_root:
            print(f"web UI:   {url}/_ownhome/ui   (sign in as user01/password01)")
        else:
            print("web UI not built; run `npm install && npm run build` in frontend/")
        print(f"""
try:
  curl -u user01:password01 {url}/_ownhome/tenants
  curl -u user01:password01 -X POST {url}/_ownhome/switch -d '{{"tenant": "group01"}}'
  curl -u user01:password01 -X POST {url}/demo/_search -d '{{"limit": 3}}'   # filtered to tenant_id=123456
  curl -u admin:adminpass  -X POST {url}/demo/_search -d '{{"limit": 3}}'    # unfiltered
  curl -u admin:adminpass  {url}/_cluster/health

Ctrl+C to stop.""")
        try:
            import threading
            threading.Event().wait()
        except KeyboardInterrupt:
            print("\nshutting down")
    return 0


if __name__ == "__main__":
    sys.exit(main())
