"""Tenant lists, sessions, index naming, and request rewriting."""

from __future__ import annotations

import json
import random
import string

import pytest
from hypothesis import given, strategies as st

from searchgate.auth import AuthMethod, Principal
from searchgate.directory import parse_directory
from searchgate.httpbase import Headers, HttpRequest
from searchgate.tenant import (
    ForbiddenTenant,
    NoSession,
    Session,
    SessionStore,
    SavedObject,
    SavedObjectType,
    Tenant,
    TenantDef,
    TenantKind,
    UnknownTenant,
    available_tenants,
    implicit_acl_rules,
    parse_tenant_defs,
    rewrite_index,
    switch_tenant,
    tenant_index_name,
)

USER01 = Principal("user01", AuthMethod.BASIC)


class TestIndexNaming:
    def test_private(self):
        assert tenant_index_name("user01", TenantKind.PRIVATE) == ".kibana_u_user01"

    def test_group(self):
        assert tenant_index_name("group01", TenantKind.GROUP) == ".kibana_g_group01"

    def test_shared(self):
        assert tenant_index_name("global-ops", TenantKind.GLOBAL) == ".kibana_s_global-ops"

    def test_injectivity_spot_checks(self):
        pairs = [("ab_c", TenantKind.GROUP), ("ab", TenantKind.GROUP),
                 ("ab", TenantKind.PRIVATE), ("ab", TenantKind.GLOBAL),
                 ("a", TenantKind.GROUP), ("b_ab", TenantKind.GROUP)]
        names = [tenant_index_name(n, k) for n, k in pairs]
        assert len(set(names)) == len(names)

    @given(st.text(alphabet="abc_-.", min_size=1, max_size=8),
           st.text(alphabet="abc_-.", min_size=1, max_size=8),
           st.sampled_from(list(TenantKind)), st.sampled_from(list(TenantKind)))
    def test_injective_over_legal_inputs(self, n1, n2, k1, k2):
        if (n1, k1) != (n2, k2):
            assert tenant_index_name(n1, k1) != tenant_index_name(n2, k2)


class TestAvailableTenants:
    def test_private_plus_group(self):
        tenants = available_tenants(USER01, frozenset({"group01"}))
        assert tenants == [Tenant("user01", TenantKind.PRIVATE),
                           Tenant("group01", TenantKind.GROUP)]

    def test_no_groups_minimal(self):
        assert available_tenants(USER01, frozenset()) == [Tenant("user01", TenantKind.PRIVATE)]

    def test_file_defined_granted_via_group(self):
        defs = (TenantDef("global-ops", frozenset({"g:group01"})),)
        tenants = available_tenants(USER01, frozenset({"group01"}), defs)
        assert Tenant("global-ops", TenantKind.GLOBAL) in tenants

    def test_file_defined_matches_direct_interpretation(self):
        """Compare against reading the defs file content directly."""
        raw = {"tenants": [
            {"name": "alpha", "members": ["user01"]},
            {"name": "beta", "members": ["g:group02"]},
            {"name": "gamma", "members": ["user02", "g:group01"]},
        ]}
        defs = parse_tenant_defs(raw)
        groups = frozenset({"group01"})
        got = {t.name for t in available_tenants(USER01, groups, defs)
               if t.kind is TenantKind.GLOBAL}
        want = {
            entry["name"] for entry in raw["tenants"]
            if "user01" in entry["members"]
            or any(f"g:{g}" in entry["members"] for g in groups)
        }
        assert got == want

    def test_order_private_first_then_lexicographic(self):
        defs = (TenantDef("aaa", frozenset({"user01"})),)
        tenants = available_tenants(USER01, frozenset({"zzz", "bbb"}), defs)
        assert [t.name for t in tenants] == ["user01", "aaa", "bbb", "zzz"]

    def test_deterministic(self):
        defs = (TenantDef("ops", frozenset({"user01"})),)
        a = available_tenants(USER01, frozenset({"g2", "g1"}), defs)
        b = available_tenants(USER01, frozenset({"g1", "g2"}), defs)
        assert a == b
        assert a[0].kind is TenantKind.PRIVATE

    def test_collision_private_wins(self):
        tenants = available_tenants(USER01, frozenset({"user01"}))
        assert tenants == [Tenant("user01", TenantKind.PRIVATE)]


class TestSwitch:
    def make_session(self):
        return Session("sid", "user01", Tenant("user01", TenantKind.PRIVATE), 1e12)

    def test_switch_to_group(self):
        available = available_tenants(USER01, frozenset({"group01"}))
        session = switch_tenant(self.make_session(), "group01", available)
        assert session.selected_tenant == Tenant("group01", TenantKind.GROUP)
        assert session.session_id == "sid"

    def test_switch_to_current_is_noop_success(self):
        available = available_tenants(USER01, frozenset())
        session = switch_tenant(self.make_session(), "user01", available)
        assert session.selected_tenant.name == "user01"

    def test_forbidden_when_named_elsewhere(self):
        available = available_tenants(USER01, frozenset())
        with pytest.raises(ForbiddenTenant):
            switch_tenant(self.make_session(), "user02", available, known_names={"user02"})

    def test_unknown_when_named_nowhere(self):
        available = available_tenants(USER01, frozenset())
        with pytest.raises(UnknownTenant):
            switch_tenant(self.make_session(), "ghost", available)


class TestSessionStore:
    def test_create_and_get(self):
        store = SessionStore()
        session = store.create("user01", Tenant("user01", TenantKind.PRIVATE))
        assert store.get(session.session_id) == session
        assert len(session.session_id) >= 22  # 128+ bits urlsafe

    def test_expiry(self):
        fake = {"now": 0.0}
        store = SessionStore(ttl_hours=1, clock=lambda: fake["now"])
        session = store.create("user01", Tenant("user01", TenantKind.PRIVATE))
        fake["now"] = 3600.1
        assert store.get(session.session_id) is None

    def test_apply_switch_atomic(self):
        store = SessionStore()
        session = store.create("user01", Tenant("user01", TenantKind.PRIVATE))
        available = available_tenants(USER01, frozenset({"group01"}))
        updated, version = store.apply_switch(session.session_id, "group01", available)
        assert updated.selected_tenant.name == "group01"
        assert store.get(session.session_id).selected_tenant.name == "group01"
        assert version >= 1

    def test_apply_switch_on_dead_session(self):
        store = SessionStore()
        with pytest.raises(NoSession):
            store.apply_switch("ghost", "x", [])


def make_request(path, body=b"", method="GET"):
    return HttpRequest(method=method, path=path, headers=Headers(), body=body)


def session_for(tenant_name, kind=TenantKind.GROUP):
    return Session("sid", "user01", Tenant(tenant_name, kind), 1e12)


class TestRewrite:
    def test_kibana_search_rewritten(self):
        out = rewrite_index(make_request("/.kibana/_search"), session_for("group01"))
        assert out.path == "/.kibana_g_group01/_search"

    def test_non_matching_passthrough(self):
        req = make_request("/logs-2016/_search")
        assert rewrite_index(req, session_for("group01")) is req

    def test_prefix_but_not_exact_segment_untouched(self):
        req = make_request("/.kibana_old/_search")
        assert rewrite_index(req, session_for("group01")) is req

    def test_query_string_preserved(self):
        out = rewrite_index(make_request("/.kibana/_search?limit=5"), session_for("group01"))
        assert out.path == "/.kibana_g_group01/_search?limit=5"

    def test_no_session_raises(self):
        with pytest.raises(NoSession):
            rewrite_index(make_request("/.kibana/_search"), None)

    def test_no_session_ok_for_other_paths(self):
        req = make_request("/logs/_search")
        assert rewrite_index(req, None) is req

    def test_idempotent(self):
        session = session_for("group01")
        once = rewrite_index(make_request("/.kibana/_search"), session)
        twice = rewrite_index(once, session)
        assert once == twice

    def test_bulk_body_index_fields_rewritten(self):
        lines = [
            json.dumps({"index": {"_index": ".kibana", "_id": "dashboard:x"}}),
            json.dumps({"type": "dashboard", "title": "t"}),
            json.dumps({"index": {"_id": "dashboard:y"}}),
            json.dumps({"type": "dashboard", "title": "u"}),
        ]
        req = make_request("/.kibana/_bulk", body="\n".join(lines).encode(), method="POST")
        out = rewrite_index(req, session_for("group01"))
        out_lines = out.body.decode().split("\n")
        assert json.loads(out_lines[0])["index"]["_index"] == ".kibana_g_group01"
        assert out_lines[1] == lines[1]  # source lines byte-identical
        assert out_lines[2] == lines[2]  # no _index: untouched
        assert out.path == "/.kibana_g_group01/_bulk"

    def test_bulk_body_other_index_untouched(self):
        lines = [json.dumps({"index": {"_index": "logs", "_id": "1"}}), json.dumps({"a": 1})]
        req = make_request("/.kibana/_bulk", body="\n".join(lines).encode(), method="POST")
        out = rewrite_index(req, session_for("group01"))
        assert json.loads(out.body.decode().split("\n")[0])["index"]["_index"] == "logs"

    def test_fuzz_idempotence_and_passthrough(self):
        """Random paths: rewriting twice equals once; non-target paths unchanged."""
        rng = random.Random(4)
        session = session_for("group01")
        alphabet = string.ascii_lowercase + "._-"
        for _ in range(2000):
            n_seg = rng.randint(1, 4)
            segs = ["".join(rng.choices(alphabet, k=rng.randint(1, 8)))
                    for _ in range(n_seg)]
            if rng.random() < 0.3:
                segs[0] = ".kibana"
            path = "/" + "/".join(segs) + (("?q=" + segs[0]) if rng.random() < 0.3 else "")
            req = make_request(path)
            once = rewrite_index(req, session)
            assert rewrite_index(once, session) == once
            if segs[0] != ".kibana":
                assert once is req
            else:
                assert once.path_only().split("/")[1] == ".kibana_g_group01"


class TestImplicitRules:
    def test_rules_cover_private_group_and_shared(self):
        directory = parse_directory({"groups": {"group01": ["user01"]}})
        defs = (TenantDef("ops", frozenset({"g:group01"})),)
        rules = implicit_acl_rules(directory, defs)
        names = [r.role_name for r in rules]
        assert names == ["__tenant_private", "__tenant_group_group01", "__tenant_shared_ops"]
        private = rules[0]
        assert private.index_patterns == (".kibana_u_${user.name}",)
        assert private.principals == frozenset({"*"})


class TestSavedObject:
    def test_roundtrip(self):
        obj = SavedObject("x1", SavedObjectType.DASHBOARD, "CPU usage", {"panels": [1, 2]})
        assert obj.doc_id == "dashboard:x1"
        fields = obj.to_fields()
        back = SavedObject.from_doc(obj.doc_id, fields)
        assert back == obj
