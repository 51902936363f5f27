"""searchgate: an authenticated multi-tenant search gateway.

The package bundles a reverse proxy that authenticates requests, resolves
group memberships, enforces pattern-based access rules with per-user
variables, isolates per-tenant saved objects, and injects document-level
filters into search queries; an embedded in-memory search backend; a bulk
ingestion client; and a benchmark harness that measures the security
layer's overhead.
"""

__version__ = "0.1.0"
