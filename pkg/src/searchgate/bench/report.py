"""Sample sets, distribution statistics, and direct-vs-gated reporting.

The overhead arithmetic is fixed: per-query overhead is the gated median
minus the direct median; indexing degradation is the direct throughput
median minus the gated one, also expressed as a percentage of direct.
Medians of even-length samples are the mean of the middle pair.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

QUERY_TYPES = (
    "default",
    "term",
    "phrase",
    "agg_uncached",
    "agg_cached",
    "scroll",
    "expression",
)

SAMPLES_KIND = "bench-samples"
REPORT_KIND = "bench-report"
FORMAT_VERSION = 1

# scenario keys that must agree between the two runs of a comparison
_MATCH_KEYS = ("doc_count", "bulk_size", "query_count", "client_threads",
               "seed", "index", "scroll_page_size", "scroll_pages",
               "search_limit", "expression")


class BenchError(Exception):
    pass


class MismatchedScenarios(BenchError):
    pass


@dataclass
class SampleSet:
    """Raw measurements of one scenario run against one target."""

    scenario: dict
    indexing_throughput_dps: list[float] = field(default_factory=list)
    make_searchable_ms: list[float] = field(default_factory=list)
    query_latency_ms: dict[str, list[float]] = field(default_factory=dict)
    warmup: dict[str, int] = field(default_factory=dict)
    result_digests: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "kind": SAMPLES_KIND,
            "version": FORMAT_VERSION,
            "scenario": self.scenario,
            "indexing_throughput_dps": self.indexing_throughput_dps,
            "make_searchable_ms": self.make_searchable_ms,
            "query_latency_ms": self.query_latency_ms,
            "warmup": self.warmup,
            "result_digests": self.result_digests,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "SampleSet":
        if obj.get("kind") != SAMPLES_KIND:
            raise BenchError(f"not a {SAMPLES_KIND} file")
        return cls(
            scenario=obj["scenario"],
            indexing_throughput_dps=list(obj["indexing_throughput_dps"]),
            make_searchable_ms=list(obj["make_searchable_ms"]),
            query_latency_ms={k: list(v) for k, v in obj["query_latency_ms"].items()},
            warmup=dict(obj.get("warmup", {})),
            result_digests=dict(obj.get("result_digests", {})),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "SampleSet":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def median(samples: list[float]) -> float:
    """Even-count median is the mean of the middle pair."""
    if not samples:
        raise BenchError("median of an empty sample set")
    ordered = sorted(samples)
    n = len(ordered)
    mid = n // 2
    if n % 2 == 1:
        return float(ordered[mid])
    return (ordered[mid - 1] + ordered[mid]) / 2.0


def percentile(samples: list[float], q: float) -> float:
    """Nearest-rank percentile (q in (0, 100])."""
    if not samples:
        raise BenchError("percentile of an empty sample set")
    ordered = sorted(samples)
    rank = max(1, math.ceil(q / 100.0 * len(ordered)))
    return float(ordered[rank - 1])


def histogram(samples: list[float], bins: int = 10) -> dict:
    if not samples:
        return {"edges": [], "counts": []}
    low, high = min(samples), max(samples)
    if low == high:
        return {"edges": [low, high], "counts": [len(samples)]}
    width = (high - low) / bins
    edges = [low + i * width for i in range(bins + 1)]
    counts = [0] * bins
    for x in samples:
        slot = min(int((x - low) / width), bins - 1)
        counts[slot] += 1
    return {"edges": edges, "counts": counts}


def stats_block(samples: list[float], warmup: int = 0) -> dict:
    kept = samples[warmup:]
    return {
        "n": len(kept),
        "median": median(kept),
        "p90": percentile(kept, 90),
        "p99": percentile(kept, 99),
        "histogram": histogram(kept),
    }


def summarize(direct: SampleSet, gated: SampleSet) -> dict:
    """Build the comparison report from a direct and a gated run.

    Raises MismatchedScenarios unless both runs cover the same scenario
    (everything but the target/mode must agree).
    """
    for key in _MATCH_KEYS:
        if direct.scenario.get(key) != gated.scenario.get(key):
            raise MismatchedScenarios(
                f"scenario key {key!r} differs: "
                f"{direct.scenario.get(key)!r} vs {gated.scenario.get(key)!r}"
            )

    metrics: dict[str, dict] = {}
    d_tp = stats_block(direct.indexing_throughput_dps,
                       direct.warmup.get("indexing", 0))
    g_tp = stats_block(gated.indexing_throughput_dps,
                       gated.warmup.get("indexing", 0))
    degradation = d_tp["median"] - g_tp["median"]
    metrics["indexing_throughput_dps"] = {
        "direct": d_tp,
        "gated": g_tp,
        "degradation_dps": degradation,
        "degradation_pct": (degradation / d_tp["median"] * 100.0) if d_tp["median"] else 0.0,
    }
    for qtype in QUERY_TYPES:
        if qtype not in direct.query_latency_ms or qtype not in gated.query_latency_ms:
            continue
        d_stats = stats_block(direct.query_latency_ms[qtype], direct.warmup.get(qtype, 0))
        g_stats = stats_block(gated.query_latency_ms[qtype], gated.warmup.get(qtype, 0))
        metrics[f"{qtype}_latency_ms"] = {
            "direct": d_stats,
            "gated": g_stats,
            "overhead_ms": g_stats["median"] - d_stats["median"],
        }
    return {
        "kind": REPORT_KIND,
        "version": FORMAT_VERSION,
        "scenario": {k: direct.scenario.get(k) for k in _MATCH_KEYS},
        "targets": {"direct": direct.scenario.get("target", "direct"),
                    "gated": gated.scenario.get("target", "gateway")},
        "metrics": metrics,
    }


_STATS_SCHEMA = {
    "type": "object",
    "required": ["n", "median", "p90", "p99", "histogram"],
    "properties": {
        "n": {"type": "integer", "minimum": 1},
        "median": {"type": "number"},
        "p90": {"type": "number"},
        "p99": {"type": "number"},
        "histogram": {
            "type": "object",
            "required": ["edges", "counts"],
            "properties": {
                "edges": {"type": "array", "items": {"type": "number"}},
                "counts": {"type": "array", "items": {"type": "integer", "minimum": 0}},
            },
        },
    },
}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["kind", "version", "scenario", "targets", "metrics"],
    "properties": {
        "kind": {"const": REPORT_KIND},
        "version": {"type": "integer"},
        "scenario": {"type": "object"},
        "targets": {"type": "object"},
        "metrics": {
            "type": "object",
            "required": ["indexing_throughput_dps"],
            "properties": {
                "indexing_throughput_dps": {
                    "type": "object",
                    "required": ["direct", "gated", "degradation_dps", "degradation_pct"],
                    "properties": {
                        "direct": _STATS_SCHEMA,
                        "gated": _STATS_SCHEMA,
                        "degradation_dps": {"type": "number"},
                        "degradation_pct": {"type": "number"},
                    },
                },
            },
            "additionalProperties": {
                "type": "object",
                "required": ["direct", "gated"],
                "properties": {
                    "direct": _STATS_SCHEMA,
                    "gated": _STATS_SCHEMA,
                    "overhead_ms": {"type": "number"},
                },
            },
        },
    },
}


def validate_report(report: dict) -> None:
    jsonschema.validate(report, REPORT_SCHEMA)


_LABELS = {
    "indexing_throughput_dps": "Indexing throughput [docs/s]",
    "default_latency_ms": "Default query latency [ms]",
    "term_latency_ms": "Term query latency [ms]",
    "phrase_latency_ms": "Phrase query latency [ms]",
    "agg_uncached_latency_ms": "Aggregation (uncached) latency [ms]",
    "agg_cached_latency_ms": "Aggregation (cached) latency [ms]",
    "scroll_latency_ms": "Scroll query latency [ms]",
    "expression_latency_ms": "Expression query latency [ms]",
}


def render_text(report: dict) -> str:
    """Fixed-width comparison table of medians and overheads."""
    rows = [("metric", "direct", "gated", "overhead")]
    for name, data in report["metrics"].items():
        label = _LABELS.get(name, name)
        direct_median = data["direct"]["median"]
        gated_median = data["gated"]["median"]
        if name == "indexing_throughput_dps":
            extra = f'{data["degradation_dps"]:.1f} ({data["degradation_pct"]:.1f}%)'
        else:
            extra = f'{data["overhead_ms"]:.1f}'
        rows.append((label, f"{direct_median:.1f}", f"{gated_median:.1f}", extra))
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    lines = []
    for i, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(widths[j]) for j, cell in enumerate(row)))
        if i == 0:
            lines.append("  ".join("-" * widths[j] for j in range(4)))
    return "\n".join(lines)


def save_report(report: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report, indent=2), encoding="utf-8")
