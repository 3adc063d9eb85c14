"""Triple-store ingestion with relation merging and an immutable adjacency index.

Accepts either the full ConceptNet 5.x assertion TSV (URI, relation, start,
end, JSON metadata) or a simplified ``relation <tab> head <tab> tail [<tab>
weight]`` TSV. Raw relation names are merged down via a two-column map file
(``raw <tab> merged|DELETE``); duplicate merged triples collapse keeping the
maximum weight.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .io_utils import read_container, write_container

DELETE = "DELETE"

FORWARD = False
REVERSE = True


class IngestError(ValueError):
    """Raised when ingestion cannot produce a usable graph."""


def normalize_surface(text: str) -> str:
    """Lowercase and join tokens with underscores ("Glue Stick" -> "glue_stick")."""
    return "_".join(text.strip().lower().split())


def load_merge_map(path: str | Path) -> dict[str, str]:
    """Parse a merge map file: `raw <tab> merged|DELETE`, '#' comments."""
    mapping: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise IngestError(f"{path}:{lineno}: merge map lines need 2 tab-separated columns")
        mapping[parts[0].strip()] = parts[1].strip()
    return mapping


def default_merge_map_path() -> Path:
    return Path(__file__).parent / "data" / "relation_merge_default.tsv"


@dataclass
class IngestReport:
    lines_read: int = 0
    triples_kept: int = 0
    duplicates_merged: int = 0
    skipped: list[tuple[int, str]] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "lines_read": self.lines_read,
            "triples_kept": self.triples_kept,
            "duplicates_merged": self.duplicates_merged,
            "skipped": [[n, why] for n, why in self.skipped],
            "warnings": list(self.warnings),
        }


@dataclass(frozen=True, eq=False)
class KnowledgeGraph:
    """Immutable concept/relation vocabularies plus a CSR-style adjacency index.

    ``triples`` is an (n, 3) uint32 array of (head, rel, tail); each triple
    appears in the adjacency once forward on its head and once reverse on its
    tail, sorted by (neighbor, rel, direction).
    """

    concepts: tuple[str, ...]
    relations: tuple[str, ...]
    triples: np.ndarray
    weights: np.ndarray
    _surface_index: dict[str, int] = field(repr=False)
    _adj_ptr: np.ndarray = field(repr=False)
    _adj_nbr: np.ndarray = field(repr=False)
    _adj_rel: np.ndarray = field(repr=False)
    _adj_rev: np.ndarray = field(repr=False)

    @property
    def n_concepts(self) -> int:
        return len(self.concepts)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    @property
    def n_triples(self) -> int:
        return len(self.triples)

    def lookup_surface(self, surface: str) -> int | None:
        """Exact match of a normalized surface against the vocabulary."""
        return self._surface_index.get(surface)

    def surface(self, concept: int) -> str:
        return self.concepts[concept]

    def neighbors(self, concept: int) -> list[tuple[int, int, bool]]:
        """All incident edges of a concept as (neighbor, rel, reverse) tuples.

        ``reverse`` is True when the underlying triple points neighbor->concept.
        Deterministic order: sorted by neighbor id, then rel id, then direction.
        """
        c = int(concept)
        if not 0 <= c < self.n_concepts:
            raise IndexError(f"concept id {concept} out of range")
        lo, hi = self._adj_ptr[c], self._adj_ptr[c + 1]
        return [
            (int(self._adj_nbr[i]), int(self._adj_rel[i]), bool(self._adj_rev[i]))
            for i in range(lo, hi)
        ]

    def degree(self, concept: int) -> int:
        c = int(concept)
        return int(self._adj_ptr[c + 1] - self._adj_ptr[c])

    def has_triple(self, head: int, rel: int, tail: int) -> bool:
        for nbr, r, rev in self.neighbors(head):
            if nbr == tail and r == rel and rev is FORWARD:
                return True
        return False

    def save(self, path: str | Path, extra_meta: dict | None = None) -> None:
        meta = {
            "n_concepts": self.n_concepts,
            "n_relations": self.n_relations,
            "n_triples": self.n_triples,
        }
        if extra_meta:
            meta.update(extra_meta)
        write_container(
            path,
            "kg-snapshot",
            meta,
            {
                "concepts": "\n".join(self.concepts).encode("utf-8"),
                "relations": "\n".join(self.relations).encode("utf-8"),
                "triples": self.triples.astype(np.uint32),
                "weights": self.weights.astype(np.float32),
            },
        )

    @classmethod
    def load(cls, path: str | Path) -> "KnowledgeGraph":
        _, blocks = read_container(path, "kg-snapshot")
        concepts = blocks["concepts"].decode("utf-8").split("\n") if blocks["concepts"] else []
        relations = blocks["relations"].decode("utf-8").split("\n") if blocks["relations"] else []
        return build_graph(concepts, relations, blocks["triples"], blocks["weights"])


def build_graph(concepts, relations, triples, weights) -> KnowledgeGraph:
    """Assemble the immutable graph, building the sorted adjacency index."""
    triples = np.asarray(triples, dtype=np.uint32).reshape(-1, 3)
    weights = np.asarray(weights, dtype=np.float32).reshape(-1)
    n = len(triples)
    nv = len(concepts)
    # One forward entry on the head, one reverse entry on the tail.
    src = np.concatenate([triples[:, 0], triples[:, 2]])
    nbr = np.concatenate([triples[:, 2], triples[:, 0]])
    rel = np.concatenate([triples[:, 1], triples[:, 1]])
    rev = np.concatenate([np.zeros(n, np.uint8), np.ones(n, np.uint8)])
    order = np.lexsort((rev, rel, nbr, src))
    src, nbr, rel, rev = src[order], nbr[order], rel[order], rev[order]
    ptr = np.zeros(nv + 1, dtype=np.int64)
    np.add.at(ptr, src + 1, 1)
    np.cumsum(ptr, out=ptr)
    return KnowledgeGraph(
        concepts=tuple(concepts),
        relations=tuple(relations),
        triples=triples,
        weights=weights,
        _surface_index={s: i for i, s in enumerate(concepts)},
        _adj_ptr=ptr,
        _adj_nbr=nbr,
        _adj_rel=rel,
        _adj_rev=rev,
    )


def _parse_full_line(fields: list[str], language: str) -> tuple[str, str, str, float] | None:
    """Parse a ConceptNet 5.x assertion row; None when an endpoint fails the
    language filter."""
    rel_uri, start, end, meta = fields[1], fields[2], fields[3], fields[4]
    if not rel_uri.startswith("/r/"):
        raise ValueError(f"bad relation URI {rel_uri!r}")
    rel = rel_uri[len("/r/"):]
    endpoints = []
    for uri in (start, end):
        parts = uri.split("/")
        # /c/<lang>/<surface>[/<sense>...]
        if len(parts) < 4 or parts[1] != "c":
            raise ValueError(f"bad concept URI {uri!r}")
        if parts[2] != language:
            return None
        endpoints.append(normalize_surface(parts[3]))
    try:
        weight = float(json.loads(meta).get("weight", 1.0))
    except (json.JSONDecodeError, TypeError, ValueError) as exc:
        raise ValueError(f"bad metadata JSON: {exc}") from exc
    return rel, endpoints[0], endpoints[1], weight


def _parse_simple_line(fields: list[str]) -> tuple[str, str, str, float]:
    if len(fields) not in (3, 4):
        raise ValueError(f"expected 3 or 4 columns, found {len(fields)}")
    rel = fields[0].strip()
    head = normalize_surface(fields[1])
    tail = normalize_surface(fields[2])
    if not rel or not head or not tail:
        raise ValueError("empty relation or endpoint")
    weight = 1.0
    if len(fields) == 4:
        weight = float(fields[3])
    if weight < 0:
        raise ValueError(f"negative weight {weight}")
    return rel, head, tail, weight


def ingest(
    assertions_file: str | Path,
    merge_map: str | Path | dict[str, str] | None = None,
    language_filter: str = "en",
) -> tuple[KnowledgeGraph, IngestReport]:
    """Read a triple dump, merge relation types, and build the graph.

    ``merge_map`` may be a path, a preloaded dict, or None for the identity
    mapping. Raw relations absent from a non-identity map are skipped and
    counted; map entries never seen in the data produce a warning. Raises
    IngestError when nothing survives.
    """
    if isinstance(merge_map, (str, Path)):
        merge_map = load_merge_map(merge_map)
    report = IngestReport()
    best: dict[tuple[str, str, str], float] = {}
    merged_order: list[str] = []
    if merge_map is not None:
        seen_targets = set()
        for target in merge_map.values():
            if target != DELETE and target not in seen_targets:
                seen_targets.add(target)
                merged_order.append(target)
    raw_seen: set[str] = set()

    with open(assertions_file, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            report.lines_read += 1
            fields = line.split("\t")
            try:
                if len(fields) == 5 and fields[0].startswith("/a/"):
                    parsed = _parse_full_line(fields, language_filter)
                    if parsed is None:
                        report.skipped.append((lineno, "language filter"))
                        continue
                else:
                    parsed = _parse_simple_line(fields)
            except ValueError as exc:
                report.skipped.append((lineno, f"malformed: {exc}"))
                continue
            raw_rel, head, tail, weight = parsed
            raw_seen.add(raw_rel)
            if merge_map is None:
                rel = raw_rel
                if rel not in merged_order:
                    merged_order.append(rel)
            else:
                rel = merge_map.get(raw_rel)
                if rel is None:
                    report.skipped.append((lineno, f"unmapped relation {raw_rel!r}"))
                    continue
                if rel == DELETE:
                    report.skipped.append((lineno, f"deleted relation {raw_rel!r}"))
                    continue
            key = (head, rel, tail)
            if key in best:
                report.duplicates_merged += 1
                best[key] = max(best[key], weight)
            else:
                best[key] = weight

    if merge_map is not None:
        unused = sorted(set(merge_map) - raw_seen)
        for name in unused:
            report.warnings.append(f"merge map relation never seen in data: {name!r}")
    if not best:
        raise IngestError("empty knowledge graph: no triples survived ingestion")

    concepts = sorted({h for h, _, _ in best} | {t for _, _, t in best})
    cindex = {s: i for i, s in enumerate(concepts)}
    rindex = {r: i for i, r in enumerate(merged_order)}
    rows = sorted(
        (cindex[h], rindex[r], cindex[t], w) for (h, r, t), w in best.items()
    )
    triples = np.array([(h, r, t) for h, r, t, _ in rows], dtype=np.uint32)
    weights = np.array([w for _, _, _, w in rows], dtype=np.float32)
    report.triples_kept = len(rows)
    graph = build_graph(concepts, tuple(merged_order), triples, weights)
    return graph, report
