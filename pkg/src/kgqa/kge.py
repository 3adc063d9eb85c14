"""Translational triple embeddings and path pruning.

Entities and relations share one d-dimensional space; a triple (h, r, t) is
scored by ``||h + r - t||_2`` (small is plausible). Traversing a triple
backwards uses the negated relation vector, so the stored table only holds
forward relations and the two traversal directions stay exactly consistent.

Training is margin-based ranking against corrupted triples with plain
minibatch SGD, L2-renormalizing entity rows after each epoch.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path as FsPath

import numpy as np

from . import io_utils
from .kg import KnowledgeGraph
from .paths import Path, SchemaGraph

DEFAULT_GAMMA = 2.0
DEFAULT_THRESHOLD = 0.15
PRUNE_EXEMPT_BELOW = 3  # pairs with fewer paths are never pruned


@dataclass
class EmbeddingTable:
    ent: np.ndarray  # (n_concepts, d) float64
    rel: np.ndarray  # (n_relations, d) float64, forward orientation
    gamma: float = DEFAULT_GAMMA

    @property
    def dim(self) -> int:
        return self.ent.shape[1]

    def rel_vec(self, rel: int, reverse: bool = False) -> np.ndarray:
        return -self.rel[rel] if reverse else self.rel[rel]

    def signed_rel_matrix(self) -> np.ndarray:
        """(2 * n_relations, d) view: row r forward, row n_relations + r reversed."""
        return np.concatenate([self.rel, -self.rel], axis=0)

    def triple_distance(self, h: np.ndarray, r: np.ndarray, t: np.ndarray,
                        reverse: bool = False) -> np.ndarray:
        rv = -self.rel[r] if reverse else self.rel[r]
        return np.linalg.norm(self.ent[h] + rv - self.ent[t], axis=-1)

    def triple_confidence(self, h: np.ndarray, r: np.ndarray, t: np.ndarray,
                          reverse: bool = False) -> np.ndarray:
        """Plausibility in (0, 1): logistic of (gamma - distance)."""
        d = self.triple_distance(np.asarray(h), np.asarray(r), np.asarray(t),
                                 reverse)
        x = self.gamma - d
        z = np.exp(-np.abs(x))  # z <= 1, no overflow either direction
        out = np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
        return out[()]

    def path_score(self, path: Path) -> float:
        conf = 1.0
        for h, r, t in path.triples():
            conf *= float(self.triple_confidence(h, r, t))
        return conf

    def save(self, path, extra_meta: dict | None = None) -> None:
        meta = {"gamma": self.gamma, "dim": self.dim,
                "n_entities": int(self.ent.shape[0]),
                "n_relations": int(self.rel.shape[0])}
        if extra_meta:
            meta.update(extra_meta)
        io_utils.write_container(path, "kge", meta, {"ent": self.ent, "rel": self.rel})

    @classmethod
    def load(cls, path) -> "EmbeddingTable":
        meta, blocks = io_utils.read_container(path, kind="kge")
        return cls(ent=blocks["ent"], rel=blocks["rel"], gamma=float(meta["gamma"]))


def load_word_vectors(path) -> dict[str, np.ndarray] | None:
    """Plain-text vectors: one ``word v1 v2 ... vd`` row per line.

    An unreadable file is a warning, not an error; callers fall back to
    random initialization when this returns None.
    """
    vecs: dict[str, np.ndarray] = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        warnings.warn(f"word-vector file unreadable ({exc}); "
                      "falling back to random initialization")
        return None
    with fh:
        for line in fh:
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                continue
            vecs[parts[0]] = np.asarray([float(x) for x in parts[1:]], dtype=np.float64)
    return vecs


def init_embeddings(
    kg: KnowledgeGraph,
    dim: int,
    rng: np.random.Generator,
    word_vectors: dict[str, np.ndarray] | None = None,
) -> EmbeddingTable:
    """Uniform(-1/sqrt(d), 1/sqrt(d)) init, entity rows from word vectors when given.

    A multi-token concept takes the mean of its tokens' vectors; concepts with
    no covered token keep their random row.
    """
    bound = 1.0 / np.sqrt(dim)
    ent = rng.uniform(-bound, bound, size=(kg.n_concepts, dim))
    rel = rng.uniform(-bound, bound, size=(kg.n_relations, dim))
    if word_vectors is not None:
        any_dim = next(iter(word_vectors.values())).shape[0] if word_vectors else dim
        if any_dim != dim:
            raise ValueError(f"word vectors have dim {any_dim}, expected {dim}")
        for i, surface in enumerate(kg.concepts):
            toks = [word_vectors[t] for t in surface.split("_") if t in word_vectors]
            if toks:
                ent[i] = np.mean(toks, axis=0)
    norms = np.linalg.norm(ent, axis=1, keepdims=True)
    np.maximum(norms, 1e-12, out=norms)
    ent /= norms
    return EmbeddingTable(ent=ent, rel=rel)


def _renorm_entities(ent: np.ndarray) -> None:
    norms = np.linalg.norm(ent, axis=1, keepdims=True)
    np.maximum(norms, 1e-12, out=norms)  # guard all-zero rows
    ent /= norms


def train_transe(
    kg: KnowledgeGraph,
    dim: int = 100,
    margin: float = 1.0,
    lr: float = 0.01,
    epochs: int = 100,
    batch_size: int = 512,
    neg_per_pos: int = 1,
    seed: int = 0,
    word_vectors: dict[str, np.ndarray] | str | FsPath | None = None,
    log_every: int = 0,
) -> tuple[EmbeddingTable, list[float]]:
    """Margin-ranking SGD over the graph's triples.

    Corruption replaces the head or the tail (fair coin) with a uniform random
    entity. Returns the table plus mean epoch loss history; epochs=0 returns
    the initial table untouched.
    """
    if isinstance(word_vectors, (str, FsPath)):
        word_vectors = load_word_vectors(word_vectors)
    rng = np.random.default_rng(seed)
    table = init_embeddings(kg, dim, rng, word_vectors)
    ent, rel = table.ent, table.rel
    triples = kg.triples.astype(np.int64)
    n = len(triples)
    if n == 0:
        raise ValueError("cannot train on an empty graph")
    history: list[float] = []

    for epoch in range(epochs):
        order = rng.permutation(n)
        losses = []
        for lo in range(0, n, batch_size):
            idx = order[lo:lo + batch_size]
            batch = np.repeat(triples[idx], neg_per_pos, axis=0)
            h, r, t = batch[:, 0], batch[:, 1], batch[:, 2]
            m = len(batch)
            corrupt = rng.integers(0, kg.n_concepts, size=m)
            corrupt_head = rng.random(m) < 0.5
            hn = np.where(corrupt_head, corrupt, h)
            tn = np.where(corrupt_head, t, corrupt)

            d_pos_vec = ent[h] + rel[r] - ent[t]
            d_neg_vec = ent[hn] + rel[r] - ent[tn]
            d_pos = np.linalg.norm(d_pos_vec, axis=1)
            d_neg = np.linalg.norm(d_neg_vec, axis=1)
            viol = margin + d_pos - d_neg > 0
            losses.append(float(np.mean(np.maximum(0.0, margin + d_pos - d_neg))))
            if not viol.any():
                continue

            # d ||v|| / dv = v / ||v||; scatter-add because ids repeat in a batch
            gp = d_pos_vec[viol] / np.maximum(d_pos[viol, None], 1e-12)
            gn = d_neg_vec[viol] / np.maximum(d_neg[viol, None], 1e-12)
            step = lr / max(1, int(viol.sum()))
            # scatter into buffers over just the touched rows; ids repeat
            ids = np.concatenate([h[viol], t[viol], hn[viol], tn[viol]])
            gvec = np.concatenate([gp, -gp, -gn, gn])
            uniq, pos = np.unique(ids, return_inverse=True)
            upd_ent = np.zeros((len(uniq), ent.shape[1]))
            np.add.at(upd_ent, pos, gvec)
            rids = r[viol]
            runiq, rpos = np.unique(rids, return_inverse=True)
            upd_rel = np.zeros((len(runiq), rel.shape[1]))
            np.add.at(upd_rel, rpos, gp)
            np.add.at(upd_rel, rpos, -gn)
            ent[uniq] -= step * upd_ent
            rel[runiq] -= step * upd_rel

        _renorm_entities(ent)
        mean_loss = float(np.mean(losses)) if losses else 0.0
        history.append(mean_loss)
        if not np.isfinite(mean_loss):
            raise FloatingPointError(f"non-finite loss at epoch {epoch}")
        if log_every and (epoch + 1) % log_every == 0:
            print(f"epoch {epoch + 1}/{epochs} loss {mean_loss:.4f}")
    return table, history


def eval_tail_mrr(
    table: EmbeddingTable,
    triples: np.ndarray,
    known: np.ndarray | None = None,
) -> float:
    """Filtered mean reciprocal rank of the true tail.

    For each (h, r, t) every entity is ranked by ||h + r - e||; other known
    true tails for (h, r) are excluded from the ranking (filtered protocol).
    """
    known_set = set()
    if known is not None:
        known_set = {(int(a), int(b), int(c)) for a, b, c in known}
    rr = []
    for h, r, t in np.asarray(triples, dtype=np.int64):
        query = table.ent[h] + table.rel[r]
        dist = np.linalg.norm(query[None, :] - table.ent, axis=1)
        true_d = dist[t]
        better = 0
        for e in np.flatnonzero(dist < true_d):
            if e != t and (int(h), int(r), int(e)) not in known_set:
                better += 1
        rr.append(1.0 / (1 + better))
    return float(np.mean(rr))


@dataclass
class PruneReport:
    pairs_total: int = 0
    pairs_exempt: int = 0
    paths_before: int = 0
    paths_after: int = 0

    @property
    def kept_fraction(self) -> float:
        return self.paths_after / self.paths_before if self.paths_before else 1.0

    def to_dict(self) -> dict:
        return {
            "pairs_total": self.pairs_total,
            "pairs_exempt": self.pairs_exempt,
            "paths_before": self.paths_before,
            "paths_after": self.paths_after,
            "kept_fraction": self.kept_fraction,
        }


def prune_schema_graph(
    sg: SchemaGraph,
    table: EmbeddingTable,
    threshold: float = DEFAULT_THRESHOLD,
) -> PruneReport:
    """Drop low-confidence paths in place; sparse pairs are left alone.

    Pairs holding fewer than PRUNE_EXEMPT_BELOW paths keep everything. A pair
    whose paths all score below threshold keeps its single best path, so
    pruning never disconnects a previously connected pair. Node and edge sets
    are rebuilt to exactly cover what remains.
    """
    report = PruneReport(pairs_total=len(sg.paths))
    for key, plist in sorted(sg.paths.items()):
        report.paths_before += len(plist)
        if len(plist) < PRUNE_EXEMPT_BELOW:
            report.pairs_exempt += 1
            report.paths_after += len(plist)
            continue
        scores = [table.path_score(p) for p in plist]
        kept = [p for p, s in zip(plist, scores) if s >= threshold]
        if not kept:
            kept = [plist[int(np.argmax(scores))]]
        sg.paths[key] = kept
        report.paths_after += len(kept)
    sg.rebuild_cover()
    return report
