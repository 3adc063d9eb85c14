"""Graph-and-path scoring network with hierarchical attention.

One forward pass scores a single (question, candidate) instance:

  1. GCN layers contextualize the schema-graph node vectors.
  2. Each path is encoded per step as [source state; signed relation vector;
     destination state] and run through a bidirectional LSTM; the path vector
     concatenates the bi-hidden states at the first and last steps (4H dims).
  3. Per concept pair (i, j): T_ij = MLP([s; c_i; c_j]); path attention
     alpha_ijk = T_ij W1 pathvec_k, softmaxed within the pair, gives the
     attended relation vector R_ij (mean when path attention is disabled;
     a fixed per-pair random vector when the pair has no paths).
  4. Pair attention beta_ij = s W2 T_ij, softmaxed over all pairs, pools
     [R_ij; T_ij] into the graph vector g.
  5. score = sigmoid(MLP(g)).

backward() consumes the retained trace and yields exact gradients for every
parameter tensor plus the statement vector, initial node vectors, and
relation vectors, so upstream encoders and embedding tables can train too.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..io_utils import stable_seed
from ..paths import SchemaGraph
from .layers import (BiLSTM, GCNLayer, Layer, MLP, glorot, normalized_adjacency,
                     sigmoid, softmax, softmax_backward)

SCORE_EPS = 1e-15  # reported scores stay inside the open interval (0, 1)


@dataclass
class ModelConfig:
    d_node: int = 100
    gcn_dims: tuple[int, ...] = (100, 50)
    d_rel: int = 100
    lstm_hidden: int = 128
    d_t: int = 128
    t_hidden: int = 128
    d_s: int = 128
    score_hidden: int = 64
    path_attention: bool = True
    pair_attention: bool = True
    train_rel_emb: bool = True
    train_node_emb: bool = False

    @property
    def d_gcn_out(self) -> int:
        return self.gcn_dims[-1] if self.gcn_dims else self.d_node

    @property
    def d_path(self) -> int:
        return 4 * self.lstm_hidden

    @property
    def d_step(self) -> int:
        return 2 * self.d_gcn_out + self.d_rel

    def to_dict(self) -> dict:
        return {
            "d_node": self.d_node, "gcn_dims": list(self.gcn_dims),
            "d_rel": self.d_rel, "lstm_hidden": self.lstm_hidden,
            "d_t": self.d_t, "t_hidden": self.t_hidden, "d_s": self.d_s,
            "score_hidden": self.score_hidden,
            "path_attention": self.path_attention,
            "pair_attention": self.pair_attention,
            "train_rel_emb": self.train_rel_emb,
            "train_node_emb": self.train_node_emb,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["gcn_dims"] = tuple(d.get("gcn_dims", (100, 50)))
        return cls(**d)


@dataclass
class PairData:
    """One (question concept, answer concept) pair in local node rows.

    Each path is four aligned int arrays over its steps: source row, relation
    id, sign (+1 forward, -1 reversed), destination row. ``fallback`` stands
    in for the attended path vector when the pair has no paths; it is drawn
    once at instance-build time and never trained.
    """

    q_row: int
    a_row: int
    paths: list[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]
    fallback: Optional[np.ndarray] = None


@dataclass
class Instance:
    """A grounded (question, candidate) input in model-ready form."""

    example_id: str
    cand_index: int
    node_ids: np.ndarray            # (N,) global concept ids
    und_edges: list[tuple[int, int]]  # unique undirected local row pairs
    pairs: list[PairData]
    label: Optional[int] = None     # 1 correct candidate, 0 distractor
    ungrounded: bool = False        # True for the single-anchor fallback form

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)


def fallback_vector(d_path: int, *seed_parts) -> np.ndarray:
    """Deterministic stand-in path vector for a pair with no paths."""
    rng = np.random.default_rng(stable_seed("fallback", *seed_parts))
    return rng.standard_normal(d_path) / np.sqrt(d_path)


def instance_from_schema_graph(
    sg: SchemaGraph,
    example_id: str,
    cand_index: int,
    d_path: int,
    seed: int = 0,
    label: Optional[int] = None,
) -> Instance:
    """Convert a schema graph to local-row arrays the network consumes.

    Fallback vectors are keyed by the global concept ids of the pair, so
    relabeling or reordering nodes later cannot change them.
    """
    row = {c: i for i, c in enumerate(sg.nodes)}
    und = sorted({
        (min(row[h], row[t]), max(row[h], row[t]))
        for h, _, t in sg.edges if h != t
    })
    pairs = []
    for i, j in sg.pair_indices():
        qc, ac = sg.cq[i], sg.ca[j]
        arrs = []
        for path in sg.paths[(i, j)]:
            heads, rels, signs, tails = [], [], [], []
            cur = path.start
            for step in path.steps:
                heads.append(row[cur])
                rels.append(step.rel)
                signs.append(-1.0 if step.reverse else 1.0)
                tails.append(row[step.node])
                cur = step.node
            arrs.append((np.asarray(heads), np.asarray(rels),
                         np.asarray(signs, dtype=np.float64), np.asarray(tails)))
        fb = None
        if not arrs:
            fb = fallback_vector(d_path, seed, example_id, cand_index, qc, ac)
        pairs.append(PairData(q_row=row[qc], a_row=row[ac], paths=arrs, fallback=fb))
    return Instance(
        example_id=example_id,
        cand_index=cand_index,
        node_ids=np.asarray(sg.nodes, dtype=np.int64),
        und_edges=und,
        pairs=pairs,
        label=label,
    )


@dataclass
class ForwardTrace:
    inst: Instance
    s: np.ndarray
    node_init: np.ndarray
    rel_emb: np.ndarray
    adj: np.ndarray
    gcn_caches: list
    node_states: list[np.ndarray]       # per layer, [0] = input
    groups: list[dict]                  # batched LSTM runs keyed by path length
    pathvecs: list[np.ndarray]          # per pair, (k, d_path)
    t_cache: object
    T: np.ndarray                       # (P, d_t)
    alpha_hat: list[np.ndarray]         # per pair, (k,)
    R_hat: np.ndarray                   # (P, d_path)
    beta: np.ndarray
    beta_hat: np.ndarray
    g_hat: np.ndarray
    score_cache: object
    raw: float
    score: float


@dataclass
class InputGrads:
    ds: np.ndarray
    d_node_init: np.ndarray
    d_rel_emb: np.ndarray


class PathAttentionScorer(Layer):
    def __init__(self, config: ModelConfig, rng: np.random.Generator) -> None:
        super().__init__()
        self.config = config
        c = config
        self.gcn: list[GCNLayer] = []
        d_prev = c.d_node
        for li, d_out in enumerate(c.gcn_dims):
            layer = GCNLayer(rng, d_prev, d_out)
            self.gcn.append(layer)
            self._adopt(f"gcn{li}", layer)
            d_prev = d_out
        self.path_lstm = BiLSTM(rng, c.d_step, c.lstm_hidden)
        self._adopt("path_lstm", self.path_lstm)
        self.t_mlp = MLP(rng, [c.d_s + 2 * c.d_gcn_out, c.t_hidden, c.d_t])
        self._adopt("t_mlp", self.t_mlp)
        self.W1 = self._register("W1", glorot(rng, c.d_t, c.d_path))
        self.W2 = self._register("W2", glorot(rng, c.d_s, c.d_t))
        self.score_mlp = MLP(rng, [c.d_path + c.d_t, c.score_hidden, 1])
        self._adopt("score_mlp", self.score_mlp)

    # ---------------- forward ----------------

    def forward(self, inst: Instance, s: np.ndarray,
                node_init: np.ndarray, rel_emb: np.ndarray) -> ForwardTrace:
        c = self.config
        n = inst.n_nodes
        if node_init.shape != (n, c.d_node):
            raise ValueError(f"node_init shape {node_init.shape}, "
                             f"expected {(n, c.d_node)}")
        if s.shape != (c.d_s,):
            raise ValueError(f"statement vector shape {s.shape}, expected ({c.d_s},)")

        adj = normalized_adjacency(n, inst.und_edges)
        h = node_init
        gcn_caches = []
        node_states = [h]
        for layer in self.gcn:
            h, cache = layer.forward(h, adj)
            gcn_caches.append(cache)
            node_states.append(h)

        # batch path LSTM runs by length
        pathvecs = [np.zeros((len(p.paths), c.d_path)) for p in inst.pairs]
        by_len: dict[int, list[tuple[int, int]]] = {}
        for pi, pair in enumerate(inst.pairs):
            for ki, (heads, _, _, _) in enumerate(pair.paths):
                by_len.setdefault(len(heads), []).append((pi, ki))
        groups = []
        H2 = c.lstm_hidden * 2
        for length in sorted(by_len):
            members = by_len[length]
            B = len(members)
            heads = np.zeros((B, length), dtype=np.int64)
            rels = np.zeros((B, length), dtype=np.int64)
            signs = np.zeros((B, length))
            tails = np.zeros((B, length), dtype=np.int64)
            for b, (pi, ki) in enumerate(members):
                ph, pr, psg, pt = inst.pairs[pi].paths[ki]
                heads[b], rels[b], signs[b], tails[b] = ph, pr, psg, pt
            x = np.concatenate(
                [h[heads], signs[:, :, None] * rel_emb[rels], h[tails]], axis=2)
            y, lstm_cache = self.path_lstm.forward(x)
            for b, (pi, ki) in enumerate(members):
                pathvecs[pi][ki, :H2] = y[b, 0]
                pathvecs[pi][ki, H2:] = y[b, length - 1]
            groups.append({"length": length, "members": members, "heads": heads,
                           "rels": rels, "signs": signs, "tails": tails,
                           "cache": lstm_cache})

        P = len(inst.pairs)
        t_in = np.zeros((P, c.d_s + 2 * c.d_gcn_out))
        for pi, pair in enumerate(inst.pairs):
            t_in[pi] = np.concatenate([s, h[pair.q_row], h[pair.a_row]])
        T, t_cache = self.t_mlp.forward(t_in)

        alpha_hat: list[np.ndarray] = []
        R_hat = np.zeros((P, c.d_path))
        for pi, pair in enumerate(inst.pairs):
            k = len(pair.paths)
            if k == 0:
                if pair.fallback is None:
                    raise ValueError(f"pair {pi} has no paths and no fallback vector")
                alpha_hat.append(np.zeros(0))
                R_hat[pi] = pair.fallback
                continue
            if c.path_attention:
                a_hat = softmax(pathvecs[pi] @ (T[pi] @ self.W1))
            else:
                a_hat = np.full(k, 1.0 / k)
            alpha_hat.append(a_hat)
            R_hat[pi] = a_hat @ pathvecs[pi]

        if c.pair_attention:
            beta = (s @ self.W2) @ T.T
        else:
            beta = np.zeros(P)
        beta_hat = softmax(beta)
        u = np.concatenate([R_hat, T], axis=1)
        g_hat = beta_hat @ u

        raw_arr, score_cache = self.score_mlp.forward(g_hat)
        raw = float(raw_arr[0])
        score = float(np.clip(sigmoid(np.array([raw]))[0], SCORE_EPS, 1.0 - SCORE_EPS))
        return ForwardTrace(
            inst=inst, s=s, node_init=node_init, rel_emb=rel_emb, adj=adj,
            gcn_caches=gcn_caches, node_states=node_states, groups=groups,
            pathvecs=pathvecs, t_cache=t_cache, T=T, alpha_hat=alpha_hat,
            R_hat=R_hat, beta=beta, beta_hat=beta_hat, g_hat=g_hat,
            score_cache=score_cache, raw=raw, score=score)

    # ---------------- backward ----------------

    def backward(self, trace: ForwardTrace, d_raw: float) -> InputGrads:
        """Accumulate parameter gradients; return input-side gradients.

        d_raw is dLoss/dRaw where raw is the pre-sigmoid scalar; losses are
        defined on raw directly (logit form) so the chain stays exact.
        """
        c = self.config
        inst = trace.inst
        P = len(inst.pairs)
        H2 = c.lstm_hidden * 2
        d_g = self.score_mlp.backward(np.array([float(d_raw)]), trace.score_cache)

        u = np.concatenate([trace.R_hat, trace.T], axis=1)
        d_beta_hat = u @ d_g
        du = np.outer(trace.beta_hat, d_g)
        dR_hat = du[:, :c.d_path].copy()
        dT = du[:, c.d_path:].copy()

        ds = np.zeros(c.d_s)
        if c.pair_attention:
            d_beta = softmax_backward(trace.beta_hat, d_beta_hat)
            # beta_p = (s W2) . T_p
            sW2 = trace.s @ self.W2
            ds += self.W2 @ (trace.T.T @ d_beta)
            dT += np.outer(d_beta, sW2)
            self._grads["W2"] += np.outer(trace.s, trace.T.T @ d_beta)

        d_pathvecs = [np.zeros_like(v) for v in trace.pathvecs]
        for pi, pair in enumerate(inst.pairs):
            k = len(pair.paths)
            if k == 0:
                continue  # fallback vector is a constant input
            V = trace.pathvecs[pi]
            a_hat = trace.alpha_hat[pi]
            d_a_hat = V @ dR_hat[pi]
            d_pathvecs[pi] += np.outer(a_hat, dR_hat[pi])
            if c.path_attention:
                d_alpha = softmax_backward(a_hat, d_a_hat)
                w1v = self.W1 @ (V.T @ d_alpha)       # d alpha_k / d T
                dT[pi] += w1v
                d_pathvecs[pi] += np.outer(d_alpha, self.W1.T @ trace.T[pi])
                self._grads["W1"] += np.outer(trace.T[pi], d_alpha @ V)

        d_node = np.zeros((inst.n_nodes, c.d_gcn_out))
        d_rel = np.zeros_like(trace.rel_emb)
        h = trace.node_states[-1]
        for grp in trace.groups:
            members = grp["members"]
            B, L = grp["heads"].shape
            dy = np.zeros((B, L, H2))
            for b, (pi, ki) in enumerate(members):
                dy[b, 0] += d_pathvecs[pi][ki, :H2]
                dy[b, L - 1] += d_pathvecs[pi][ki, H2:]
            dx = self.path_lstm.backward(dy, grp["cache"])
            flat_heads = grp["heads"].ravel()
            flat_tails = grp["tails"].ravel()
            flat_rels = grp["rels"].ravel()
            dx_flat = dx.reshape(B * L, -1)
            np.add.at(d_node, flat_heads, dx_flat[:, :c.d_gcn_out])
            signed = grp["signs"].ravel()[:, None] * dx_flat[:, c.d_gcn_out:c.d_gcn_out + c.d_rel]
            np.add.at(d_rel, flat_rels, signed)
            np.add.at(d_node, flat_tails, dx_flat[:, c.d_gcn_out + c.d_rel:])

        d_t_in = self.t_mlp.backward(dT, trace.t_cache)
        ds += d_t_in[:, :c.d_s].sum(axis=0)
        for pi, pair in enumerate(inst.pairs):
            d_node[pair.q_row] += d_t_in[pi, c.d_s:c.d_s + c.d_gcn_out]
            d_node[pair.a_row] += d_t_in[pi, c.d_s + c.d_gcn_out:]

        dh = d_node
        for layer, cache in zip(reversed(self.gcn), reversed(trace.gcn_caches)):
            dh = layer.backward(dh, cache)
        return InputGrads(ds=ds, d_node_init=dh, d_rel_emb=d_rel)


def bce_loss(raw: float, label: int) -> tuple[float, float]:
    """Binary cross-entropy on the logit; returns (loss, dloss/draw).

    Computed in logit form (softplus) so extreme raw values stay finite.
    """
    loss = max(raw, 0.0) - raw * label + np.log1p(np.exp(-abs(raw)))
    return float(loss), float(sigmoid(np.array([raw]))[0] - label)


def listwise_loss(raws: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Softmax cross-entropy over one question's candidate logits."""
    p = softmax(raws)
    z = raws - np.max(raws)
    loss = float(np.log(np.sum(np.exp(z))) - z[label])
    grad = p.copy()
    grad[label] -= 1.0
    return loss, grad
