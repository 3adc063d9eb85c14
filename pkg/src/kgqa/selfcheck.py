"""Built-in verification suites: oracles and property checks.

Each suite pits a component against an independent reference: the path
finder against exhaustive permutation enumeration over the raw triple list,
analytic gradients against central finite differences, attention against its
closed-form degenerate cases. The CLI `selfcheck` subcommand runs them all
and reports pass/fail; the test suite calls the same functions with the
sizes and tolerances pinned in the acceptance tests.
"""

from __future__ import annotations

import itertools
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .io_utils import stable_seed
from .kg import KnowledgeGraph, build_graph
from .kge import EmbeddingTable, prune_schema_graph
from .model.gradcheck import check_gradients
from .model.network import (Instance, PathAttentionScorer, ModelConfig, PairData, bce_loss,
                            fallback_vector)
from .paths import SchemaGraph, build_schema_graph, find_paths
from .statement import ToyStatementEncoder

# small dims keep finite differences affordable while exercising every tensor
CHECK_CONFIG = ModelConfig(
    d_node=6, gcn_dims=(5, 4), d_rel=6, lstm_hidden=4, d_t=6, t_hidden=7,
    d_s=8, score_hidden=5, train_rel_emb=True, train_node_emb=True)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.detail}"


@dataclass
class SelfcheckReport:
    checks: list[CheckResult] = field(default_factory=list)

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {
            "all_passed": bool(self.all_passed),
            "checks": [
                {"name": c.name, "passed": bool(c.passed), "detail": c.detail}
                for c in self.checks
            ],
        }


# ------------------------------------------------------------ random inputs

def random_kg(rng: np.random.Generator, n_nodes: int, density: float,
              n_relations: int = 3) -> KnowledgeGraph:
    concepts = tuple(f"n{i:03d}" for i in range(n_nodes))
    relations = tuple(f"r{i}" for i in range(n_relations))
    triples = set()
    for a in range(n_nodes):
        for b in range(n_nodes):
            if a != b and rng.random() < density:
                triples.add((a, int(rng.integers(n_relations)), b))
    if not triples:
        triples.add((0, 0, min(1, n_nodes - 1)))
    arr = np.asarray(sorted(triples), dtype=np.uint32)
    return build_graph(concepts, relations, arr, np.ones(len(arr)))


def random_instance(
    rng: np.random.Generator,
    config: ModelConfig,
    max_nodes: int = 6,
    max_paths: int = 4,
    n_relations: int = 3,
    allow_zero_paths: bool = True,
) -> tuple[Instance, np.ndarray, np.ndarray, np.ndarray]:
    """Random model input: (instance, s, node_init, rel_emb).

    Paths are random simple walks over the node rows; their hops are added
    to the undirected edge set so the graph covers them.
    """
    n = int(rng.integers(3, max_nodes + 1))
    n_q = int(rng.integers(1, 3))
    n_a = int(rng.integers(1, 3))
    rows = rng.permutation(n)
    q_rows = [int(r) for r in rows[:n_q]]
    a_rows = [int(r) for r in rows[n_q:n_q + n_a]]
    edges = set()
    pairs = []
    for qi in q_rows:
        for aj in a_rows:
            k = int(rng.integers(0, max_paths + 1)) if allow_zero_paths \
                else int(rng.integers(1, max_paths + 1))
            paths = []
            for _ in range(k):
                length = int(rng.integers(1, 4))
                mids = [int(x) for x in
                        rng.choice([r for r in range(n) if r not in (qi, aj)],
                                   size=min(length - 1, n - 2), replace=False)]
                seq = [qi] + mids + [aj]
                heads = np.asarray(seq[:-1])
                tails = np.asarray(seq[1:])
                rels = rng.integers(0, n_relations, size=len(heads))
                signs = np.where(rng.random(len(heads)) < 0.5, 1.0, -1.0)
                for hh, tt in zip(heads, tails):
                    edges.add((min(int(hh), int(tt)), max(int(hh), int(tt))))
                paths.append((heads, rels.astype(np.int64), signs, tails))
            fb = None
            if not paths:
                fb = fallback_vector(config.d_path, int(rng.integers(2**31)), qi, aj)
            pairs.append(PairData(q_row=qi, a_row=aj, paths=paths, fallback=fb))
    # a few extra background edges
    for _ in range(n):
        a, b = rng.integers(0, n, size=2)
        if a != b:
            edges.add((min(int(a), int(b)), max(int(a), int(b))))
    inst = Instance(
        example_id=f"rand-{int(rng.integers(1 << 30))}",
        cand_index=0,
        node_ids=np.arange(n, dtype=np.int64),
        und_edges=sorted(edges),
        pairs=pairs)
    s = rng.standard_normal(config.d_s)
    node_init = rng.standard_normal((n, config.d_node))
    rel_emb = rng.standard_normal((n_relations, config.d_rel))
    return inst, s, node_init, rel_emb


def permute_instance(
    inst: Instance, node_init: np.ndarray, rng: np.random.Generator,
) -> tuple[Instance, np.ndarray]:
    """Relabel node rows and shuffle pair/path list order; same semantics."""
    n = inst.n_nodes
    perm = rng.permutation(n)          # old row i -> new row perm[i]
    new_ids = np.empty_like(inst.node_ids)
    new_init = np.empty_like(node_init)
    for old in range(n):
        new_ids[perm[old]] = inst.node_ids[old]
        new_init[perm[old]] = node_init[old]
    edges = sorted({(min(int(perm[a]), int(perm[b])),
                     max(int(perm[a]), int(perm[b])))
                    for a, b in inst.und_edges})
    pairs = []
    for pair in inst.pairs:
        paths = [
            (perm[h].astype(np.int64), r.copy(), sg.copy(), perm[t].astype(np.int64))
            for h, r, sg, t in pair.paths
        ]
        order = rng.permutation(len(paths))
        paths = [paths[int(k)] for k in order]
        pairs.append(PairData(
            q_row=int(perm[pair.q_row]), a_row=int(perm[pair.a_row]),
            paths=paths,
            fallback=None if pair.fallback is None else pair.fallback.copy()))
    pair_order = rng.permutation(len(pairs))
    pairs = [pairs[int(k)] for k in pair_order]
    return Instance(
        example_id=inst.example_id, cand_index=inst.cand_index,
        node_ids=new_ids, und_edges=edges, pairs=pairs,
        label=inst.label), new_init


# ------------------------------------------------------------ path oracle

def brute_force_paths(
    n_concepts: int,
    triples: np.ndarray,
    src: int,
    dst: int,
    max_edges: int,
) -> set[tuple]:
    """Exhaustive simple-path enumeration straight from the triple list.

    Walks every permutation of intermediate nodes and every combination of
    parallel (relation, orientation) options per hop. Independent of the
    adjacency-index DFS it checks: no shared traversal code.
    """
    options: dict[tuple[int, int], list[tuple[int, bool]]] = defaultdict(list)
    for h, r, t in np.asarray(triples, dtype=np.int64):
        options[(int(h), int(t))].append((int(r), False))
        options[(int(t), int(h))].append((int(r), True))
    others = [v for v in range(n_concepts) if v not in (src, dst)]
    found = set()
    for n_mid in range(0, max_edges):
        for mids in itertools.permutations(others, n_mid):
            seq = (src, *mids, dst)
            hop_opts = [options.get((seq[i], seq[i + 1]), [])
                        for i in range(len(seq) - 1)]
            if any(not o for o in hop_opts):
                continue
            for combo in itertools.product(*hop_opts):
                found.add(tuple(
                    (rel, rev, seq[i + 1]) for i, (rel, rev) in enumerate(combo)))
    return found


def path_oracle_suite(seed: int = 0, n_graphs: int = 200, max_nodes: int = 12,
                      density: float = 0.3, max_edges: int = 3) -> CheckResult:
    rng = np.random.default_rng(stable_seed("path-oracle", seed))
    mismatches = 0
    compared = 0
    for _ in range(n_graphs):
        n = int(rng.integers(4, max_nodes + 1))
        kg = random_kg(rng, n, density)
        picks = rng.permutation(n)
        cq = [int(x) for x in picks[:int(rng.integers(1, 3))]]
        ca = [int(x) for x in picks[len(cq):len(cq) + int(rng.integers(1, 3))]]
        for q in cq:
            for a in ca:
                got, truncated = find_paths(kg, q, a, max_edges=max_edges,
                                            cap=10 ** 9)
                assert not truncated
                got_set = {tuple((s.rel, s.reverse, s.node) for s in p.steps)
                           for p in got}
                want = brute_force_paths(n, kg.triples, q, a, max_edges)
                compared += 1
                if got_set != want:
                    mismatches += 1
    return CheckResult(
        name="path-enumeration-oracle",
        passed=mismatches == 0,
        detail=f"{compared} (source, target) pairs over {n_graphs} graphs, "
               f"{mismatches} mismatches")


# ------------------------------------------------------------ gradient suite

def _enc_inputs(rng: np.random.Generator) -> tuple[ToyStatementEncoder, np.ndarray]:
    vocab = {"<sep>": 0, "<unk>": 1}
    for i in range(8):
        vocab[f"w{i}"] = len(vocab)
    enc = ToyStatementEncoder(vocab, d_embed=5, d_hidden=CHECK_CONFIG.d_s // 2,
                              rng=rng)
    ids = rng.integers(0, len(vocab), size=int(rng.integers(3, 7)))
    return enc, ids.astype(np.int64)


def gradient_suite(seed: int = 0, n_instances: int = 20,
                   tol: float = 1e-4) -> CheckResult:
    """Finite-difference check over every trainable tensor.

    The loss is binary cross-entropy on the network logit with the statement
    vector produced by a live toy encoder, so encoder tensors, relation
    vectors, and the entity table are all in scope.
    """
    rng = np.random.default_rng(stable_seed("gradcheck", seed))
    worst = 0.0
    worst_name = ""
    for idx in range(n_instances):
        cfg = CHECK_CONFIG
        net = PathAttentionScorer(cfg, rng)
        enc, ids = _enc_inputs(rng)
        inst, _, node_init, rel_emb = random_instance(rng, cfg)
        node_table = np.zeros((inst.n_nodes + 2, cfg.d_node))
        node_table[:inst.n_nodes] = node_init
        node_table[inst.n_nodes:] = rng.standard_normal((2, cfg.d_node))
        label = idx % 2

        def loss_fn() -> float:
            s, _ = enc.forward(ids)
            trace = net.forward(inst, s, node_table[inst.node_ids], rel_emb)
            return bce_loss(trace.raw, label)[0]

        net.zero_grad()
        enc.zero_grad()
        s, enc_cache = enc.forward(ids)
        trace = net.forward(inst, s, node_table[inst.node_ids], rel_emb)
        _, d_raw = bce_loss(trace.raw, label)
        in_grads = net.backward(trace, d_raw)
        enc.backward(in_grads.ds, enc_cache)
        d_node_table = np.zeros_like(node_table)
        np.add.at(d_node_table, inst.node_ids, in_grads.d_node_init)

        tensors = {f"net.{k}": v for k, v in net.params().items()}
        tensors.update({f"enc.{k}": v for k, v in enc.params().items()})
        tensors["rel_emb"] = rel_emb
        tensors["node_emb"] = node_table
        analytic = {f"net.{k}": v for k, v in net.grads().items()}
        analytic.update({f"enc.{k}": v for k, v in enc.grads().items()})
        analytic["rel_emb"] = in_grads.d_rel_emb
        analytic["node_emb"] = d_node_table

        report = check_gradients(loss_fn, tensors, analytic,
                                 seed=stable_seed("gc-entries", seed, idx))
        for name, err in report.items():
            if err > worst:
                worst = err
                worst_name = name
    return CheckResult(
        name="gradient-oracle",
        passed=worst < tol,
        detail=f"{n_instances} instances, max rel err {worst:.3e} "
               f"({worst_name}), tolerance {tol:g}")


# ------------------------------------------------------------ attention suites

def degeneracy_suite(seed: int = 0, n_instances: int = 25,
                     tol: float = 1e-9) -> CheckResult:
    """W1 = W2 = 0 must reproduce plain mean pooling of [R; T]."""
    rng = np.random.default_rng(stable_seed("degeneracy", seed))
    worst = 0.0
    for _ in range(n_instances):
        cfg = CHECK_CONFIG
        net = PathAttentionScorer(cfg, rng)
        net.params()["W1"][...] = 0.0
        net.params()["W2"][...] = 0.0
        inst, s, node_init, rel_emb = random_instance(rng, cfg)
        trace = net.forward(inst, s, node_init, rel_emb)
        rows = []
        for pi, pair in enumerate(inst.pairs):
            if pair.paths:
                r = np.mean(trace.pathvecs[pi], axis=0)
            else:
                r = pair.fallback
            rows.append(np.concatenate([r, trace.T[pi]]))
        g_ref = np.sum(rows, axis=0) / len(rows)
        worst = max(worst, float(np.max(np.abs(g_ref - trace.g_hat))))
    return CheckResult(
        name="attention-degeneracy",
        passed=worst <= tol,
        detail=f"max |g_hat - mean-pool g| = {worst:.3e}, tolerance {tol:g}")


def normalization_suite(seed: int = 0, n_instances: int = 50,
                        tol: float = 1e-6) -> CheckResult:
    """Attention groups sum to 1; huge-magnitude inputs stay finite."""
    rng = np.random.default_rng(stable_seed("normalization", seed))
    worst = 0.0
    finite = True
    for idx in range(n_instances):
        cfg = CHECK_CONFIG
        net = PathAttentionScorer(cfg, rng)
        inst, s, node_init, rel_emb = random_instance(rng, cfg)
        if idx % 3 == 0:  # push magnitudes to the 1e3 regime
            s = s * 1e3
            node_init = node_init * 1e3
            rel_emb = rel_emb * 1e3
            for name in ("W1", "W2"):
                net.params()[name][...] *= 1e3
        trace = net.forward(inst, s, node_init, rel_emb)
        for a_hat in trace.alpha_hat:
            if len(a_hat):
                worst = max(worst, abs(float(np.sum(a_hat)) - 1.0))
                finite &= bool(np.all(np.isfinite(a_hat)))
        worst = max(worst, abs(float(np.sum(trace.beta_hat)) - 1.0))
        finite &= bool(np.all(np.isfinite(trace.beta_hat)))
        finite &= bool(np.isfinite(trace.score))
        finite &= 0.0 < trace.score < 1.0
    return CheckResult(
        name="attention-normalization",
        passed=finite and worst <= tol,
        detail=f"max |sum - 1| = {worst:.3e}, all finite = {finite}")


def permutation_suite(seed: int = 0, n_instances: int = 30,
                      tol: float = 1e-9) -> CheckResult:
    rng = np.random.default_rng(stable_seed("permutation", seed))
    worst = 0.0
    for _ in range(n_instances):
        cfg = CHECK_CONFIG
        net = PathAttentionScorer(cfg, rng)
        inst, s, node_init, rel_emb = random_instance(rng, cfg)
        base = net.forward(inst, s, node_init, rel_emb).score
        for _ in range(3):
            p_inst, p_init = permute_instance(inst, node_init, rng)
            again = net.forward(p_inst, s, p_init, rel_emb).score
            worst = max(worst, abs(base - again))
    return CheckResult(
        name="permutation-invariance",
        passed=worst < tol,
        detail=f"max |score delta| = {worst:.3e}, tolerance {tol:g}")


# ------------------------------------------------------------ pruning suite

def _random_schema_graphs(rng: np.random.Generator, n: int):
    for _ in range(n):
        nodes = int(rng.integers(6, 10))
        kg = random_kg(rng, nodes, 0.35)
        picks = rng.permutation(nodes)
        cq = [int(picks[0])]
        ca = [int(x) for x in picks[1:1 + int(rng.integers(1, 3))]]
        sg = build_schema_graph(kg, cq, ca, max_edges=3, cap=200)
        dim = 8
        erng = np.random.default_rng(int(rng.integers(2 ** 31)))
        table = EmbeddingTable(
            ent=erng.standard_normal((nodes, dim)),
            rel=erng.standard_normal((kg.n_relations, dim)),
            gamma=2.0)
        yield sg, table


def pruning_suite(seed: int = 0, n_graphs: int = 40) -> CheckResult:
    """Threshold meaning, sparse-pair exemption, monotonicity, zero identity."""
    rng = np.random.default_rng(stable_seed("pruning", seed))
    problems = []
    for gi, (sg, table) in enumerate(_random_schema_graphs(rng, n_graphs)):
        t1, t2 = sorted(rng.uniform(0.05, 0.9, size=2))
        copies = {t: SchemaGraph.from_dict(sg.to_dict()) for t in (0.0, t1, t2)}
        for t, copy_sg in copies.items():
            prune_schema_graph(copy_sg, table, threshold=t)
        for key, orig in sg.paths.items():
            keys = {p.sort_key() for p in orig}
            zero = {p.sort_key() for p in copies[0.0].paths[key]}
            k1 = {p.sort_key() for p in copies[t1].paths[key]}
            k2 = {p.sort_key() for p in copies[t2].paths[key]}
            if zero != keys:
                problems.append(f"g{gi}{key}: threshold 0 not identity")
            if len(orig) < 3 and (k1 != keys or k2 != keys):
                problems.append(f"g{gi}{key}: sparse pair was pruned")
            if not k2 <= k1:
                problems.append(f"g{gi}{key}: higher threshold kept extra paths")
            if orig and (not k1 or not k2):
                problems.append(f"g{gi}{key}: pair lost all paths")
            scores = {p.sort_key(): table.path_score(p) for p in orig}
            if len(orig) >= 3:
                best = max(scores.values())
                for t, kept in ((t1, k1), (t2, k2)):
                    for pk in kept:
                        if scores[pk] < t and scores[pk] < best:
                            problems.append(
                                f"g{gi}{key}: kept sub-threshold non-best path")
    return CheckResult(
        name="pruning-semantics",
        passed=not problems,
        detail=("ok" if not problems else "; ".join(problems[:4]))
               + f" ({n_graphs} graphs)")


# ------------------------------------------------------------ entry point

def run_selfcheck(seed: int = 0, quick: bool = False) -> SelfcheckReport:
    sizes = {
        "grad": 5 if quick else 20,
        "oracle": 40 if quick else 200,
        "inst": 10 if quick else 25,
    }
    report = SelfcheckReport()
    report.checks.append(gradient_suite(seed, n_instances=sizes["grad"]))
    report.checks.append(path_oracle_suite(seed, n_graphs=sizes["oracle"]))
    report.checks.append(degeneracy_suite(seed, n_instances=sizes["inst"]))
    report.checks.append(normalization_suite(seed, n_instances=2 * sizes["inst"]))
    report.checks.append(permutation_suite(seed, n_instances=sizes["inst"]))
    report.checks.append(pruning_suite(seed, n_graphs=sizes["inst"] + 15))
    return report
