"""Minimal weighted vertex cover by local search, with and without the
memory mechanism, plus an exhaustive oracle for small graphs.

The cover objective is sum_i w_i * S_i + rho * (# uncovered edges): the
penalty coefficient rho makes infeasible states expensive, so any rho larger
than the maximum vertex weight makes greedy fixed points feasible.

Greedy best response visits vertices round-robin in a fixed order
(descending weight, ties by index) and flips a vertex's bit whenever that
strictly lowers the objective; it is deterministic and converges to an
initial-state-dependent local minimum. The memory variant lets each vertex,
with probability mu, replay an action drawn uniformly from its own bounded
action history instead of the best response. A deep history ring (depth of
the same order as the round count) keeps early actions replayable, so the
exploration pressure decays slowly instead of freezing once the ring fills
with the converged action. The best feasible state seen anywhere along the
run is returned.
"""

from dataclasses import dataclass, field

import numpy as np

from dropprune.sampling import make_rng


@dataclass(frozen=True)
class WeightedGraph:
    """Positive vertex weights and an undirected simple edge list."""

    weights: np.ndarray
    edges: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        object.__setattr__(self, "weights", w)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a nonempty 1-d array")
        if (w <= 0).any():
            raise ValueError("all vertex weights must be positive")
        canon = []
        seen = set()
        for u, v in self.edges:
            if u == v:
                raise ValueError(f"self-loop on vertex {u}")
            if not (0 <= u < w.size and 0 <= v < w.size):
                raise ValueError(f"edge ({u}, {v}) out of range for {w.size} vertices")
            key = (min(u, v), max(u, v))
            if key in seen:
                raise ValueError(f"duplicate edge {key}")
            seen.add(key)
            canon.append(key)
        object.__setattr__(self, "edges", tuple(canon))

    @property
    def num_vertices(self):
        return self.weights.size

    def neighbors(self):
        adj = [[] for _ in range(self.num_vertices)]
        for u, v in self.edges:
            adj[u].append(v)
            adj[v].append(u)
        return adj


@dataclass(frozen=True)
class MwvcConfig:
    mutation_prob: float = 0.2
    memory_depth: int = 400
    max_rounds: int = 400
    rho: float = 0.0  # 0 means "auto": 2 * max weight + 1
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.mutation_prob <= 1.0):
            raise ValueError("mutation_prob must be in [0, 1]")
        if self.memory_depth < 1:
            raise ValueError("memory_depth must be >= 1")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if self.rho < 0:
            raise ValueError("rho must be nonnegative")


def _resolve_rho(graph, cfg):
    return cfg.rho if cfg.rho > 0 else 2.0 * float(graph.weights.max()) + 1.0


def _visit_order(graph):
    """Fixed round-robin order: heaviest vertices respond first, ties by index."""
    return np.argsort(-graph.weights, kind="stable")


@dataclass
class CoverState:
    """Cover bits plus each vertex's bounded action history."""

    bits: np.ndarray
    memory: list = field(default_factory=list)

    def copy(self):
        return CoverState(self.bits.copy(), [list(h) for h in self.memory])


def cover_objective(graph, bits, rho):
    """Weighted cover cost plus rho per uncovered edge."""
    bits = np.asarray(bits)
    if bits.shape != (graph.num_vertices,):
        raise ValueError("cover vector length must equal the vertex count")
    cost = float(graph.weights @ bits)
    uncovered = sum(1 for u, v in graph.edges if not (bits[u] or bits[v]))
    return cost + rho * uncovered


def is_cover(graph, bits):
    return all(bits[u] or bits[v] for u, v in graph.edges)


def _flip_delta(graph, adj, bits, v, rho):
    """Objective change from flipping vertex v in the current state."""
    if bits[v]:
        # removing v uncovers each incident edge whose other end is out
        newly_uncovered = sum(1 for u in adj[v] if not bits[u])
        return -float(graph.weights[v]) + rho * newly_uncovered
    newly_covered = sum(1 for u in adj[v] if not bits[u])
    return float(graph.weights[v]) - rho * newly_covered


def solve_greedy(graph, cfg=MwvcConfig(), initial=None):
    """Deterministic round-robin best response until a full quiet round.

    Returns (CoverState, objective). With rho above the maximum vertex
    weight the fixed point is a valid cover.
    """
    rho = _resolve_rho(graph, cfg)
    adj = graph.neighbors()
    order = _visit_order(graph)
    bits = (
        np.ones(graph.num_vertices, dtype=np.uint8)
        if initial is None
        else np.asarray(initial, dtype=np.uint8).copy()
    )
    for _ in range(cfg.max_rounds):
        changed = False
        for v in order:
            if _flip_delta(graph, adj, bits, v, rho) < 0.0:
                bits[v] ^= 1
                changed = True
        if not changed:
            break
    state = CoverState(bits=bits, memory=[[int(bits[v])] for v in range(graph.num_vertices)])
    return state, cover_objective(graph, bits, rho)


def solve_memory(graph, cfg, restarts=1, initial=None):
    """Stochastic best response with memory replay; best feasible state wins.

    Each round every vertex either best-responds (prob 1 - mu) or replays an
    action drawn uniformly from its own history ring (depth H). The action
    actually taken is appended to the ring. Tracks the minimum-cost feasible
    state seen across all rounds and restarts.
    """
    if cfg.mutation_prob == 0.0:
        return solve_greedy(graph, cfg, initial=initial)
    rho = _resolve_rho(graph, cfg)
    adj = graph.neighbors()
    order = _visit_order(graph)
    rng = make_rng(cfg.seed)
    nv = graph.num_vertices

    best_bits = None
    best_cost = np.inf
    for _ in range(restarts):
        bits = (
            np.ones(nv, dtype=np.uint8)
            if initial is None
            else np.asarray(initial, dtype=np.uint8).copy()
        )
        memory = [[int(bits[v])] for v in range(nv)]
        if is_cover(graph, bits):
            cost = float(graph.weights @ bits)
            if cost < best_cost:
                best_cost, best_bits = cost, bits.copy()
        for _ in range(cfg.max_rounds):
            for v in order:
                if rng.random() < cfg.mutation_prob:
                    action = memory[v][rng.integers(len(memory[v]))]
                else:
                    action = int(bits[v])
                    if _flip_delta(graph, adj, bits, v, rho) < 0.0:
                        action = 1 - action
                bits[v] = action
                memory[v].append(action)
                if len(memory[v]) > cfg.memory_depth:
                    memory[v].pop(0)
                if is_cover(graph, bits):
                    cost = float(graph.weights @ bits)
                    if cost < best_cost:
                        best_cost, best_bits = cost, bits.copy()
    if best_bits is None:
        # never feasible along the run: fall back to the final state
        best_bits = bits
        best_cost = cover_objective(graph, bits, rho)
    state = CoverState(bits=best_bits, memory=[[int(b)] for b in best_bits])
    return state, best_cost


def solve_exact(graph, max_vertices=24):
    """Exhaustive minimum over all 2^V subsets (V <= 24 enforced).

    Ties broken toward the lexicographically smallest cover vector.
    Returns (bits, cost).
    """
    nv = graph.num_vertices
    if nv > max_vertices:
        raise ValueError(f"exhaustive solver limited to {max_vertices} vertices, got {nv}")
    n_subsets = 1 << nv
    chunk = 1 << 16
    weights = graph.weights
    best_cost = np.inf
    best_key = None
    best_id = None
    for start in range(0, n_subsets, chunk):
        ids = np.arange(start, min(start + chunk, n_subsets), dtype=np.int64)
        covered = np.ones(ids.size, dtype=bool)
        for u, v in graph.edges:
            covered &= (((ids >> u) | (ids >> v)) & 1).astype(bool)
        if not covered.any():
            continue
        feasible = ids[covered]
        cost = np.zeros(feasible.size)
        for v in range(nv):
            cost += weights[v] * ((feasible >> v) & 1)
        lo = float(cost.min())
        if lo > best_cost + 1e-12:
            continue
        ties = feasible[np.abs(cost - lo) <= 1e-12]
        # lexicographic key: vertex 0 is the most significant position
        keys = np.zeros(ties.size, dtype=np.int64)
        for v in range(nv):
            keys |= ((ties >> v) & 1) << (nv - 1 - v)
        pick = int(np.argmin(keys))
        if lo < best_cost - 1e-12 or (best_key is None or keys[pick] < best_key):
            best_cost = lo
            best_key = int(keys[pick])
            best_id = int(ties[pick])
    bits = np.array([(best_id >> v) & 1 for v in range(nv)], dtype=np.uint8)
    return bits, float(weights @ bits)


def parse_graph(text):
    """Edge-list format: first line "V E", V weight lines, E lines "u v"."""
    tokens = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not tokens:
        raise ValueError("empty graph file")
    if len(tokens[0]) != 2:
        raise ValueError('first line must be "V E"')
    nv, ne = int(tokens[0][0]), int(tokens[0][1])
    if len(tokens) != 1 + nv + ne:
        raise ValueError(f"expected {1 + nv + ne} lines, found {len(tokens)}")
    weights = [float(t[0]) for t in tokens[1:1 + nv]]
    edges = [(int(t[0]), int(t[1])) for t in tokens[1 + nv:]]
    return WeightedGraph(weights=np.array(weights), edges=tuple(edges))


def load_graph(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_graph(fh.read())


def random_graph(seed, num_vertices, edge_prob, weight_range=(1.0, 10.0)):
    """Seeded G(n, p) with uniform weights; used for corpora and fuzzing."""
    rng = make_rng(seed)
    weights = rng.uniform(weight_range[0], weight_range[1], size=num_vertices)
    edges = [
        (u, v)
        for u in range(num_vertices)
        for v in range(u + 1, num_vertices)
        if rng.random() < edge_prob
    ]
    return WeightedGraph(weights=weights, edges=tuple(edges))
