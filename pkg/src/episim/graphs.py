"""Explicit contact structures: attributed graphs and per-iteration sampling.

A contact graph stores who *can* meet whom; which ties fire in a given
iteration is drawn afresh every time. Each node activates each of its
edges independently with its activation probability, and every activated
slot is rewired to a uniformly random node anywhere in the network with
the long-range probability ``p`` (``p=0``: purely local mixing, ``p=1``:
fully mixed). A slot is an interaction event; the same partner can be
met twice in one iteration.

Generation of the two synthetic families (preferential attachment and
uniformly random edges) is delegated to networkx and then frozen into
flat adjacency arrays.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import networkx as nx
import numpy as np

from episim.compartments import ConfigurationError


@dataclass
class ContactGraph:
    """Undirected simple graph with per-node attributes and activity.

    Node ids are 0..n-1. ``neighbors[v]`` is a sorted array of v's
    neighbors; ``activation[v]`` is the per-edge activation probability
    used by the contact sampler. Attribute columns are static: only an
    agent's compartment changes during a simulation, and that lives in
    the engine, not here.
    """

    n: int
    neighbors: list[np.ndarray]
    activation: np.ndarray
    attributes: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.neighbors) != self.n:
            raise ConfigurationError("adjacency size does not match n")
        if self.activation.shape != (self.n,):
            raise ConfigurationError("activation array does not match n")
        if np.any((self.activation < 0) | (self.activation > 1)):
            raise ConfigurationError("activation probabilities must be in [0, 1]")

    @property
    def degrees(self) -> np.ndarray:
        return np.array([len(nb) for nb in self.neighbors], dtype=np.int64)

    @property
    def edge_count(self) -> int:
        return int(self.degrees.sum() // 2)

    @classmethod
    def from_edges(cls, n: int, edges, activation: float | np.ndarray = 1.0,
                   attributes: dict[str, np.ndarray] | None = None,
                   ) -> "ContactGraph":
        adj: list[set[int]] = [set() for _ in range(n)]
        for u, v in edges:
            if u == v:
                raise ConfigurationError(f"self-loop at node {u}")
            if not (0 <= u < n and 0 <= v < n):
                raise ConfigurationError(f"edge ({u}, {v}) outside 0..{n - 1}")
            adj[u].add(v)
            adj[v].add(u)
        neighbors = [np.array(sorted(s), dtype=np.int64) for s in adj]
        act = (np.full(n, float(activation))
               if np.isscalar(activation) else np.asarray(activation, float))
        return cls(n, neighbors, act, attributes or {})


def generate_graph(model: str, n: int, seed: int, *,
                   m: int | None = None, p_edge: float | None = None,
                   activation: float = 1.0) -> ContactGraph:
    """Build a synthetic contact graph, reproducible from ``seed``.

    ``barabasi_albert`` grows from an (m+1)-clique, every arriving node
    attaching m edges preferentially, so the edge count is
    ``C(m+1, 2) + m * (n - m - 1)``. ``erdos_renyi`` connects each pair
    independently with ``p_edge``.
    """
    if model == "barabasi_albert":
        if m is None or m < 1:
            raise ConfigurationError("barabasi_albert requires m >= 1")
        if n < m + 1:
            raise ConfigurationError(f"barabasi_albert requires n >= m+1, "
                                     f"got n={n}, m={m}")
        g = nx.barabasi_albert_graph(n, m, seed=seed,
                                     initial_graph=nx.complete_graph(m + 1))
    elif model == "erdos_renyi":
        if p_edge is None or not 0.0 <= p_edge <= 1.0:
            raise ConfigurationError("erdos_renyi requires p_edge in [0, 1]")
        if n < 1:
            raise ConfigurationError("need at least one node")
        g = nx.fast_gnp_random_graph(n, p_edge, seed=seed)
    else:
        raise ConfigurationError(f"unknown graph model {model!r}")
    return ContactGraph.from_edges(n, g.edges(), activation)


def complete_graph(n: int, activation: float = 1.0) -> ContactGraph:
    """All pairs connected; handy for fully-mixed reference runs."""
    neighbors = [np.delete(np.arange(n, dtype=np.int64), v) for v in range(n)]
    return ContactGraph(n, neighbors, np.full(n, float(activation)))


# ---------------------------------------------------------------------------
# Per-iteration contact sampling
# ---------------------------------------------------------------------------

def sample_contacts(node: int, graph: ContactGraph, p: float,
                    rng: np.random.Generator) -> np.ndarray:
    """Draw one iteration's interaction events for ``node``.

    Each of the node's ties activates independently with the node's
    activation probability, so the slot count is Binomial(degree,
    activation) and a fully active node meets every neighbor. Each
    activated slot is then independently rewired to a uniformly random
    node anywhere else with probability ``p``; otherwise it lands on the
    tie's own endpoint. Rewiring can produce duplicate partners (distinct
    interaction events). Fully determined by the state of ``rng``.
    """
    return sample_effective_contacts(node, graph, p, 1.0, rng)


def sample_effective_contacts(node: int, graph: ContactGraph, p: float,
                              keep: float,
                              rng: np.random.Generator) -> np.ndarray:
    """Contacts surviving an independent per-slot coin of probability ``keep``.

    Distributionally identical to filtering :func:`sample_contacts` with
    that coin: a tie is active-and-kept with probability
    activation * keep, independently per tie, and the kept local slots
    remain a uniform subset of the neighbors. The engine uses this with
    ``keep`` = the largest possible infection probability whenever full
    contact lists are not needed.
    """
    nb = graph.neighbors[node]
    deg = len(nb)
    if deg == 0:
        return np.empty(0, dtype=np.int64)
    k = int(rng.binomial(deg, graph.activation[node] * keep))
    if k == 0:
        return np.empty(0, dtype=np.int64)
    if p <= 0.0:
        n_long = 0
    elif p >= 1.0:
        n_long = k
    else:
        n_long = int((rng.random(k) < p).sum())
    n_local = k - n_long
    out = np.empty(k, dtype=np.int64)
    if n_local:
        out[:n_local] = nb[distinct_indices(deg, n_local, rng)]
    if n_long:
        draws = rng.integers(0, graph.n - 1, n_long)
        draws[draws >= node] += 1
        out[n_local:] = draws
    return out


def distinct_indices(pool: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """k distinct uniform indices in [0, pool); cheap when k << pool."""
    if k >= pool:
        return np.arange(pool, dtype=np.int64)
    if k > pool // 8:
        return np.sort(rng.choice(pool, size=k, replace=False)).astype(np.int64)
    chosen: set[int] = set()
    while len(chosen) < k:
        chosen.add(int(rng.integers(0, pool)))
    return np.array(sorted(chosen), dtype=np.int64)


# ---------------------------------------------------------------------------
# Import from files
# ---------------------------------------------------------------------------

def load_edge_list(path: str | Path, attributes_path: str | Path | None = None,
                   activation: float = 1.0,
                   activation_column: str = "activity") -> ContactGraph:
    """Read a graph from a "u v" per-line edge list.

    An optional attribute table (CSV with a ``node_id`` column) supplies
    per-node attributes; a column named by ``activation_column``, when
    present, overrides the scalar activation.
    """
    path = Path(path)
    edges: list[tuple[int, int]] = []
    max_node = -1
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            parts = text.split()
            if len(parts) != 2:
                raise ConfigurationError(
                    f"{path}:{lineno}: expected 'u v', got {text!r}")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise ConfigurationError(
                    f"{path}:{lineno}: node ids must be integers") from None
            if u == v:
                raise ConfigurationError(f"{path}:{lineno}: self-loop at {u}")
            edges.append((u, v))
            max_node = max(max_node, u, v)
    if max_node < 0:
        raise ConfigurationError(f"{path}: no edges")
    n = max_node + 1

    attributes: dict[str, np.ndarray] = {}
    act: float | np.ndarray = activation
    if attributes_path is not None:
        attributes = _load_attribute_table(Path(attributes_path), n)
        if activation_column in attributes:
            act = attributes.pop(activation_column).astype(float)
    return ContactGraph.from_edges(n, edges, act, attributes)


def _load_attribute_table(path: Path, n: int) -> dict[str, np.ndarray]:
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "node_id" not in reader.fieldnames:
            raise ConfigurationError(f"{path}: missing 'node_id' header")
        columns = [name for name in reader.fieldnames if name != "node_id"]
        raw: dict[str, list] = {name: [None] * n for name in columns}
        seen = np.zeros(n, dtype=bool)
        for lineno, row in enumerate(reader, start=2):
            try:
                node = int(row["node_id"])
            except (TypeError, ValueError):
                raise ConfigurationError(
                    f"{path}:{lineno}: bad node_id {row.get('node_id')!r}"
                ) from None
            if not 0 <= node < n:
                raise ConfigurationError(
                    f"{path}:{lineno}: node_id {node} outside 0..{n - 1}")
            seen[node] = True
            for name in columns:
                raw[name][node] = row[name]
        if not seen.all():
            missing = int(np.flatnonzero(~seen)[0])
            raise ConfigurationError(
                f"{path}: no attribute row for node {missing}")
    out = {}
    for name, values in raw.items():
        try:
            out[name] = np.array([float(v) for v in values])
            if np.all(out[name] == out[name].astype(np.int64)):
                out[name] = out[name].astype(np.int64)
        except ValueError:
            out[name] = np.array(values, dtype=object)
    return out
