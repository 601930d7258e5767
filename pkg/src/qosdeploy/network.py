"""Undirected communication graphs and a synchronous-round message harness.

Every distributed protocol in this package runs in lockstep rounds: each node
produces one outgoing payload, `sync_round` delivers it to all neighbours, and
the next round starts only after every inbox is filled. There is no loss,
duplication or reordering, so a protocol run is a pure function of the graph
and the payload sequence.
"""

from collections import deque
from dataclasses import dataclass

import numpy as np

from .validation import as_adjacency


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected communication topology with a 0/1 adjacency matrix."""

    n: int
    adj: np.ndarray

    def __post_init__(self):
        adj = as_adjacency(self.adj)
        if adj.shape[0] != self.n:
            raise ValueError(f"adjacency shape {adj.shape} does not match n={self.n}")
        adj.setflags(write=False)
        object.__setattr__(self, "adj", adj)

    @classmethod
    def from_adjacency(cls, adj):
        adj = as_adjacency(adj)
        return cls(n=adj.shape[0], adj=adj)

    @classmethod
    def ring(cls, n):
        adj = np.zeros((n, n), dtype=np.int64)
        for i in range(n):
            adj[i, (i + 1) % n] = 1
            adj[(i + 1) % n, i] = 1
        if n == 1:
            adj[:] = 0
        return cls(n=n, adj=adj)

    @classmethod
    def complete(cls, n):
        adj = np.ones((n, n), dtype=np.int64) - np.eye(n, dtype=np.int64)
        return cls(n=n, adj=adj)

    @classmethod
    def edgeless(cls, n):
        return cls(n=n, adj=np.zeros((n, n), dtype=np.int64))

    def degree(self, i):
        return int(self.adj[i].sum())


@dataclass(frozen=True)
class RoundMailbox:
    """Per-node inboxes for one synchronous round, keyed by sender id."""

    inboxes: tuple

    def __getitem__(self, node):
        return self.inboxes[node]

    def __len__(self):
        return len(self.inboxes)


def neighbors(g: Graph, i: int) -> list:
    """Sorted neighbour ids of node i."""
    if not 0 <= i < g.n:
        raise ValueError(f"node id {i} out of range for graph with {g.n} nodes")
    return [int(j) for j in np.flatnonzero(g.adj[i])]


def is_connected(g: Graph) -> bool:
    """True iff every node is reachable from node 0 (BFS)."""
    if g.n <= 1:
        return True
    seen = np.zeros(g.n, dtype=bool)
    seen[0] = True
    queue = deque([0])
    while queue:
        i = queue.popleft()
        for j in np.flatnonzero(g.adj[i]):
            if not seen[j]:
                seen[j] = True
                queue.append(int(j))
    return bool(seen.all())


def diameter(g: Graph) -> int:
    """Longest shortest-path distance; requires a connected graph."""
    if not is_connected(g):
        raise ValueError("diameter is undefined for a disconnected graph")
    worst = 0
    for src in range(g.n):
        dist = np.full(g.n, -1, dtype=np.int64)
        dist[src] = 0
        queue = deque([src])
        while queue:
            i = queue.popleft()
            for j in np.flatnonzero(g.adj[i]):
                if dist[j] < 0:
                    dist[j] = dist[i] + 1
                    queue.append(int(j))
        worst = max(worst, int(dist.max()))
    return worst


def sync_round(g: Graph, outgoing) -> RoundMailbox:
    """Deliver each node's payload to all its neighbours.

    `outgoing` holds exactly one payload per node. Node i's inbox maps every
    neighbour j to j's payload; delivery is deterministic and bidirectional.
    """
    if len(outgoing) != g.n:
        raise ValueError(f"expected {g.n} payloads, got {len(outgoing)}")
    inboxes = tuple(
        {j: outgoing[j] for j in neighbors(g, i)}
        for i in range(g.n)
    )
    return RoundMailbox(inboxes=inboxes)
