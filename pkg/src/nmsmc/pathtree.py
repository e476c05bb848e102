"""
Genealogy tree storing all surviving particle paths.

Every node holds one state, a parent link, its time index and a reference
count (children + 1 if the node is a current leaf).  Inserting a generation
adds N leaves under their ancestors and releases the previous leaves; nodes
whose count drops to zero are freed, cascading towards the root.  Freed
slots are reclaimed by compacting the arena once dead slots outnumber live
ones, which keeps slots in creation order (parents before children).  Under
resampling the surviving lineages coalesce, so the live node count stays around ``k + C N log N`` instead of
``N (k + 1)``.

The arena lives in plain numpy arrays so the numba kernels below can be
shared between :class:`TrajectoryTree` and the particle filter loop.
"""

import json

import numba
import numpy as np

__all__ = ["TrajectoryTree"]

# meta layout
_USED, _LIVE, _DEPTH = 0, 1, 2
# parent marker of a freed slot; roots have parent -1
DEAD = -2


@numba.njit(cache=True)
def _new_arena(states, capacity):
    n_leaves, dim = states.shape
    cap = max(capacity, 2 * n_leaves)
    x = np.zeros((cap, dim))
    parent = np.full(cap, DEAD, dtype=np.int64)
    refcount = np.zeros(cap, dtype=np.int64)
    depth = np.zeros(cap, dtype=np.int64)
    acc = np.zeros((cap, dim))
    leaves = np.arange(n_leaves).astype(np.int64)
    for i in range(n_leaves):
        x[i] = states[i]
        parent[i] = -1
        refcount[i] = 1
    meta = np.zeros(3, dtype=np.int64)
    meta[_USED] = n_leaves
    meta[_LIVE] = n_leaves
    return x, parent, refcount, depth, acc, leaves, meta


@numba.njit(cache=True)
def _compact(x, parent, refcount, depth, leaves, meta):
    """Slide live nodes down over freed slots, keeping their relative order.

    Slot order is creation order, so parents keep preceding their children.
    """
    used = meta[_USED]
    remap = np.empty(used, dtype=np.int64)
    j = 0
    for i in range(used):
        p = parent[i]
        if p == DEAD:
            continue
        remap[i] = j
        x[j] = x[i]
        parent[j] = remap[p] if p >= 0 else -1
        refcount[j] = refcount[i]
        depth[j] = depth[i]
        j += 1
    parent[j:used] = DEAD
    refcount[j:used] = 0
    for i in range(leaves.shape[0]):
        leaves[i] = remap[leaves[i]]
    meta[_USED] = j


@numba.njit(cache=True)
def _reserve(x, parent, refcount, depth, acc, leaves, meta, extra):
    """Make room for `extra` appended nodes.

    Freed slots are reclaimed by compaction once they exceed a quarter of
    the live count; the arena doubles only when live nodes fill over half.
    """
    cap = x.shape[0]
    if meta[_USED] + extra <= cap and 4 * meta[_USED] <= 5 * meta[_LIVE] + 4 * extra:
        return x, parent, refcount, depth, acc
    _compact(x, parent, refcount, depth, leaves, meta)
    used = meta[_USED]
    new_cap = cap
    while 2 * (used + extra) > new_cap:
        new_cap *= 2
    if new_cap == cap:
        return x, parent, refcount, depth, acc
    dim = x.shape[1]
    x2 = np.zeros((new_cap, dim))
    parent2 = np.full(new_cap, DEAD, dtype=np.int64)
    refcount2 = np.zeros(new_cap, dtype=np.int64)
    depth2 = np.zeros(new_cap, dtype=np.int64)
    x2[:used] = x[:used]
    parent2[:used] = parent[:used]
    refcount2[:used] = refcount[:used]
    depth2[:used] = depth[:used]
    return x2, parent2, refcount2, depth2, np.zeros((new_cap, dim))


@numba.njit(cache=True)
def _insert(x, parent, refcount, depth, leaves, meta, ancestors, new_states):
    """Append one generation; capacity must already be reserved."""
    n_leaves = leaves.shape[0]
    old = leaves.copy()
    for i in range(n_leaves):
        slot = meta[_USED]
        meta[_USED] += 1
        p = old[ancestors[i]]
        x[slot] = new_states[i]
        parent[slot] = p
        depth[slot] = depth[p] + 1
        refcount[slot] = 1
        refcount[p] += 1
        leaves[i] = slot
    meta[_LIVE] += n_leaves
    meta[_DEPTH] += 1
    # release the previous generation's leaf references, pruning dead lineages
    for i in range(n_leaves):
        node = old[i]
        refcount[node] -= 1
        while node >= 0 and refcount[node] == 0:
            meta[_LIVE] -= 1
            up = parent[node]
            parent[node] = DEAD
            node = up
            if node >= 0:
                refcount[node] -= 1


@numba.njit(cache=True)
def _weighted_sums(x, parent, depth, acc, leaves, meta, lag_coeff, b_term, out):
    """out[i] = sum over the path of leaf i of lag_coeff[k - depth] * state, plus b_term.

    ``lag_coeff`` is indexed ``[lag, component]``.  One sweep over the arena in
    slot order visits parents before children, so each live node adds its own
    term to its parent's running sum; along each path the sum is accumulated
    from the root downwards.
    """
    k = meta[_DEPTH]
    dim = x.shape[1]
    if dim == 2:
        for node in range(meta[_USED]):
            p = parent[node]
            if p == DEAD:
                continue
            lag = k - depth[node]
            if p >= 0:
                acc[node, 0] = acc[p, 0] + lag_coeff[lag, 0] * x[node, 0]
                acc[node, 1] = acc[p, 1] + lag_coeff[lag, 1] * x[node, 1]
            else:
                acc[node, 0] = lag_coeff[lag, 0] * x[node, 0]
                acc[node, 1] = lag_coeff[lag, 1] * x[node, 1]
    else:
        for node in range(meta[_USED]):
            p = parent[node]
            if p == DEAD:
                continue
            lag = k - depth[node]
            if p >= 0:
                for c in range(dim):
                    acc[node, c] = acc[p, c] + lag_coeff[lag, c] * x[node, c]
            else:
                for c in range(dim):
                    acc[node, c] = lag_coeff[lag, c] * x[node, c]
    for i in range(leaves.shape[0]):
        leaf = leaves[i]
        for c in range(dim):
            out[i, c] = acc[leaf, c] + b_term[c]


class TrajectoryTree:
    """Reference-counted arena of particle paths.

    Parameters
    ----------
    states : array_like, shape (N, n)
        Root states, one per particle.
    capacity : int, optional
        Initial arena size; the arena doubles when full.
    """

    def __init__(self, states, capacity=None):
        states = np.ascontiguousarray(np.atleast_2d(np.asarray(states, dtype=float)))
        if states.shape[0] < 1:
            raise ValueError("need at least one particle")
        cap = capacity if capacity is not None else 4 * states.shape[0]
        (self._x, self._parent, self._refcount, self._depth, self._acc,
         self._leaves, self._meta) = _new_arena(states, cap)

    @classmethod
    def _from_arena(cls, x, parent, refcount, depth, acc, leaves, meta):
        tree = cls.__new__(cls)
        (tree._x, tree._parent, tree._refcount, tree._depth, tree._acc,
         tree._leaves, tree._meta) = (x, parent, refcount, depth, acc, leaves, meta)
        return tree

    @property
    def n_particles(self) -> int:
        return self._leaves.shape[0]

    @property
    def dim(self) -> int:
        return self._x.shape[1]

    @property
    def depth(self) -> int:
        """Time index ``k`` of the current leaves."""
        return int(self._meta[_DEPTH])

    @property
    def leaves(self) -> np.ndarray:
        return self._leaves.copy()

    def node_count(self) -> int:
        return int(self._meta[_LIVE])

    def insert_generation(self, ancestors, states):
        """Attach ``states[i]`` under current leaf ``ancestors[i]`` (0-based)."""
        ancestors = np.asarray(ancestors, dtype=np.int64)
        states = np.ascontiguousarray(np.asarray(states, dtype=float).reshape(-1, self.dim))
        N = self.n_particles
        if ancestors.shape != (N,) or states.shape[0] != N:
            raise ValueError(f"expected {N} ancestors and {N} states")
        if ancestors.min() < 0 or ancestors.max() >= N:
            raise IndexError("ancestor index out of range")
        (self._x, self._parent, self._refcount, self._depth, self._acc) = _reserve(
            self._x, self._parent, self._refcount, self._depth, self._acc,
            self._leaves, self._meta, N)
        _insert(self._x, self._parent, self._refcount, self._depth,
                self._leaves, self._meta, ancestors, states)
        return self

    def weighted_sums(self, coeff, b_term=None) -> np.ndarray:
        """Per-leaf lag-weighted path sums, shape ``(N, n)``.

        ``coeff[c, j]`` weights component ``c`` of the state ``j`` steps
        before the current leaf.
        """
        coeff = np.atleast_2d(np.asarray(coeff, dtype=float))
        k = self.depth
        if coeff.shape[0] != self.dim or coeff.shape[1] < k + 1:
            raise ValueError(f"coefficients must cover lags 0..{k} for {self.dim} components")
        b_term = np.zeros(self.dim) if b_term is None else np.asarray(b_term, dtype=float)
        out = np.empty((self.n_particles, self.dim))
        _weighted_sums(self._x, self._parent, self._depth, self._acc,
                       self._leaves, self._meta, np.ascontiguousarray(coeff.T),
                       b_term.reshape(self.dim), out)
        return out

    def extract_path(self, leaf: int) -> np.ndarray:
        """States from the root to leaf ``leaf``, shape ``(k + 1, n)``."""
        if not 0 <= leaf < self.n_particles:
            raise IndexError(f"invalid leaf index {leaf}")
        k = self.depth
        path = np.empty((k + 1, self.dim))
        node = self._leaves[leaf]
        for t in range(k, -1, -1):
            path[t] = self._x[node]
            node = self._parent[node]
        return path

    def live_nodes(self) -> np.ndarray:
        return np.flatnonzero(self._parent[:self._meta[_USED]] != DEAD)

    def dump(self) -> list:
        """Live nodes as ``{id, parent, depth, refcount}`` records."""
        return [
            {"id": int(i), "parent": None if self._parent[i] < 0 else int(self._parent[i]),
             "depth": int(self._depth[i]), "refcount": int(self._refcount[i])}
            for i in self.live_nodes()
        ]

    def dump_json(self, path=None) -> str:
        text = json.dumps(self.dump())
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text
