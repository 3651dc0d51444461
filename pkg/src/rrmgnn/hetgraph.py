"""Bipartite TX/RX graph data model, neighbor queries, and permutation machinery.

Edges are stored densely as M x K feature tensors plus a boolean mask; all
three supported scenarios are complete bipartite, and dense storage keeps the
aggregations vectorizable. Sparse edge sets are still supported via the mask.
Complex features are split into real/imag halves before they enter the graph,
so every array here is real float64.
"""

from dataclasses import dataclass

import numpy as np


def split_complex(c):
    """[Re(c); Im(c)] along the last axis, doubling its width."""
    c = np.asarray(c)
    return np.concatenate([c.real, c.imag], axis=-1).astype(np.float64)


def merge_complex(x):
    """Inverse of split_complex along the last axis."""
    x = np.asarray(x, dtype=np.float64)
    half = x.shape[-1] // 2
    if 2 * half != x.shape[-1]:
        raise ValueError("last axis must have even width to merge into complex")
    return x[..., :half] + 1j * x[..., half:]


@dataclass(frozen=True)
class HetGraph:
    """Heterogeneous bipartite graph: M TX-nodes, K RX-nodes, dense edge fibers.

    f_tx: (M, d_tx), f_rx: (K, d_rx), e: (M, K, d_e), edge_mask: (M, K) bool.
    Fibers on absent edges must be all-zero.
    """

    f_tx: np.ndarray
    f_rx: np.ndarray
    e: np.ndarray
    edge_mask: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "f_tx", np.ascontiguousarray(self.f_tx, dtype=np.float64))
        object.__setattr__(self, "f_rx", np.ascontiguousarray(self.f_rx, dtype=np.float64))
        object.__setattr__(self, "e", np.ascontiguousarray(self.e, dtype=np.float64))
        object.__setattr__(self, "edge_mask", np.ascontiguousarray(self.edge_mask, dtype=bool))
        m, k = self.f_tx.shape[0], self.f_rx.shape[0]
        if m < 1 or k < 1:
            raise ValueError("graph needs at least one TX-node and one RX-node")
        if self.f_tx.ndim != 2 or self.f_rx.ndim != 2 or self.e.ndim != 3:
            raise ValueError("f_tx/f_rx must be 2-D and e must be 3-D")
        if self.e.shape[:2] != (m, k) or self.edge_mask.shape != (m, k):
            raise ValueError(f"edge arrays must be shaped ({m}, {k}, .)")
        absent = ~self.edge_mask
        if absent.any() and np.any(self.e[absent] != 0.0):
            raise ValueError("edge fibers must be all-zero where the edge is absent")

    @property
    def m(self):
        return self.f_tx.shape[0]

    @property
    def k(self):
        return self.f_rx.shape[0]

    @property
    def widths(self):
        return self.f_tx.shape[1], self.f_rx.shape[1], self.e.shape[2]


@dataclass(frozen=True)
class VariableBundle:
    """Optimized variables on TX-nodes, RX-nodes, and edges.

    Inactive heads are None. Complex variables are stored split, so widths are
    2x the complex dimension. xi fibers are zero where the edge is absent.
    """

    s_tx: np.ndarray | None = None
    s_rx: np.ndarray | None = None
    xi: np.ndarray | None = None


@dataclass(frozen=True)
class NodePermutation:
    """A pair of bijections on TX indices {0..M-1} and RX indices {0..K-1}."""

    pi_tx: np.ndarray
    pi_rx: np.ndarray

    def __post_init__(self):
        for name in ("pi_tx", "pi_rx"):
            p = np.asarray(getattr(self, name), dtype=np.intp)
            object.__setattr__(self, name, p)
            if p.ndim != 1 or not np.array_equal(np.sort(p), np.arange(p.size)):
                raise ValueError(f"{name} is not a bijection on 0..{p.size - 1}")

    @classmethod
    def identity(cls, m, k):
        return cls(np.arange(m), np.arange(k))

    @classmethod
    def random(cls, m, k, rng):
        return cls(rng.permutation(m), rng.permutation(k))

    def inverse(self):
        return NodePermutation(np.argsort(self.pi_tx), np.argsort(self.pi_rx))


def permute_graph(g, p):
    """Relabel nodes: output node pi(m) carries input node m's features."""
    if p.pi_tx.size != g.m or p.pi_rx.size != g.k:
        raise ValueError(f"permutation sizes ({p.pi_tx.size}, {p.pi_rx.size}) do not "
                         f"match graph ({g.m}, {g.k})")
    f_tx = np.empty_like(g.f_tx)
    f_tx[p.pi_tx] = g.f_tx
    f_rx = np.empty_like(g.f_rx)
    f_rx[p.pi_rx] = g.f_rx
    e = np.empty_like(g.e)
    e[np.ix_(p.pi_tx, p.pi_rx)] = g.e
    mask = np.empty_like(g.edge_mask)
    mask[np.ix_(p.pi_tx, p.pi_rx)] = g.edge_mask
    return HetGraph(f_tx, f_rx, e, mask)


def permute_vars(v, p):
    """Apply the same relabeling to a variable bundle."""
    s_tx = s_rx = xi = None
    if v.s_tx is not None:
        if p.pi_tx.size != v.s_tx.shape[0]:
            raise ValueError("pi_tx size does not match s_tx")
        s_tx = np.empty_like(v.s_tx)
        s_tx[p.pi_tx] = v.s_tx
    if v.s_rx is not None:
        if p.pi_rx.size != v.s_rx.shape[0]:
            raise ValueError("pi_rx size does not match s_rx")
        s_rx = np.empty_like(v.s_rx)
        s_rx[p.pi_rx] = v.s_rx
    if v.xi is not None:
        if p.pi_tx.size != v.xi.shape[0] or p.pi_rx.size != v.xi.shape[1]:
            raise ValueError("permutation sizes do not match xi")
        xi = np.empty_like(v.xi)
        xi[np.ix_(p.pi_tx, p.pi_rx)] = v.xi
    return VariableBundle(s_tx=s_tx, s_rx=s_rx, xi=xi)


def tx_neighbors(g, m):
    """RX indices adjacent to TX m (ascending)."""
    if not 0 <= m < g.m:
        raise ValueError(f"TX index {m} out of range for M={g.m}")
    return np.flatnonzero(g.edge_mask[m])


def rx_neighbors(g, k):
    """TX indices adjacent to RX k (ascending)."""
    if not 0 <= k < g.k:
        raise ValueError(f"RX index {k} out of range for K={g.k}")
    return np.flatnonzero(g.edge_mask[:, k])


def edge_neighbors(g, m, k):
    """The two neighbor families of edge (m, k): via TX m and via RX k.

    Returns (tx_side, rx_side) where tx_side is the list of edges (m, k1) with
    k1 a neighbor of TX m other than k, and rx_side the edges (m1, k) with m1 a
    neighbor of RX k other than m.
    """
    if not 0 <= m < g.m or not 0 <= k < g.k:
        raise ValueError(f"edge index ({m}, {k}) out of range")
    if not g.edge_mask[m, k]:
        raise ValueError(f"edge ({m}, {k}) is absent")
    tx_side = [(m, int(k1)) for k1 in tx_neighbors(g, m) if k1 != k]
    rx_side = [(int(m1), k) for m1 in rx_neighbors(g, k) if m1 != m]
    return tx_side, rx_side
