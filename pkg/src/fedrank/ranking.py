"""Layer-wise rank algebra: the permutation objects exchanged on the wire.

A layer ranking is an int64 permutation of [0, n): position i holds the
edge whose reputation is i, so the least important edge comes first.  A
network ranking is one permutation per layer.  All ties break toward the
lower edge index (stable sorts throughout) so every operation is
deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LayerRanking = np.ndarray
NetworkRanking = list[np.ndarray]


@dataclass(frozen=True)
class SparseLayerRanking:
    """Highest-reputation suffix of a full layer ranking.

    ``top`` lists the kept edges ascending by reputation; ``n`` is the full
    edge count of the layer.
    """

    top: np.ndarray
    n: int

    def __post_init__(self):
        top = np.asarray(self.top, dtype=np.int64)
        object.__setattr__(self, "top", top)
        if len(top) > self.n:
            raise ValueError("sparse ranking longer than the layer")
        if len(np.unique(top)) != len(top):
            raise ValueError("duplicate edge in sparse ranking")
        if len(top) and (top.min() < 0 or top.max() >= self.n):
            raise ValueError("edge index out of range")


def keep_count(n_edges: int, k: float) -> int:
    """Edges retained at subnetwork fraction ``k``; the rest are dropped.

    Equals n - floor((1-k) * n).  Computed as ceil(k * n) because forming
    (1-k) in floating point loses the decimal intent of k (e.g. k=0.8,
    n=10 would keep 9 instead of 8).
    """
    if not 0.0 <= k <= 1.0:
        raise ValueError(f"k must be in [0, 1], got {k}")
    return math.ceil(k * n_edges)


def argsort_ranking(values: np.ndarray) -> LayerRanking:
    """Ranking of a value vector: indices ascending by value, stable."""
    flat = np.asarray(values, dtype=np.float64).ravel()
    if not np.all(np.isfinite(flat)):
        raise ValueError("values must be finite")
    return np.argsort(flat, kind="stable").astype(np.int64)


def reorder_scores(sorted_values: np.ndarray, ranking: LayerRanking) -> np.ndarray:
    """Assign ascending values to edges by rank: out[ranking[i]] = sorted[i].

    Consequently argsort_ranking(out) == ranking when values are distinct.
    """
    sorted_values = np.asarray(sorted_values)
    ranking = np.asarray(ranking, dtype=np.int64)
    if sorted_values.shape[0] != ranking.shape[0]:
        raise ValueError("length mismatch between values and ranking")
    if np.any(np.diff(sorted_values.astype(np.float64)) < 0):
        raise ValueError("values must be sorted ascending")
    out = np.empty_like(sorted_values)
    out[ranking] = sorted_values
    return out


def _check_permutation(perm: np.ndarray, n: int) -> np.ndarray:
    perm = np.asarray(perm, dtype=np.int64)
    if perm.shape != (n,) or not np.array_equal(np.sort(perm), np.arange(n)):
        raise ValueError("ranking is not a permutation of [0, n)")
    return perm


def inverse_permutation(perm: np.ndarray) -> np.ndarray:
    """Reputation vector: inv[edge] = position of edge in the ranking."""
    inv = np.empty(len(perm), dtype=np.int64)
    inv[perm] = np.arange(len(perm), dtype=np.int64)
    return inv


def vote(rankings: list[LayerRanking]) -> tuple[LayerRanking, np.ndarray]:
    """Reputation vote over full layer rankings.

    Each ranking awards edge e a reputation equal to e's position in it;
    reputations are summed and the tally argsorted (ties to the lower edge
    index) to give the aggregate ranking.
    """
    if not rankings:
        raise ValueError("vote requires at least one ranking")
    n = len(rankings[0])
    tally = np.zeros(n, dtype=np.int64)
    for r in rankings:
        tally += inverse_permutation(_check_permutation(r, n))
    return np.argsort(tally, kind="stable").astype(np.int64), tally


def sparse_vote(sparse: list[SparseLayerRanking]) -> tuple[LayerRanking, np.ndarray]:
    """Vote over truncated rankings; omitted edges count as reputation 0.

    A sent edge keeps the reputation it held in the full ranking: entry i
    of an s-long suffix is worth (n - s) + i.
    """
    if not sparse:
        raise ValueError("vote requires at least one ranking")
    n = sparse[0].n
    tally = np.zeros(n, dtype=np.int64)
    for sr in sparse:
        if sr.n != n:
            raise ValueError("sparse rankings disagree on layer size")
        s = len(sr.top)
        tally[sr.top] += (n - s) + np.arange(s, dtype=np.int64)
    return np.argsort(tally, kind="stable").astype(np.int64), tally


def vote_network(rankings: list[NetworkRanking]) -> NetworkRanking:
    """Layer-wise vote over whole-network rankings."""
    layer_count = len(rankings[0])
    return [vote([r[i] for r in rankings])[0] for i in range(layer_count)]


def reverse_ranking(r: LayerRanking) -> LayerRanking:
    """Flip a ranking end for end; an edge at reputation j moves to n-1-j."""
    return np.asarray(r, dtype=np.int64)[::-1].copy()


def truncate_ranking(r: LayerRanking, s: float) -> SparseLayerRanking:
    """Keep the top s-fraction of a full ranking."""
    r = np.asarray(r, dtype=np.int64)
    keep = keep_count(len(r), s)
    return SparseLayerRanking(top=r[len(r) - keep :].copy(), n=len(r))


def top_edges(r: LayerRanking, k: float) -> set[int]:
    """Edges inside the subnetwork at fraction ``k``: the ranking's suffix."""
    r = np.asarray(r, dtype=np.int64)
    keep = keep_count(len(r), k)
    return {int(e) for e in r[len(r) - keep :]}


# --- Wire form -------------------------------------------------------------
#
# Per layer: each rank is a fixed-width big-endian unsigned integer of
# ceil(log2(n)) bits, packed MSB-first; the final byte is zero-padded.  The
# sparse form packs the s kept entries at the same width.


def rank_bit_width(n: int) -> int:
    """Bits per rank entry for a layer of n edges (0 when n == 1)."""
    if n < 1:
        raise ValueError("layer must have at least one edge")
    return (n - 1).bit_length()


def encode_entries(entries: np.ndarray, n: int) -> bytes:
    width = rank_bit_width(n)
    total_bits = width * len(entries)
    acc = 0
    for v in entries:
        acc = (acc << width) | int(v)
    pad = (-total_bits) % 8
    acc <<= pad
    return acc.to_bytes((total_bits + pad) // 8, "big")


def decode_entries(data: bytes, count: int, n: int) -> np.ndarray:
    width = rank_bit_width(n)
    total_bits = width * count
    if len(data) != (total_bits + 7) // 8:
        raise ValueError("encoded ranking has the wrong length")
    acc = int.from_bytes(data, "big") >> ((-total_bits) % 8)
    out = np.empty(count, dtype=np.int64)
    mask = (1 << width) - 1
    for i in range(count - 1, -1, -1):
        out[i] = acc & mask
        acc >>= width
    return out


def encode_layer_ranking(r: LayerRanking) -> bytes:
    r = np.asarray(r, dtype=np.int64)
    return encode_entries(r, len(r))


def decode_layer_ranking(data: bytes, n: int) -> LayerRanking:
    return _check_permutation(decode_entries(data, n, n), n)


def encode_sparse_ranking(sr: SparseLayerRanking) -> bytes:
    return encode_entries(sr.top, sr.n)


def decode_sparse_ranking(data: bytes, s: int, n: int) -> SparseLayerRanking:
    return SparseLayerRanking(top=decode_entries(data, s, n), n=n)
