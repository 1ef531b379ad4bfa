"""Empirical side-information tables for the distributed encoders.

For terminal ``l`` the tables hold, per occupied pre-quantised cell ``c`` of
``y_l``, the empirical distribution of the partner's index ``i'`` and the
empirical mean of the stacked source ``X = [x1, x2]`` over draws landing in
``(c, i')``. Only occupied ``(c, i')`` pairs are stored; the encoder cost is
evaluated from them directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from dcvq.errors import InvalidArgumentError

NEAREST = "nearest"
MARGINAL = "marginal"
FALLBACKS = (NEAREST, MARGINAL)
# distances equal up to rounding count as ties
TIE_RTOL = 1e-9
TIE_ATOL = 1e-12


@dataclass(eq=False)
class SideTables:
    terminal: int
    partner_size: int
    cell_keys: np.ndarray  # sorted occupied cell keys
    cell_points: np.ndarray  # codepoint vector of each occupied cell
    occupancy: np.ndarray
    pair_cell: np.ndarray  # row into cell_keys, nondecreasing
    pair_partner: np.ndarray
    pair_count: np.ndarray
    pair_sum: np.ndarray  # (n_pairs, 2N) summed stacked sources
    _tree: object = field(default=None, repr=False)

    @property
    def n_cells(self) -> int:
        return len(self.cell_keys)

    @property
    def total(self) -> int:
        return int(self.occupancy.sum())

    def prior_mean(self) -> np.ndarray:
        return self.pair_sum.sum(axis=0) / self.total

    def partner_marginal(self) -> np.ndarray:
        return np.bincount(self.pair_partner, weights=self.pair_count,
                           minlength=self.partner_size) / self.total

    def partner_means(self) -> np.ndarray:
        """``E[X | i']`` ignoring the cell; prior mean for unseen ``i'``."""
        n = np.bincount(self.pair_partner, weights=self.pair_count, minlength=self.partner_size)
        s = np.zeros((self.partner_size, self.pair_sum.shape[1]))
        np.add.at(s, self.pair_partner, self.pair_sum)
        out = np.tile(self.prior_mean(), (self.partner_size, 1))
        seen = n > 0
        out[seen] = s[seen] / n[seen, None]
        return out

    def cell_sums(self) -> np.ndarray:
        out = np.zeros((self.n_cells, self.pair_sum.shape[1]))
        np.add.at(out, self.pair_cell, self.pair_sum)
        return out

    def cell_means(self) -> np.ndarray:
        return self.cell_sums() / self.occupancy[:, None]

    def rows_for(self, keys, points=None, fallback: str = NEAREST) -> np.ndarray:
        """Table row of each cell key; unseen keys map to the nearest occupied
        cell (``fallback='nearest'``, lowest key on ties) or to ``-1``
        (``'marginal'``)."""
        keys = np.asarray(keys, dtype=np.int64)
        pos = np.searchsorted(self.cell_keys, keys)
        pos_c = np.minimum(pos, self.n_cells - 1)
        hit = self.cell_keys[pos_c] == keys
        rows = np.where(hit, pos_c, -1)
        if fallback == MARGINAL or hit.all():
            return rows
        if fallback != NEAREST:
            raise InvalidArgumentError(f"unknown fallback {fallback!r}")
        if points is None:
            raise InvalidArgumentError("nearest-cell fallback needs cell codepoints")
        if self._tree is None:
            self._tree = cKDTree(self.cell_points)
        miss = np.nonzero(~hit)[0]
        query = np.atleast_2d(points)[miss]
        dist, _ = self._tree.query(query)
        # cell points sit on a product grid, so equidistant cells are common:
        # take the lowest key (lowest row) among all cells at the minimum distance
        radius = dist * (1.0 + TIE_RTOL) + TIE_ATOL
        for m, q, r in zip(miss, query, radius):
            rows[m] = min(self._tree.query_ball_point(q, r))
        return rows

    def _row(self, key) -> int:
        k = np.int64(key)
        pos = int(np.searchsorted(self.cell_keys, k))
        if pos < self.n_cells and self.cell_keys[pos] == k:
            return pos
        return -1

    def cond_index_prob(self, key) -> np.ndarray:
        """Empirical ``P(i' | cell)``; partner marginal for an unseen cell."""
        r = self._row(key)
        if r < 0:
            return self.partner_marginal()
        sel = self.pair_cell == r
        p = np.zeros(self.partner_size)
        p[self.pair_partner[sel]] = self.pair_count[sel]
        return p / self.occupancy[r]

    def cond_means(self, key) -> np.ndarray:
        """``E[X | cell, i']`` for every ``i'``; unseen pairs fall back to
        ``E[X | cell]`` and an unseen cell to ``E[X | i']``."""
        r = self._row(key)
        if r < 0:
            return self.partner_means()
        sel = self.pair_cell == r
        cell_mean = self.pair_sum[sel].sum(axis=0) / self.occupancy[r]
        out = np.tile(cell_mean, (self.partner_size, 1))
        out[self.pair_partner[sel]] = self.pair_sum[sel] / self.pair_count[sel, None]
        return out

    def cond_mean(self, key, partner_index: int) -> np.ndarray:
        return self.cond_means(key)[partner_index]


def build_side_tables(keys, points, partner_idx, x, partner_size: int, terminal: int) -> SideTables:
    """Count cell/partner-index co-occurrences and accumulate source sums.

    ``keys`` are the owning terminal's cell keys (T,), ``points`` the matching
    codepoint vectors (T, M), ``partner_idx`` the partner encoder's output
    indices (T,), ``x`` the stacked sources (T, 2N).
    """
    keys = np.asarray(keys, dtype=np.int64)
    partner_idx = np.asarray(partner_idx, dtype=np.int64)
    x = np.asarray(x, dtype=float)
    if len(keys) == 0:
        raise InvalidArgumentError("empty training batch")
    cell_keys, first, cell_row = np.unique(keys, return_index=True, return_inverse=True)
    occupancy = np.bincount(cell_row)
    combo = cell_row * partner_size + partner_idx
    pairs, inv = np.unique(combo, return_inverse=True)
    counts = np.bincount(inv)
    sums = np.stack(
        [np.bincount(inv, weights=x[:, d], minlength=len(pairs)) for d in range(x.shape[1])],
        axis=1,
    )
    return SideTables(
        terminal=terminal,
        partner_size=partner_size,
        cell_keys=cell_keys,
        cell_points=np.atleast_2d(points)[first],
        occupancy=occupancy,
        pair_cell=pairs // partner_size,
        pair_partner=pairs % partner_size,
        pair_count=counts,
        pair_sum=sums,
    )


def _oriented(vectors: np.ndarray, terminal: int) -> np.ndarray:
    """Codebook indexed as ``[own index, partner index]``."""
    return vectors if terminal == 1 else vectors.transpose(1, 0, 2)


def encoder_costs(tables: SideTables, vectors, own_transition, partner_transition) -> np.ndarray:
    """Encoder cost of every index for every occupied cell, (n_cells, I_own).

    ``cost(c, i) = sum_{j, j', i'} P(j|i) P(j'|i') P(i'|c)
    [||D(j, j')||^2 - 2 E[X|c, i']^T D(j, j')]``.
    """
    D = _oriented(np.asarray(vectors, float), tables.terminal)
    Tp = np.asarray(partner_transition, float)
    To = np.asarray(own_transition, float)
    # channel-averaged codevectors over the partner's output
    d_bar = np.einsum("pq,oqd->opd", Tp, D)
    q = np.einsum("pq,oq->op", Tp, np.sum(D * D, axis=2))
    h = np.empty((len(tables.pair_cell), D.shape[0]))
    for ip in np.unique(tables.pair_partner):
        sel = tables.pair_partner == ip
        h[sel] = tables.pair_count[sel, None] * q[:, ip] - 2.0 * tables.pair_sum[sel] @ d_bar[:, ip, :].T
    starts = np.searchsorted(tables.pair_cell, np.arange(tables.n_cells))
    g = np.add.reduceat(h, starts, axis=0) / tables.occupancy[:, None]
    return g @ To.T


def marginal_costs(tables: SideTables, vectors, own_transition, partner_transition) -> np.ndarray:
    """Cost row used for unseen cells under the ``'marginal'`` fallback."""
    D = _oriented(np.asarray(vectors, float), tables.terminal)
    p = tables.partner_marginal()
    m = tables.partner_means()
    return _cost_from(p, m, D, np.asarray(own_transition, float), np.asarray(partner_transition, float))


def _cost_from(p, m, D, To, Tp) -> np.ndarray:
    # a(j') = sum_i' P(j'|i') P(i'|c);  b(j') = sum_i' P(j'|i') P(i'|c) m(i')
    a = Tp.T @ p
    b = Tp.T @ (p[:, None] * m)
    g = np.sum(D * D, axis=2) @ a - 2.0 * np.einsum("oqd,qd->o", D, b)
    return To @ g


def encoder_cost(i, key, tables: SideTables, vectors, dmc1, dmc2) -> float:
    """Cost of sending index ``i`` from the cell ``key`` of ``tables.terminal``."""
    own, partner = (dmc1, dmc2) if tables.terminal == 1 else (dmc2, dmc1)
    if not 0 <= i < own.size:
        raise InvalidArgumentError(f"index {i} outside [0, {own.size})")
    D = _oriented(np.asarray(vectors, float), tables.terminal)
    costs = _cost_from(
        tables.cond_index_prob(key), tables.cond_means(key), D,
        own.transition, partner.transition,
    )
    return float(costs[i])
