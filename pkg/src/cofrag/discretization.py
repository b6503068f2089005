"""Geometric size grid and the mass-based sectional operators.

The state is the mass held in each cell (``g = x f`` integrated over the
cell), so fragmentation is bookkept exactly even though the fragment number
density is not integrable at zero. Coagulation uses the fixed-pivot split:
the merged particle is shared between the two bracketing pivots so that
number and mass are both preserved; pairs whose merged size reaches the
truncation ``j`` do not react at all.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .kernels import KernelSpec

__all__ = [
    "SizeGrid",
    "FragTables",
    "CoagTables",
    "State",
    "build_grid",
    "precompute_frag_tables",
    "precompute_coag_tables",
    "apply_frag",
    "apply_coag",
    "loss_rates",
]


@dataclass(frozen=True, eq=False)
class SizeGrid:
    x_min: float
    j: float
    cells_per_decade: int
    edges: np.ndarray
    pivots: np.ndarray

    @property
    def n(self) -> int:
        return int(self.pivots.size)

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def ratio(self) -> float:
        return float(self.edges[1] / self.edges[0])

    def cell_of(self, x: float) -> int:
        if not (self.x_min <= x < self.j):
            raise ValueError(f"size {x} outside the grid [{self.x_min}, {self.j})")
        return int(min(np.searchsorted(self.edges, x, side="right") - 1, self.n - 1))


def build_grid(x_min: float, j: float, cells_per_decade: int) -> SizeGrid:
    """Geometric partition of ``[x_min, j)`` with geometric-mean pivots."""
    if not (0 < x_min < j) or not math.isfinite(j):
        raise ValueError(f"need 0 < x_min < j, got x_min={x_min}, j={j}")
    if int(cells_per_decade) != cells_per_decade or cells_per_decade < 4:
        raise ValueError("cells_per_decade must be an integer >= 4")
    cells_per_decade = int(cells_per_decade)
    n = math.ceil(cells_per_decade * math.log10(j / x_min) - 1e-9)
    log_edges = np.linspace(math.log(x_min), math.log(j), n + 1)
    edges = np.exp(log_edges)
    edges[0], edges[-1] = x_min, j
    pivots = np.sqrt(edges[:-1] * edges[1:])
    return SizeGrid(x_min, j, cells_per_decade, edges, pivots)


@dataclass(frozen=True, eq=False)
class FragTables:
    """Where the mass of a breaking parent at pivot ``k`` lands.

    ``massfrac[i, k]`` is the fraction landing in cell ``i`` (zero above the
    parent's own cell), ``subgrid[k]`` the fraction below ``x_min``, which is
    lumped into cell 0 by :func:`apply_frag`. ``operator`` is the full linear
    map on cell masses.
    """

    massfrac: np.ndarray
    subgrid: np.ndarray
    loss_rate: np.ndarray
    operator: np.ndarray
    n: int

    @property
    def net_loss_rate(self) -> np.ndarray:
        """Own-cell removal rate once fragments kept in the same cell are netted."""
        return self.loss_rate * (1.0 - np.diag(self.massfrac))


def precompute_frag_tables(grid: SizeGrid, spec: KernelSpec) -> FragTables:
    d = spec.daughter
    y = grid.pivots
    n = grid.n
    # cumulative mass fraction below each edge, per parent: (e / y)^(nu + 2)
    cum = d.cumulative_mass_fraction(grid.edges[:, None], y[None, :])
    massfrac = np.diff(cum, axis=0)
    massfrac = np.where(np.arange(n)[:, None] <= np.arange(n)[None, :], massfrac, 0.0)
    subgrid = cum[0].copy()
    # parent's own cell receives everything between its lower edge and y
    own = 1.0 - cum[np.arange(n), np.arange(n)]
    massfrac[np.arange(n), np.arange(n)] = own

    rate = np.asarray(spec.frag(y), dtype=float) * np.ones(n)
    op = massfrac * rate[None, :]
    op[0, :] += subgrid * rate
    op[np.arange(n), np.arange(n)] -= rate
    return FragTables(massfrac=massfrac, subgrid=subgrid, loss_rate=rate, operator=op, n=n)


@dataclass(frozen=True, eq=False)
class CoagTables:
    """Fixed-pivot coagulation data over unordered pivot pairs ``i <= k``.

    ``lam`` is the number fraction sent to pivot ``target``, the remainder
    goes to ``target + 1``; ``overflow`` flags merged sizes above the last
    pivot (all mass to the last cell). ``rate`` is the dense kernel matrix
    with masked pairs zeroed.
    """

    i: np.ndarray
    k: np.ndarray
    target: np.ndarray
    lam: np.ndarray
    overflow: np.ndarray
    rate: np.ndarray
    mask: np.ndarray
    gain_lo: np.ndarray = field(repr=False)
    gain_hi: np.ndarray = field(repr=False)
    n: int = 0


def precompute_coag_tables(grid: SizeGrid, spec: KernelSpec) -> CoagTables:
    x = grid.pivots
    n = grid.n
    K = np.asarray(spec.coag(x[:, None], x[None, :]), dtype=float)
    K = 0.5 * (K + K.T)
    merged = x[:, None] + x[None, :]
    mask = merged < grid.j
    rate = np.where(mask, K, 0.0)

    ii, kk = np.triu_indices(n)
    keep = mask[ii, kk] & (rate[ii, kk] > 0)
    ii, kk = ii[keep], kk[keep]
    v = x[ii] + x[kk]
    l = np.searchsorted(x, v, side="right") - 1
    overflow = l >= n - 1
    l = np.minimum(l, n - 2) if n > 1 else np.zeros_like(l)
    lam = np.where(overflow, 1.0, (x[np.minimum(l + 1, n - 1)] - v) / (x[np.minimum(l + 1, n - 1)] - x[l]))
    lam = np.clip(lam, 0.0, 1.0)
    target = np.where(overflow, n - 1, l)

    # event rate per unit n_i n_k: K for distinct pivots, K/2 for self-pairs
    w = np.where(ii == kk, 0.5, 1.0) * rate[ii, kk]
    gain_lo = w * np.where(overflow, v, lam * x[target])
    gain_hi = w * v - gain_lo
    return CoagTables(
        i=ii, k=kk, target=target, lam=lam, overflow=overflow, rate=rate, mask=mask,
        gain_lo=gain_lo, gain_hi=gain_hi, n=n,
    )


@dataclass
class State:
    """Cell masses on a grid at time ``t``.

    ``lumped_subgrid_mass`` accumulates fragment mass produced below ``x_min``
    and credited to the first cell.
    """

    grid: SizeGrid
    mass: np.ndarray
    t: float = 0.0
    lumped_subgrid_mass: float = 0.0

    def __post_init__(self):
        self.mass = np.asarray(self.mass, dtype=float)
        if self.mass.shape != (self.grid.n,):
            raise ValueError(f"mass must have shape ({self.grid.n},), got {self.mass.shape}")
        if np.any(self.mass < 0):
            raise ValueError("cell masses must be nonnegative")

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.mass))

    @property
    def number(self) -> np.ndarray:
        return self.mass / self.grid.pivots

    @property
    def density(self) -> np.ndarray:
        """Number density reconstructed per cell."""
        return self.mass / (self.grid.pivots * self.grid.widths)


def _masses(state_or_mass, n: int) -> np.ndarray:
    m = state_or_mass.mass if isinstance(state_or_mass, State) else np.asarray(state_or_mass, dtype=float)
    if m.shape[-1] != n:
        raise ValueError(f"state has {m.shape[-1]} cells, tables expect {n}")
    return m


def apply_frag(state, tables: FragTables) -> np.ndarray:
    """Time derivative of cell masses due to fragmentation.

    Accepts a :class:`State` or a mass array of shape ``(..., n)``.
    """
    m = _masses(state, tables.n)
    return m @ tables.operator.T


def subgrid_rate(state, tables: FragTables) -> np.ndarray:
    """Rate at which fragment mass is produced below ``x_min``."""
    m = _masses(state, tables.n)
    return m @ (tables.subgrid * tables.loss_rate)


def apply_coag(state, tables: CoagTables, pivots: np.ndarray | None = None) -> np.ndarray:
    """Time derivative of cell masses due to coagulation (bilinear in the state)."""
    m = _masses(state, tables.n)
    x = state.grid.pivots if isinstance(state, State) else pivots
    if x is None:
        raise ValueError("pivots are required when passing a bare mass array")
    n_num = m / x
    single = m.ndim == 1
    n2 = np.atleast_2d(n_num)
    m2 = np.atleast_2d(m)
    out = -m2 * (n2 @ tables.rate)
    pair = n2[:, tables.i] * n2[:, tables.k]
    for row in range(n2.shape[0]):
        out[row] += np.bincount(tables.target, weights=pair[row] * tables.gain_lo, minlength=tables.n)
        hi = np.minimum(tables.target + 1, tables.n - 1)
        out[row] += np.bincount(hi, weights=pair[row] * tables.gain_hi, minlength=tables.n)
    return out[0] if single else out


def loss_rates(mass: np.ndarray, pivots: np.ndarray, frag: FragTables, coag: CoagTables) -> np.ndarray:
    """Per-cell removal rate (per unit cell mass): net breakup plus coagulation."""
    n_num = np.atleast_2d(mass) / pivots
    r = frag.net_loss_rate + n_num @ coag.rate
    return r[0] if np.ndim(mass) == 1 else r
