"""Dose-combination grids, their partial order, and complete orderings.

A grid of two agents A (levels ``a_1 < ... < a_r``) and B (``b_1 < ... < b_c``)
is indexed by rows: ``d_1 = (a_1, b_1)``, ``d_2 = (a_2, b_1)``, ...,
``d_k = (a_r, b_c)`` with ``k = r * c``.  Monotonicity within each agent
induces the product partial order; a complete ordering is a linear extension
of it, written as a permutation of the 1-based dose indices in nondecreasing
assumed toxicity.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

__all__ = [
    "DoseGrid",
    "build_grid",
    "standard_orderings",
    "validate_linear_extension",
    "permute_skeleton",
]


@dataclass(frozen=True)
class DoseGrid:
    """An r x c dose-combination lattice. Immutable."""

    r: int  # levels of agent A
    c: int  # levels of agent B

    @property
    def k(self) -> int:
        return self.r * self.c

    def coords(self, dose: int) -> tuple[int, int]:
        """1-based (agent A level, agent B level) of dose index ``dose``."""
        if not 1 <= dose <= self.k:
            raise ValueError(f"dose index {dose} outside 1..{self.k}")
        return ((dose - 1) % self.r + 1, (dose - 1) // self.r + 1)

    def index(self, a: int, b: int) -> int:
        if not (1 <= a <= self.r and 1 <= b <= self.c):
            raise ValueError(f"coordinates ({a},{b}) outside {self.r}x{self.c} grid")
        return (b - 1) * self.r + a

    def leq(self, i: int, j: int) -> bool:
        """True iff d_i is known to be at most as toxic as d_j."""
        ai, bi = self.coords(i)
        aj, bj = self.coords(j)
        return ai <= aj and bi <= bj

    def comparable(self, i: int, j: int) -> bool:
        return self.leq(i, j) or self.leq(j, i)

    def incomparable_pairs(self) -> list[tuple[int, int]]:
        return [
            (i, j)
            for i, j in itertools.combinations(range(1, self.k + 1), 2)
            if not self.comparable(i, j)
        ]


def build_grid(r: int, c: int) -> DoseGrid:
    if r < 1 or c < 1:
        raise ValueError("grid needs at least one level per agent")
    return DoseGrid(int(r), int(c))


# The six orderings conventionally used for 3x3 grids: by rows, by columns,
# up diagonals, down diagonals, up-and-down diagonals, down-and-up diagonals.
_ORDERINGS_3X3: tuple[tuple[int, ...], ...] = (
    (1, 2, 3, 4, 5, 6, 7, 8, 9),
    (1, 4, 7, 2, 5, 8, 3, 6, 9),
    (1, 2, 4, 3, 5, 7, 6, 8, 9),
    (1, 4, 2, 7, 5, 3, 8, 6, 9),
    (1, 2, 4, 7, 5, 3, 6, 8, 9),
    (1, 4, 2, 3, 5, 7, 8, 6, 9),
)

_ORDERINGS_2X2: tuple[tuple[int, ...], ...] = (
    (1, 2, 3, 4),
    (1, 3, 2, 4),
)


def standard_orderings(grid: DoseGrid) -> list[tuple[int, ...]]:
    """Built-in complete orderings for 2x2 and 3x3 grids.

    Other grid sizes have no canonical subset; the caller must supply
    orderings explicitly through the trial configuration.
    """
    if (grid.r, grid.c) == (3, 3):
        return list(_ORDERINGS_3X3)
    if (grid.r, grid.c) == (2, 2):
        return list(_ORDERINGS_2X2)
    if grid.k == 1:
        return [(1,)]
    raise ValueError(
        f"no built-in orderings for a {grid.r}x{grid.c} grid; "
        "supply 'orderings' in the configuration as lists of 1-based dose indices"
    )


def validate_linear_extension(grid: DoseGrid, ordering: tuple[int, ...]) -> bool:
    """True iff ``ordering`` is a linear extension of the grid's partial order."""
    if sorted(ordering) != list(range(1, grid.k + 1)):
        raise ValueError(f"ordering {ordering} is not a permutation of 1..{grid.k}")
    pos = {dose: rank for rank, dose in enumerate(ordering)}
    for i, j in itertools.combinations(range(1, grid.k + 1), 2):
        if grid.leq(i, j) and pos[i] > pos[j]:
            return False
        if grid.leq(j, i) and pos[j] > pos[i]:
            return False
    return True


def permute_skeleton(values, ordering: tuple[int, ...]):
    """Assign sorted skeleton values to doses according to a complete ordering.

    ``values`` are ascending; the dose at position j of the ordering receives
    the j-th smallest value.  The result is indexed by dose index.
    """
    values = list(values)
    if len(values) != len(ordering):
        raise ValueError(
            f"skeleton length {len(values)} does not match ordering length {len(ordering)}"
        )
    out = [0.0] * len(values)
    for rank, dose in enumerate(ordering):
        out[dose - 1] = values[rank]
    return out
