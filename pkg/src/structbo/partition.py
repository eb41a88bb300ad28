"""Assignment of (stage, algorithm) units to kernel subspaces."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .space import SearchSpace, SpaceError

Unit = tuple[str, str]  # (stage, algorithm name)


@dataclass(frozen=True)
class Decomposition:
    """Maps every (stage, algorithm) unit to one of M subspaces.

    An algorithm's hyperparameters follow it into its subspace, so the
    assignment over units induces a disjoint cover of all dimensions.
    """

    assignment: dict[Unit, int]
    M: int

    def __post_init__(self):
        if self.M < 1:
            raise ValueError(f"M must be >= 1, got {self.M}")
        for unit, m in self.assignment.items():
            if not 0 <= m < self.M:
                raise ValueError(f"unit {unit}: subspace index {m} outside [0, {self.M})")

    def validate_for(self, space: SearchSpace) -> None:
        units = set(space.units())
        if set(self.assignment) != units:
            missing = units - set(self.assignment)
            extra = set(self.assignment) - units
            raise SpaceError(
                f"decomposition does not cover the space (missing {sorted(missing)}, "
                f"extra {sorted(extra)})")

    def counts(self) -> np.ndarray:
        n = np.zeros(self.M, dtype=int)
        for m in self.assignment.values():
            n[m] += 1
        return n

    def stage_count(self, stage: str, m: int, exclude: Unit | None = None) -> int:
        """Number of stage's algorithms currently in subspace m."""
        return sum(1 for (s, a), mm in self.assignment.items()
                   if s == stage and mm == m and (s, a) != exclude)

    def subspace_units(self, m: int) -> list[Unit]:
        return sorted(u for u, mm in self.assignment.items() if mm == m)

    def with_assignment(self, unit: Unit, m: int) -> "Decomposition":
        if unit not in self.assignment:
            raise KeyError(f"unknown unit {unit}")
        new = dict(self.assignment)
        new[unit] = m
        return Decomposition(new, self.M)

    def relabeled(self, perm: list[int]) -> "Decomposition":
        """Apply a permutation of subspace labels (perm[old] = new)."""
        if sorted(perm) != list(range(self.M)):
            raise ValueError("perm must be a permutation of subspace labels")
        return Decomposition({u: perm[m] for u, m in self.assignment.items()}, self.M)

    def key(self) -> tuple:
        """Canonical hashable form (stable across dict orderings)."""
        return tuple(sorted((s, a, m) for (s, a), m in self.assignment.items()))

    def __hash__(self):
        return hash(self.key())

    def __eq__(self, other):
        return isinstance(other, Decomposition) and self.M == other.M and self.key() == other.key()


def stage_aligned(space: SearchSpace, M: int) -> Decomposition:
    """All algorithms of a stage share one subspace; stage i -> i mod M."""
    assignment = {}
    for i, s in enumerate(space.stages):
        for a in space.algorithms[s]:
            assignment[(s, a.name)] = i % M
    return Decomposition(assignment, M)


def adjusted_rand_index(z1: Decomposition, z2: Decomposition) -> float:
    """Chance-corrected agreement between two decompositions of one unit set."""
    units = sorted(z1.assignment)
    if sorted(z2.assignment) != units:
        raise ValueError("decompositions cover different unit sets")
    n = len(units)
    table = np.zeros((z1.M, z2.M), dtype=np.int64)
    for u in units:
        table[z1.assignment[u], z2.assignment[u]] += 1
    comb = lambda x: x * (x - 1) / 2.0
    sum_cells = comb(table.astype(float)).sum()
    sum_rows = comb(table.sum(axis=1).astype(float)).sum()
    sum_cols = comb(table.sum(axis=0).astype(float)).sum()
    total = comb(float(n))
    expected = sum_rows * sum_cols / total if total else 0.0
    max_index = (sum_rows + sum_cols) / 2.0
    if max_index == expected:
        return 1.0
    return float((sum_cells - expected) / (max_index - expected))
