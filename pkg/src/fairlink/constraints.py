"""Linear expectation constraints over pair blocks.

A constraint system is a family of disjoint pair subsets, each carrying a
target for the summed edge marginals over its members. Demographic parity
uses one constraint per nonempty unordered group-pair block covering every
candidate pair; equal opportunity restricts the members to observed train
edges. Arbitrary disjoint membership constraints plug into the same
interface.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .graphs import Graph, PairUniverse

logger = logging.getLogger(__name__)

__all__ = [
    "ConstraintSystem",
    "build_dp",
    "build_eo",
    "constraint_targets",
    "eval_constraint",
]


@dataclass(eq=False)
class ConstraintSystem:
    """Disjoint pair-membership constraints with a shared density target rule.

    pair_constraint maps every universe pair to its constraint index, or -1
    for pairs no constraint touches. averaging_pairs are the universe indices
    the common density is averaged over when targets are derived from a model
    (None means all pairs).
    """

    criterion: str
    pair_constraint: np.ndarray
    member_counts: np.ndarray
    block_keys: list[tuple[int, int]]
    averaging_pairs: np.ndarray | None = None
    skipped_blocks: list[tuple[int, int]] = field(default_factory=list)
    _active: np.ndarray | None = field(init=False, repr=False, default=None)

    def __post_init__(self):
        pc = np.asarray(self.pair_constraint, dtype=np.int64)
        counts = np.asarray(self.member_counts, dtype=np.int64)
        if len(counts) != len(self.block_keys):
            raise ValueError("member_counts and block_keys disagree on the constraint count")
        if pc.size and pc.max() >= len(counts):
            raise ValueError("pair_constraint references an unknown constraint")
        check = np.bincount(pc[pc >= 0], minlength=len(counts))
        if not np.array_equal(check, counts):
            raise ValueError("member_counts do not match pair_constraint")
        if np.any(counts == 0):
            raise ValueError("every constraint needs at least one member pair")
        self.pair_constraint = pc
        self.member_counts = counts

    @property
    def n_constraints(self) -> int:
        return len(self.member_counts)

    @property
    def n_pairs(self) -> int:
        return len(self.pair_constraint)

    @property
    def active_mask(self) -> np.ndarray:
        if self._active is None:
            self._active = self.pair_constraint >= 0
        return self._active

    def member_indices(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.pair_constraint == c)

    @classmethod
    def from_member_lists(
        cls,
        n_pairs: int,
        members: list[np.ndarray],
        averaging_pairs=None,
        criterion: str = "custom",
        block_keys: list[tuple[int, int]] | None = None,
    ) -> "ConstraintSystem":
        """Build a system from explicit, disjoint member index lists."""
        pc = np.full(n_pairs, -1, dtype=np.int64)
        total = 0
        for c, idx in enumerate(members):
            idx = np.asarray(idx, dtype=np.int64)
            if np.any(pc[idx] >= 0):
                raise ValueError("constraint member sets must be disjoint")
            pc[idx] = c
            total += len(idx)
        if total != int(np.sum(pc >= 0)):
            raise ValueError("constraint member sets must be disjoint")
        counts = np.array([len(np.asarray(m)) for m in members], dtype=np.int64)
        keys = block_keys if block_keys is not None else [(c, c) for c in range(len(members))]
        return cls(
            criterion=criterion,
            pair_constraint=pc,
            member_counts=counts,
            block_keys=keys,
            averaging_pairs=None if averaging_pairs is None else np.asarray(averaging_pairs, dtype=np.int64),
        )

    def to_report(self, marginals=None, targets=None) -> list[dict]:
        """Audit rows: one dict per constraint with group pair, size and values."""
        values = None if marginals is None else eval_constraint(self, marginals)
        rows = []
        for c, (s, t) in enumerate(self.block_keys):
            row = {
                "criterion": self.criterion,
                "group_pair": f"{s}-{t}",
                "members": int(self.member_counts[c]),
            }
            if values is not None:
                row["value"] = float(values[c])
            if targets is not None:
                row["target"] = float(targets[c])
            rows.append(row)
        return rows


def build_dp(universe: PairUniverse) -> ConstraintSystem:
    """One constraint per nonempty group-pair block; members are the whole block."""
    keep = np.flatnonzero(universe.block_sizes > 0)
    remap = np.full(len(universe.block_keys), -1, dtype=np.int64)
    remap[keep] = np.arange(len(keep))
    return ConstraintSystem(
        criterion="dp",
        pair_constraint=remap[universe.block_of_pair],
        member_counts=universe.block_sizes[keep],
        block_keys=[universe.block_keys[b] for b in keep],
        averaging_pairs=None,
    )


def build_eo(universe: PairUniverse, train_graph: Graph) -> ConstraintSystem:
    """One constraint per group-pair block containing train edges; members are those edges."""
    if train_graph.m == 0:
        raise ValueError("equal-opportunity constraints need at least one train edge")
    edge_idx = universe.pair_indices(train_graph.edges)
    edge_blocks = universe.block_of_pair[edge_idx]
    per_block = np.bincount(edge_blocks, minlength=len(universe.block_keys))
    keep = np.flatnonzero(per_block > 0)
    skipped = [
        universe.block_keys[b]
        for b in np.flatnonzero((per_block == 0) & (universe.block_sizes > 0))
    ]
    if skipped:
        logger.info(
            "equal-opportunity: %d block(s) without train edges skipped: %s",
            len(skipped), skipped,
        )
    remap = np.full(len(universe.block_keys), -1, dtype=np.int64)
    remap[keep] = np.arange(len(keep))
    pc = np.full(universe.size, -1, dtype=np.int64)
    pc[edge_idx] = remap[edge_blocks]
    return ConstraintSystem(
        criterion="eo",
        pair_constraint=pc,
        member_counts=per_block[keep],
        block_keys=[universe.block_keys[b] for b in keep],
        averaging_pairs=edge_idx,
        skipped_blocks=skipped,
    )


def constraint_targets(system: ConstraintSystem, marginals: np.ndarray) -> np.ndarray:
    """Per-constraint targets: the model's mean marginal over the averaging set,
    scaled by each constraint's member count."""
    marginals = np.asarray(marginals, dtype=float)
    if system.averaging_pairs is None:
        density = float(marginals.mean())
    else:
        density = float(marginals[system.averaging_pairs].mean())
    return density * system.member_counts.astype(float)


def eval_constraint(system: ConstraintSystem, marginals: np.ndarray) -> np.ndarray:
    """Summed marginals over each constraint's member pairs."""
    act = system.active_mask
    return np.bincount(
        system.pair_constraint[act],
        weights=np.asarray(marginals, dtype=float)[act],
        minlength=system.n_constraints,
    )
