"""Odd/even slice permutation that builds self-supervised training pairs.

Along the chosen axis the cube is split into even-index and odd-index
slices (0-based, so evens are 0, 2, 4, ...).  The input stack is the
evens followed by the odds; the target stack is the odds followed by the
evens.  Aligned frames therefore always show the same field of view
captured one step apart, which is what makes the pair a valid
noise-to-noise supervision signal.  An odd trailing slice is dropped
from the pairs; prediction always runs on the full original cube.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cubeio import HyperCube, axis_index, canonical_axis


@dataclass(frozen=True)
class PairSet:
    """Permuted training pair: two stacks of the same slices in different
    orders, plus the bookkeeping needed to undo the shuffle."""

    input: HyperCube
    target: HyperCube
    axis: str
    n_original: int
    parity_dropped: bool

    def __post_init__(self):
        object.__setattr__(self, "axis", canonical_axis(self.axis))
        if self.input.shape != self.target.shape:
            raise ValueError(
                f"input shape {self.input.shape} != target shape {self.target.shape}"
            )
        kept = 2 * (int(self.n_original) // 2)
        ax = axis_index(self.axis)
        if self.input.shape[ax] != kept:
            raise ValueError(
                f"stacks have {self.input.shape[ax]} slices along {self.axis}, "
                f"expected {kept} for an original extent of {self.n_original}"
            )
        if self.parity_dropped != (int(self.n_original) % 2 == 1):
            raise ValueError("parity_dropped flag inconsistent with n_original")


def _permutation(n_kept: int) -> np.ndarray:
    """Original slice index at each position of the evens-then-odds stack."""
    return np.concatenate([np.arange(0, n_kept, 2), np.arange(1, n_kept, 2)])


def split_permute(cube: HyperCube, axis: str) -> PairSet:
    """Build the (evens+odds, odds+evens) training pair along ``axis``."""
    ax = axis_index(axis)
    n = cube.data.shape[ax]
    if n < 2:
        raise ValueError(f"axis {canonical_axis(axis)} extent {n} < 2; nothing to pair")
    kept = 2 * (n // 2)
    order = _permutation(kept)
    evens_first = np.take(cube.data, order, axis=ax)
    odds_first = np.take(cube.data, np.concatenate([order[kept // 2:], order[: kept // 2]]),
                         axis=ax)
    drop_wn = canonical_axis(axis) == "w"
    return PairSet(
        input=cube.with_data(evens_first, drop_wavenumbers=drop_wn),
        target=cube.with_data(odds_first, drop_wavenumbers=drop_wn),
        axis=axis,
        n_original=n,
        parity_dropped=bool(n % 2),
    )


def restore_order(pairs: PairSet) -> tuple[HyperCube, HyperCube]:
    """Undo the permutation of both stacks.

    Each stack is restored by its own inverse shuffle, so both results
    equal the original cube truncated to an even slice count.
    """
    ax = axis_index(pairs.axis)
    kept = pairs.input.shape[ax]
    order = _permutation(kept)
    inverse = np.empty(kept, dtype=np.intp)
    inverse[order] = np.arange(kept)
    target_order = np.concatenate([order[kept // 2:], order[: kept // 2]])
    target_inverse = np.empty(kept, dtype=np.intp)
    target_inverse[target_order] = np.arange(kept)
    restored_in = np.take(pairs.input.data, inverse, axis=ax)
    restored_tg = np.take(pairs.target.data, target_inverse, axis=ax)
    if not np.array_equal(restored_in, restored_tg):
        raise ValueError("input and target stacks disagree after inverse permutation")
    return pairs.input.with_data(restored_in), pairs.target.with_data(restored_tg)


def aligned_index_pairs(n_original: int) -> list[tuple[int, int]]:
    """(input original index, target original index) at each stack position."""
    kept = 2 * (int(n_original) // 2)
    order = _permutation(kept)
    target_order = np.concatenate([order[kept // 2:], order[: kept // 2]])
    return list(zip(order.tolist(), target_order.tolist()))
