"""Attention-permission matrices for the summarization bottleneck.

A sequence [input x summary x output] of lengths (n, m, o) gets a mask in
which the input+summary region is plainly causal while output positions may
only see the summary region and earlier outputs, never the inputs. That
restriction is what forces history to flow through the summary slots.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MaskSpec:
    """Region lengths of a bottleneck sequence."""

    n: int
    m: int
    o: int

    def __post_init__(self):
        if self.n < 0 or self.o < 0:
            raise ValueError("n and o must be non-negative")
        if self.m < 1:
            raise ValueError("m must be >= 1")

    @property
    def total(self) -> int:
        return self.n + self.m + self.o


def bottleneck_mask(spec: MaskSpec) -> np.ndarray:
    """Boolean (n+m+o)^2 matrix; True where position i may attend to j.

    With 1-based indices: allowed iff (j <= i and i <= n+m) or
    (j <= i and j > n). Row i always allows j = i.
    """
    size = spec.total
    i = np.arange(1, size + 1)[:, None]
    j = np.arange(1, size + 1)[None, :]
    return (j <= i) & ((i <= spec.n + spec.m) | (j > spec.n))


def causal_mask(size: int) -> np.ndarray:
    """Plain lower-triangular permission matrix."""
    return np.tril(np.ones((size, size), dtype=bool))
