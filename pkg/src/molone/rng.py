"""Labeled, reproducible random streams.

Every stochastic operation in the package draws from an :class:`RngStream`,
a (seed, label) pair that maps deterministically to a NumPy generator.
Distinct labels derived from the same seed behave as independent streams,
which is what makes whole runs replayable from a single root seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream_label: str = "root"

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream.

        Calling this twice returns two generators that produce identical
        sequences; advancing one never affects the other.
        """
        entropy = [self.seed & _MASK64]
        entropy.extend(self.stream_label.encode("utf-8"))
        return np.random.default_rng(np.random.SeedSequence(entropy))

    def child(self, label: str) -> "RngStream":
        """Derive a sub-stream; children with different labels are independent."""
        return RngStream(self.seed, f"{self.stream_label}/{label}")

    def integer_seed(self) -> int:
        """Collapse the stream to a plain integer seed for third-party APIs."""
        return int(self.generator().integers(0, 2**63 - 1))
