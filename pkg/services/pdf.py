"""
Normed realization histograms (HTC and reference-temperature PDFs)
"""
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from services.errors import EmptyHistogramError, GridMismatchError

ALPHA, TEMPERATURE = 0, 1


def realization_edges(values, n_bins: int) -> np.ndarray:
    """Uniform edges over the sample range; a single bin for degenerate samples"""
    values = np.asarray(values, dtype=float)
    lo, hi = float(values.min()), float(values.max())
    if hi - lo <= 1e-12 * max(1.0, abs(hi)):
        half = max(abs(lo) * 1e-3, 1e-6)
        return np.array([lo - half, lo + half])
    return np.linspace(lo, hi, n_bins + 1)


@dataclass
class RealizationHistogram:
    """
    Normed histogram over realizations, e.g. (alpha, T_ref)

    Axis 0 is the heat-transfer coefficient, axis 1 (if present) the
    reference temperature paired with it.
    """

    edges: Tuple[np.ndarray, ...]
    counts: np.ndarray
    density: np.ndarray

    @classmethod
    def from_counts(cls, edges: Sequence[np.ndarray], counts) -> "RealizationHistogram":
        edges = tuple(np.asarray(e, dtype=float) for e in edges)
        counts = np.asarray(counts, dtype=float)
        if counts.shape != tuple(e.size - 1 for e in edges):
            raise GridMismatchError(f"Counts shape {counts.shape} does not match edges")
        total = counts.sum()
        if total <= 0:
            raise EmptyHistogramError("Realization histogram has no samples")
        volumes = grid_volumes(edges)
        return cls(edges, counts, counts / (total * volumes))

    @classmethod
    def from_samples(
        cls,
        samples,
        edges: Optional[Sequence[np.ndarray]] = None,
        n_bins: int = 12,
    ) -> "RealizationHistogram":
        samples = np.atleast_2d(np.asarray(samples, dtype=float))
        if samples.shape[0] == 0:
            raise EmptyHistogramError("No realizations to bin")
        if edges is None:
            edges = [realization_edges(samples[:, d], n_bins) for d in range(samples.shape[1])]
        counts, edges = np.histogramdd(samples, bins=list(edges))
        return cls.from_counts(edges, counts)

    @classmethod
    def dirac(cls, values: Sequence[float]) -> "RealizationHistogram":
        """Single-realization PDF (deterministic model)"""
        edges = [realization_edges([v], 1) for v in values]
        return cls.from_counts(edges, np.ones((1,) * len(values)))

    @property
    def ndim(self) -> int:
        return len(self.edges)

    def volumes(self) -> np.ndarray:
        return grid_volumes(self.edges)

    def centers(self) -> Tuple[np.ndarray, ...]:
        """Bin-center meshes broadcast to the histogram shape"""
        mids = [0.5 * (e[:-1] + e[1:]) for e in self.edges]
        return tuple(np.meshgrid(*mids, indexing="ij"))

    def mass(self) -> float:
        return float(np.sum(self.density * self.volumes()))

    def expect(self, f: Callable[..., np.ndarray]) -> float:
        """Sum of f(centers) * density * bin volume over occupied bins"""
        occupied = self.counts > 0
        values = np.broadcast_to(f(*self.centers()), self.counts.shape)
        return float(np.sum(values[occupied] * self.density[occupied] * self.volumes()[occupied]))

    def mean_alpha(self) -> float:
        return self.expect(lambda alpha, *rest: alpha)

    def mean_alpha_tref(self) -> float:
        return self.expect(lambda alpha, tref: alpha * tref)

    def scaled(self, factors: Sequence[float]) -> "RealizationHistogram":
        """Change of variables x -> factor * x along every axis"""
        if len(factors) != self.ndim:
            raise GridMismatchError(f"Expected {self.ndim} scale factors, got {len(factors)}")
        edges = tuple(e * f for e, f in zip(self.edges, factors))
        density = self.density / float(np.prod(factors))
        return RealizationHistogram(edges, self.counts.copy(), density)


def grid_volumes(edges: Sequence[np.ndarray]) -> np.ndarray:
    volume = np.ones(())
    for e in edges:
        volume = np.multiply.outer(volume, np.diff(e))
    return volume
