"""Discretized two-dimensional Gaussian-mixture data distributions.

The benchmark data distribution is a mixture of 2-D Gaussians evaluated at
the integer grid points of a ``grid_size x grid_size`` lattice and
normalized, packaged as a TabularModel with a masked-family vocabulary
(``V = grid_size + 1`` with the mask as the last token).
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .core import ConfigError, Vocab
from .diffusion import TabularModel


@dataclasses.dataclass(frozen=True)
class GmmComponent:
    mean: tuple[float, float]
    cov: tuple[tuple[float, float], tuple[float, float]]
    weight: float


@dataclasses.dataclass(frozen=True)
class GmmSpec:
    components: tuple[GmmComponent, ...]
    grid_size: int = 64

    def __post_init__(self):
        if self.grid_size < 2:
            raise ConfigError("grid_size must be >= 2")
        if not self.components:
            raise ConfigError("mixture needs at least one component")
        total = 0.0
        for comp in self.components:
            if comp.weight <= 0.0:
                raise ConfigError("component weights must be positive")
            total += comp.weight
        if total <= 0.0:
            raise ConfigError("component weights must sum to a positive value")


def default_gmm_spec(grid_size: int = 64) -> GmmSpec:
    """Four equal isotropic components, standard deviation 6 cells, means at
    the quarter points of the grid (scaled when grid_size != 64)."""
    scale = grid_size / 64.0
    sd = 6.0 * scale
    cov = ((sd * sd, 0.0), (0.0, sd * sd))
    quarter = [16.0 * scale, 48.0 * scale]
    comps = tuple(
        GmmComponent((mx, my), cov, 0.25) for mx in quarter for my in quarter
    )
    return GmmSpec(comps, grid_size)


def build_gmm_table(spec: GmmSpec) -> TabularModel:
    """Evaluate the mixture density at integer cell centers (i, j) for
    i, j in [0, grid_size), normalize over the grid, and wrap the table as
    a masked-family TabularModel (L=2, V = grid_size + 1)."""
    g = spec.grid_size
    xs = np.arange(g, dtype=np.float64)
    xx, yy = np.meshgrid(xs, xs, indexing="ij")
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
    table = np.zeros(g * g)
    for comp in spec.components:
        cov = np.asarray(comp.cov, dtype=np.float64)
        if cov.shape != (2, 2) or abs(cov[0, 1] - cov[1, 0]) > 1e-12:
            raise ConfigError("covariance must be symmetric 2x2")
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ConfigError("covariance must be symmetric positive definite")
        diff = pts - np.asarray(comp.mean, dtype=np.float64)
        # Solve chol @ y = diff^T for the Mahalanobis norm.
        y = np.linalg.solve(chol, diff.T)
        maha = np.sum(y * y, axis=0)
        log_det = 2.0 * np.log(np.diag(chol)).sum()
        log_pdf = -0.5 * (maha + log_det + 2.0 * np.log(2.0 * np.pi))
        table += comp.weight * np.exp(log_pdf)
    total = table.sum()
    if total <= 0.0:
        raise ConfigError("mixture density vanishes on the whole grid")
    table = (table / total).reshape(g, g)
    vocab = Vocab(g + 1, mask_index=g)
    return TabularModel(vocab, 2, table)
