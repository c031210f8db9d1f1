"""Wiener-measure sampling on uniform time grids.

Paths are represented at grid points only; integrals along paths use the
trapezoidal rule and stochastic sums use increment-based rules from
:mod:`fklab.stochint`. Brownian bridges are built from free paths by the
linear-drift transform, which pins the endpoint bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .mc import MCEstimate, mc_run, DEFAULT_CHUNK
from .streams import RngStream


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid s_k = k * dt on [0, t_end], with dt = t_end / n_steps."""

    t_end: float
    n_steps: int

    def __post_init__(self) -> None:
        if self.n_steps < 1:
            raise ValueError("n_steps must be at least 1")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")

    @property
    def dt(self) -> float:
        return self.t_end / self.n_steps

    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)


@dataclass(frozen=True)
class WienerPath:
    """One discretized d-component path, values[0] = 0."""

    grid: TimeGrid
    values: np.ndarray  # (n_steps + 1, d)

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != self.grid.n_steps + 1:
            raise ValueError("values must have shape (n_steps + 1, d)")
        if not np.all(v[0] == 0.0):
            raise ValueError("paths start at the origin")
        object.__setattr__(self, "values", v)

    @property
    def d(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class PathBatch:
    """A stack of paths sharing one grid; values has shape (n_paths, n+1, d)."""

    grid: TimeGrid
    values: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[2]

    def __iter__(self):
        for row in self.values:
            yield WienerPath(self.grid, row)


@dataclass(frozen=True)
class TestFunction:
    """Deterministic R_+ -> R^d integrand with compact support.

    ``evaluator`` maps an array of times (n,) to values (n, d) and must
    vanish for s > support_end.
    """

    evaluator: Callable[[np.ndarray], np.ndarray]
    support_end: float


def sample_increments(grid: TimeGrid, d: int, n_paths: int,
                      gen: np.random.Generator) -> np.ndarray:
    """Gaussian increments with component variance dt, shape (n_paths, n, d)."""
    if d < 1:
        raise ValueError("dimension must be at least 1")
    return gen.standard_normal((n_paths, grid.n_steps, d)) * np.sqrt(grid.dt)


def paths_from_increments(grid: TimeGrid, dw: np.ndarray) -> np.ndarray:
    """Cumulative sums with a zero row prepended, shape (n_paths, n+1, d)."""
    n_paths, _, d = dw.shape
    out = np.empty((n_paths, grid.n_steps + 1, d))
    out[:, 0] = 0.0
    np.cumsum(dw, axis=1, out=out[:, 1:])
    return out


def sample_path(grid: TimeGrid, d: int, rng: RngStream) -> WienerPath:
    """Draw one standard Wiener path on the grid."""
    gen = rng.generator()
    values = paths_from_increments(grid, sample_increments(grid, d, 1, gen))
    return WienerPath(grid, values[0])


def sample_paths(grid: TimeGrid, d: int, n_paths: int, rng: RngStream) -> PathBatch:
    """Draw an ensemble of independent Wiener paths as one batch."""
    gen = rng.generator()
    return PathBatch(grid, paths_from_increments(
        grid, sample_increments(grid, d, n_paths, gen)))


def bridge_from_free(grid: TimeGrid, values: np.ndarray,
                     endpoint: np.ndarray) -> np.ndarray:
    """Pin free paths (n_paths, n+1, d) to the endpoint by linear drift."""
    s = grid.times() / grid.t_end  # (n+1,)
    correction = values[:, -1:, :] - endpoint[None, None, :]
    pinned = values - s[None, :, None] * correction
    pinned[:, -1, :] = endpoint  # exact pinning, no rounding residue
    return pinned


def sample_bridge(grid: TimeGrid, d: int, endpoint: Sequence[float],
                  rng: RngStream) -> WienerPath:
    """Brownian bridge from 0 to ``endpoint`` over [0, t_end]."""
    endpoint = np.asarray(endpoint, dtype=float).reshape(-1)
    if endpoint.shape[0] != d:
        raise ValueError("endpoint dimension does not match d")
    gen = rng.generator()
    free = paths_from_increments(grid, sample_increments(grid, d, 1, gen))
    return WienerPath(grid, bridge_from_free(grid, free, endpoint)[0])


def sample_bridges(grid: TimeGrid, d: int, endpoint: Sequence[float],
                   n_paths: int, rng: RngStream) -> PathBatch:
    endpoint = np.asarray(endpoint, dtype=float).reshape(-1)
    if endpoint.shape[0] != d:
        raise ValueError("endpoint dimension does not match d")
    gen = rng.generator()
    free = paths_from_increments(grid, sample_increments(grid, d, n_paths, gen))
    return PathBatch(grid, bridge_from_free(grid, free, endpoint))


def _as_batch(paths: PathBatch | Iterable[WienerPath]) -> PathBatch:
    if isinstance(paths, PathBatch):
        return paths
    paths = list(paths)
    grid = paths[0].grid
    for p in paths[1:]:
        if p.grid != grid:
            raise ValueError("all paths must share one grid")
    return PathBatch(grid, np.stack([p.values for p in paths]))


def _check_support(grid: TimeGrid, f: TestFunction) -> None:
    if f.support_end > grid.t_end + 1e-12:
        raise ValueError("test function support exceeds the time horizon")


def _estimate_from_samples(samples: np.ndarray) -> MCEstimate:
    n = samples.shape[0]
    mean = samples.mean(axis=0)
    if n > 1:
        var = np.abs(samples - mean) ** 2
        stderr = np.sqrt(var.sum(axis=0) / (n - 1) / n)
    else:
        stderr = np.zeros_like(np.abs(mean))
    return MCEstimate(complex(mean), float(stderr), n)


def char_functional_samples(batch: PathBatch, f: TestFunction) -> np.ndarray:
    """Per-path exp(-i * trapz(w(s) . f(s) ds)), shape (n_paths,)."""
    grid = batch.grid
    fv = np.asarray(f.evaluator(grid.times()))  # (n+1, d)
    weights = np.full(grid.n_steps + 1, grid.dt)
    weights[0] = weights[-1] = grid.dt / 2
    integrand = np.einsum("pkd,kd,k->p", batch.values, fv, weights)
    return np.exp(-1j * integrand)


def estimate_char_functional(paths: PathBatch | Iterable[WienerPath],
                             f: TestFunction) -> MCEstimate:
    """Monte Carlo functional Fourier transform of the ensemble at f.

    The target for Wiener statistics is
    exp(-1/2 * integral integral min(r, s) f(r) . f(s) dr ds).
    """
    batch = _as_batch(paths)
    _check_support(batch.grid, f)
    return _estimate_from_samples(char_functional_samples(batch, f))


def white_noise_functional_samples(batch: PathBatch, f: TestFunction) -> np.ndarray:
    """Per-path exp(-i * Stratonovich sum of f(s) . dw(s))."""
    grid = batch.grid
    times = grid.times()
    mid = 0.5 * (times[1:] + times[:-1])
    fv = np.asarray(f.evaluator(mid))  # (n, d)
    dw = np.diff(batch.values, axis=1)
    integrand = np.einsum("pkd,kd->p", dw, fv)
    return np.exp(-1j * integrand)


def estimate_white_noise_functional(paths: PathBatch | Iterable[WienerPath],
                                    f: TestFunction) -> MCEstimate:
    """White-noise characteristic functional; target exp(-1/2 * integral f^2)."""
    batch = _as_batch(paths)
    _check_support(batch.grid, f)
    return _estimate_from_samples(white_noise_functional_samples(batch, f))


def estimate_covariance(grid: TimeGrid, d: int, n_paths: int, rng: RngStream,
                        node_indices: Sequence[int],
                        chunk_size: int = DEFAULT_CHUNK,
                        workers: int = 1) -> MCEstimate:
    """Means and second moments of path values at selected grid nodes.

    Returns an estimate whose mean stacks [w_j(s_a)] and [w_j(s_a) w_k(s_b)]
    as a flat vector: first d * len(nodes) first-moment entries, then the
    full (node, node, j, k) second-moment block.
    """
    idx = np.asarray(node_indices, dtype=int)

    def func(gen: np.random.Generator, count: int) -> np.ndarray:
        vals = paths_from_increments(grid, sample_increments(grid, d, count, gen))
        at = vals[:, idx, :]  # (count, a, d)
        first = at.reshape(count, -1)
        second = np.einsum("paj,pbk->pabjk", at, at).reshape(count, -1)
        return np.concatenate([first, second], axis=1)

    return mc_run(func, n_paths, rng, chunk_size=chunk_size, workers=workers)
