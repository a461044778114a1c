"""Reproducible Brownian increment ensembles and Monte Carlo reductions.

Every path draws from its own substream, seeded by (master seed, path
index).  Path p is therefore bit-identical no matter how many paths are
requested or how work is scheduled across workers.  Reductions use a fixed
order (sequential inside blocks of ``BLOCK`` paths, blocks merged in
order), so estimates never depend on the worker count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import TimeGrid

BLOCK = 512


@dataclass(frozen=True)
class BrownianEnsemble:
    """P independent paths of N Gaussian increments with variance tau."""

    paths: int
    steps: int
    tau: float
    seed: int
    increments: np.ndarray  # (paths, steps), increment n covers (t_n, t_{n+1}]
    brownian: np.ndarray = field(init=False)  # (paths, steps + 1) prefix sums

    def __post_init__(self):
        w = np.zeros((self.paths, self.steps + 1))
        np.cumsum(self.increments, axis=1, out=w[:, 1:])
        w.flags.writeable = False
        object.__setattr__(self, "brownian", w)

    def brownian_at(self, level: int) -> np.ndarray:
        """W_{t_n} for every path, n = 0..N."""
        return self.brownian[:, level]

    def antithetic(self) -> "BrownianEnsemble":
        """Ensemble with all increments negated (for variance checks)."""
        return BrownianEnsemble(
            paths=self.paths,
            steps=self.steps,
            tau=self.tau,
            seed=self.seed,
            increments=-self.increments,
        )

    def subset(self, start: int, stop: int) -> "BrownianEnsemble":
        """Paths start..stop-1 as their own ensemble (same substreams)."""
        return BrownianEnsemble(
            paths=stop - start,
            steps=self.steps,
            tau=self.tau,
            seed=self.seed,
            increments=self.increments[start:stop],
        )


def sample(P: int, grid: TimeGrid, seed: int) -> BrownianEnsemble:
    """Draw P paths of N increments, each ~ Normal(0, tau).

    The increments of path p come from ``SeedSequence(seed, spawn_key=(p,))``
    regardless of P, so enlarging the ensemble extends it without changing
    existing paths.
    """
    if P < 1:
        raise ValueError(f"path count must be >= 1, got {P}")
    if seed < 0:
        raise ValueError(f"seed must be a non-negative integer, got {seed}")
    scale = np.sqrt(grid.tau)
    inc = np.empty((P, grid.N))
    for p in range(P):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(p,)))
        inc[p] = rng.normal(0.0, scale, grid.N)
    inc.flags.writeable = False
    return BrownianEnsemble(paths=P, steps=grid.N, tau=grid.tau, seed=seed, increments=inc)


def mc_mean(values: np.ndarray) -> np.ndarray | float:
    """Arithmetic mean over the path axis (axis 0), pairwise-summed."""
    values = np.asarray(values)
    if values.shape[0] == 0:
        raise ValueError("mc_mean of an empty ensemble")
    out = np.mean(values, axis=0)
    return float(out) if np.ndim(out) == 0 else out


def block_mean(total_paths: int):
    """Streaming mean accumulator with the documented fixed merge order.

    Returns (update, finish): feed path-blocks in path order through
    ``update(block)``; ``finish()`` yields the mean over all paths.
    """
    state = {"sum": None, "count": 0}

    def update(block: np.ndarray) -> None:
        block = np.asarray(block, dtype=float)
        s = block.sum(axis=0)
        state["sum"] = s if state["sum"] is None else state["sum"] + s
        state["count"] += block.shape[0]

    def finish() -> np.ndarray:
        if state["count"] != total_paths:
            raise ValueError(f"saw {state['count']} paths, expected {total_paths}")
        return state["sum"] / total_paths

    return update, finish


def strong_error_norm(errors, system) -> float:
    """sqrt of the max-over-time, mean-over-path squared L2 error.

    ``errors`` holds per-path, per-level interior nodal error fields with
    shape (paths, levels, n_interior); a ``PathEnsembleTrajectory`` is
    accepted as well.
    """
    values = getattr(errors, "values", errors)
    values = np.asarray(values, dtype=float)
    if values.ndim != 3 or values.shape[2] != system.n:
        raise ValueError(
            f"expected errors of shape (paths, levels, {system.n}), got {values.shape}"
        )
    p, levels, n = values.shape
    me = (system.mass @ values.reshape(-1, n).T).T.reshape(p, levels, n)
    sq = np.einsum("pln,pln->pl", values, me)
    return float(np.sqrt(np.max(np.mean(sq, axis=0))))
