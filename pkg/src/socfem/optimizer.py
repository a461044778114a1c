"""Gradient projection for the integral state constraint.

Each iteration takes a gradient step on the control, re-solves the mean
state, and projects back onto the feasible set by subtracting a multiple
of the auxiliary backward field.  The multiplier is chosen so that the
updated mean state's space-time integral lands exactly on the constraint
level whenever the half step is infeasible; feasible half steps leave the
control untouched (multiplier zero).

Expectations are evaluated either in closed form (``mean-field``, exact
for additive noise and deterministic controls) or as path averages over a
fixed Brownian ensemble (``monte-carlo``).  Both reduce to the same affine
iteration: the state responses to data and control separate, so the path
ensemble is simulated once up front, not once per iteration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidStateError
from .fem import FemSystem, load_from_values
from .grid import TimeGrid
from .paths import BLOCK, BrownianEnsemble
from .spde import (
    ProblemSpec,
    Trajectory,
    backward_adjoint_from_loads,
    control_response,
    eval_pathwise,
    forward_mean,
    iter_forward_paths,
    mean_target_loads,
    mtilde_solve,
    qtilde_solve,
)

ESTIMATORS = ("mean-field", "monte-carlo")


@dataclass
class OptimizerConfig:
    """Loop parameters; ``rho=None`` selects 0.9/(alpha + e^T)."""

    rho: float | None = None
    eps0: float = 1e-6
    max_iter: int = 500
    u0: Trajectory | None = None

    def __post_init__(self):
        if self.rho is not None and not self.rho > 0.0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if not self.eps0 > 0.0:
            raise ValueError(f"eps0 must be positive, got {self.eps0}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    mu: float
    step_error: float
    constraint_integral: float
    cost: float


@dataclass
class GpResult:
    control: Trajectory
    mu: float
    records: list[IterationRecord]
    converged: bool
    state_mean: Trajectory
    adjoint_mean: Trajectory
    control_history: list[np.ndarray] | None = None

    @property
    def iterations(self) -> int:
        return len(self.records)


def constraint_integral(x_mean: Trajectory, system: FemSystem, grid: TimeGrid) -> float:
    """Space-time integral of the mean state, right-endpoint rule in time."""
    return float(grid.tau * (x_mean.values[1:] @ system.ones_load).sum())


def select_multiplier(
    integral_half: float, delta: float, rho: float, qtilde_integral: float
) -> float:
    """Multiplier that pins the projected state's integral to delta.

    mu = max(integral_half - delta, 0) / (rho * qtilde_integral); the
    denominator is positive on any usable grid by the extremum principle.
    """
    denom = rho * qtilde_integral
    if not denom > 0.0:
        raise InvalidStateError(
            f"rho * qtilde_integral = {denom} must be positive for the projection"
        )
    return max(integral_half - delta, 0.0) / denom


def contraction_certificate(alpha: float, T: float, rho: float) -> float | None:
    """Certified contraction factor for the iteration, or None if rejected.

    Returns 1 - rho*alpha for rho <= 1/(alpha + e^T) and sqrt(F(rho)) for
    1/(alpha + e^T) < rho < 2/(alpha + 2 e^T) with
    F(rho) = rho^2 (alpha+1)(alpha+2 e^T) - rho (2 alpha + 2) + 1.
    """
    if not rho > 0.0:
        return None
    eT = math.exp(T)
    if rho <= 1.0 / (alpha + eT):
        lam = 1.0 - rho * alpha
        return lam if 0.0 < lam < 1.0 else None
    if rho < 2.0 / (alpha + 2.0 * eT):
        f = rho * rho * (alpha + 1.0) * (alpha + 2.0 * eT) - rho * (2.0 * alpha + 2.0) + 1.0
        if 0.0 < f < 1.0:
            return math.sqrt(f)
    return None


class GradientProjection:
    """Shared workspace for one problem/grid/estimator combination.

    The control-independent pieces (auxiliary fields, data response, target
    loads) are computed once; ``run`` then iterates, and ``project`` exposes
    the projection alone for property tests and reuse.
    """

    def __init__(
        self,
        spec: ProblemSpec,
        system: FemSystem,
        grid: TimeGrid,
        rho: float | None = None,
        estimator: str = "mean-field",
        ensemble: BrownianEnsemble | None = None,
    ):
        if estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}, got {estimator!r}")
        if estimator == "monte-carlo" and ensemble is None:
            raise ValueError("the monte-carlo estimator needs a Brownian ensemble")
        self.spec = spec
        self.system = system
        self.grid = grid
        self.estimator = estimator
        self.rho = 0.9 / (spec.alpha + math.exp(spec.T)) if rho is None else float(rho)

        self.mtilde = mtilde_solve(system, grid, spec.gamma)
        self.qtilde = qtilde_solve(system, grid, self.mtilde, spec.gamma)
        self.qtilde_integral = constraint_integral(self.qtilde, system, grid)

        if estimator == "mean-field":
            zero = Trajectory.zeros(grid, system.n)
            self.base = forward_mean(spec, system, grid, zero)
            self.target_loads = mean_target_loads(spec, system, grid)
        else:
            self.base, self.target_loads = self._monte_carlo_base(ensemble)

        self.target_proj = np.zeros_like(self.target_loads)
        for n in range(1, grid.N + 1):
            self.target_proj[n] = system.mass_solve(self.target_loads[n])

    def _monte_carlo_base(self, ensemble: BrownianEnsemble):
        """Path-averaged zero-control state and target loads, one sweep."""
        spec, system, grid = self.spec, self.system, self.grid
        zero = Trajectory.zeros(grid, system.n)
        qpts = system.quad_points
        state_sum = np.zeros((grid.N + 1, system.n))
        tload_sum = np.zeros((grid.N + 1, system.n))
        for start in range(0, ensemble.paths, BLOCK):
            sub = ensemble.subset(start, min(start + BLOCK, ensemble.paths))
            for lev, x in iter_forward_paths(spec, system, grid, zero, sub):
                state_sum[lev] += x.sum(axis=1)
                if lev >= 1:
                    t = float(grid.times[lev])
                    vals = eval_pathwise(spec.target, t, qpts, sub.brownian_at(lev))
                    tload_sum[lev] += load_from_values(system, vals).sum(axis=0)
        return (
            Trajectory(state_sum / ensemble.paths, grid),
            tload_sum / ensemble.paths,
        )

    # -- estimator-independent pieces -------------------------------------

    def state_mean(self, control: Trajectory) -> Trajectory:
        resp = control_response(self.system, self.grid, control, self.spec.gamma)
        return Trajectory(self.base.values + resp.values, self.grid)

    def adjoint(self, x_mean: Trajectory, mu: float) -> Trajectory:
        return backward_adjoint_from_loads(
            self.system, self.grid, self.spec.gamma, x_mean.values, self.target_loads, mu
        )

    def cost(self, x_mean: Trajectory, control: Trajectory) -> float:
        """Discrete tracking cost of the mean fields.

        The noise-variance part of the expected cost is control-independent
        for additive noise and is not included.
        """
        mass = self.system.mass
        misfit = x_mean.values[1:] - self.target_proj[1:]
        track = np.einsum("ln,ln->", misfit, (mass @ misfit.T).T)
        u = control.values[: self.grid.N]
        reg = np.einsum("ln,ln->", u, (mass @ u.T).T)
        return float(0.5 * self.grid.tau * (track + self.spec.alpha * reg))

    def step_norm(self, diff_levels: np.ndarray) -> float:
        """tau-weighted L2(0,T; L2) norm of a control difference."""
        mass = self.system.mass
        d = diff_levels[: self.grid.N]
        return float(np.sqrt(self.grid.tau * np.einsum("ln,ln->", d, (mass @ d.T).T)))

    def project(self, control: Trajectory) -> tuple[Trajectory, Trajectory, float]:
        """Project a control onto the feasible set.

        Solves the mean state, selects the multiplier and subtracts
        rho*mu times the auxiliary backward field.  Returns the projected
        control, its mean state and the multiplier.
        """
        x = self.state_mean(control)
        integral = constraint_integral(x, self.system, self.grid)
        mu = select_multiplier(integral, self.spec.delta, self.rho, self.qtilde_integral)
        u_proj = Trajectory(control.values - self.rho * mu * self.mtilde.values, self.grid)
        x_proj = Trajectory(x.values - self.rho * mu * self.qtilde.values, self.grid)
        return u_proj, x_proj, mu

    def run(self, config: OptimizerConfig, keep_history: bool = False) -> GpResult:
        rho, alpha = self.rho, self.spec.alpha
        u = config.u0.copy() if config.u0 is not None else Trajectory.zeros(self.grid, self.system.n)
        x = self.state_mean(u)
        records: list[IterationRecord] = []
        history = [u.values.copy()] if keep_history else None
        converged = False
        mu = 0.0

        for i in range(config.max_iter):
            y_tilde = self.adjoint(x, mu=0.0)
            u_half = Trajectory(
                u.values - rho * (alpha * u.values + y_tilde.values), self.grid
            )
            u_next, x_next, mu = self.project(u_half)
            step_error = self.step_norm(u_next.values - u.values)
            records.append(
                IterationRecord(
                    iteration=i,
                    mu=mu,
                    step_error=step_error,
                    constraint_integral=constraint_integral(x_next, self.system, self.grid),
                    cost=self.cost(x_next, u_next),
                )
            )
            u, x = u_next, x_next
            if keep_history:
                history.append(u.values.copy())
            if step_error <= config.eps0:
                converged = True
                break

        return GpResult(
            control=u,
            mu=mu,
            records=records,
            converged=converged,
            state_mean=x,
            adjoint_mean=self.adjoint(x, mu),
            control_history=history,
        )


def gp_iterate(
    spec: ProblemSpec,
    system: FemSystem,
    grid: TimeGrid,
    config: OptimizerConfig,
    estimator: str = "mean-field",
    ensemble: BrownianEnsemble | None = None,
    keep_history: bool = False,
) -> GpResult:
    """Run the gradient projection loop; see ``GradientProjection``.

    Non-convergence within ``max_iter`` is reported through the result's
    ``converged`` flag, not raised.
    """
    loop = GradientProjection(
        spec, system, grid, rho=config.rho, estimator=estimator, ensemble=ensemble
    )
    return loop.run(config, keep_history=keep_history)
