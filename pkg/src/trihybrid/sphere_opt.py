"""Gradient descent on the unit sphere for the reduced coefficient step.

Minimizes x^T B x + v^T x subject to ||x|| = 1 by projected-gradient descent
with Armijo backtracking: the Euclidean gradient is projected onto the
tangent plane, a step is taken against it, and the iterate is retracted back
to the sphere by renormalization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .sphharm import FOUR_PI


@dataclass
class SolverOptions:
    """Descent controls.  `gradient_tol` is relative: the stopping threshold
    is gradient_tol times the problem's gradient scale (2||B||_F + ||v||),
    so tolerances carry across objective magnitudes."""

    max_iterations: int = 150
    gradient_tol: float = 1e-6
    restarts: int = 1
    armijo_constant: float = 1e-4
    contraction: float = 0.5
    max_backtracks: int = 30


@dataclass
class SphereProblem:
    """Quadratic-plus-linear objective restricted to the unit sphere."""

    quadratic: np.ndarray  # (n, n) real
    linear: np.ndarray  # (n,) real
    start: np.ndarray  # (n,) unit vector
    options: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self) -> None:
        self.quadratic = np.asarray(self.quadratic, dtype=float)
        self.linear = np.asarray(self.linear, dtype=float)
        self.start = np.asarray(self.start, dtype=float)
        n = self.linear.size
        if self.quadratic.shape != (n, n) or self.start.shape != (n,):
            raise ValueError("inconsistent problem dimensions")
        if abs(np.linalg.norm(self.start) - 1.0) > 1e-9:
            raise ValueError("start point must have unit norm")

    def objective(self, point: np.ndarray) -> float:
        return float(point @ self.quadratic @ point + self.linear @ point)


@dataclass
class SphereResult:
    point: np.ndarray
    value: float
    iterations: int
    converged: bool


def tangent_gradient(point: np.ndarray, quadratic: np.ndarray, linear: np.ndarray) -> np.ndarray:
    """Euclidean gradient projected onto the tangent plane at `point`."""
    grad = (quadratic + quadratic.T) @ point + linear
    return grad - (point @ grad) * point


def retract(point: np.ndarray, tangent: np.ndarray, step: float) -> np.ndarray:
    """Step against the tangent direction and renormalize onto the sphere."""
    moved = point - step * tangent
    norm = np.linalg.norm(moved)
    if norm == 0.0:
        raise ValueError("retraction hit the origin; reduce the step")
    return moved / norm


def _descend(problem: SphereProblem, start: np.ndarray) -> SphereResult:
    opts = problem.options
    point = start / np.linalg.norm(start)
    # Minimizers are invariant to a positive rescaling of the objective, so
    # descend on the unit-scale problem; steps and tolerances then carry
    # across objective magnitudes.
    scale = np.linalg.norm(problem.quadratic, "fro") + np.linalg.norm(problem.linear)
    if scale == 0.0:
        return SphereResult(point=point, value=0.0, iterations=0, converged=True)
    quad = problem.quadratic / scale
    linear = problem.linear / scale
    threshold = opts.gradient_tol * (
        2.0 * np.linalg.norm(quad, "fro") + np.linalg.norm(linear)
    )
    initial_step = 1.0 / (np.linalg.norm(quad, "fro") + np.linalg.norm(linear) + 1.0)

    def objective(x):
        return float(x @ quad @ x + linear @ x)

    value = objective(point)
    best_point, best_value = point, value
    converged = False
    iterations = 0
    for iterations in range(1, opts.max_iterations + 1):
        grad = tangent_gradient(point, quad, linear)
        grad_norm = np.linalg.norm(grad)
        if grad_norm <= threshold:
            converged = True
            break
        step = initial_step
        accepted = False
        for _ in range(opts.max_backtracks):
            moved = point - step * grad
            norm = np.linalg.norm(moved)
            if norm == 0.0:
                step *= opts.contraction
                continue
            candidate = moved / norm
            cand_value = objective(candidate)
            if cand_value <= value - opts.armijo_constant * step * grad_norm**2:
                point, value = candidate, cand_value
                accepted = True
                break
            step *= opts.contraction
        if not accepted:
            # No acceptable step at this scale; treat as stationary.
            break
        if value < best_value:
            best_point, best_value = point, value
    return SphereResult(
        point=best_point,
        value=best_value * scale,
        iterations=iterations,
        converged=converged,
    )


def minimize_on_sphere(
    problem: SphereProblem,
    restarts: int | None = None,
    rng: np.random.Generator | None = None,
) -> SphereResult:
    """Run the descent from the problem's start point, optionally followed by
    random restarts, and return the best local solution found.

    The first run always starts from `problem.start`, so the returned value
    never exceeds the objective there.  Non-convergence (iteration cap hit)
    is reported through the flag, not as an error.
    """
    restarts = problem.options.restarts if restarts is None else restarts
    best = _descend(problem, problem.start)
    if restarts > 1:
        rng = rng or np.random.default_rng(0)
        for _ in range(restarts - 1):
            start = rng.standard_normal(problem.linear.size)
            norm = np.linalg.norm(start)
            if norm == 0.0:
                continue
            result = _descend(problem, start / norm)
            if result.value < best.value:
                best = result
    return best


def reduced_coefficient_problem(
    quad_term: np.ndarray,
    cross_term: np.ndarray,
    align_term: np.ndarray,
    row: np.ndarray,
    rho: float,
    start: np.ndarray,
    options: SolverOptions | None = None,
) -> SphereProblem:
    """Reduce the per-antenna pattern subproblem to the unit sphere.

    With the constant-component coefficient pinned at 2*sqrt(rho*pi) and the
    remaining coefficients written as 2*sqrt((1-rho)*pi) times a unit vector,
    the quadratic-form objective in the full coefficient vector becomes a
    quadratic plus linear objective in that unit vector (constant terms
    dropped).  `row` is the precoder row of the antenna being updated.
    """
    if not 0.0 < rho < 1.0:
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    row_power = float(np.real(row @ row.conj()))
    quad = 4.0 * np.pi * (1.0 - rho) * row_power * np.real(quad_term[1:, 1:])
    v1 = 4.0 * np.sqrt((1.0 - rho) * np.pi) * np.real(
        row.conj() @ (cross_term - align_term)[:, 1:]
    )
    v2 = (
        8.0
        * np.pi
        * np.sqrt(rho * (1.0 - rho))
        * row_power
        * np.real(quad_term[1:, 0])
    )
    return SphereProblem(
        quadratic=quad,
        linear=v1 + v2,
        start=start,
        options=options or SolverOptions(),
    )


def lift_coefficients(point: np.ndarray, rho: float) -> np.ndarray:
    """Full coefficient vector from a unit vector: constant component pinned
    at 2*sqrt(rho*pi), remainder scaled to carry the rest of the 4*pi power."""
    head = 2.0 * np.sqrt(rho * np.pi)
    tail = 2.0 * np.sqrt((1.0 - rho) * np.pi) * np.asarray(point, dtype=float)
    return np.concatenate([[head], tail])


def isotropic_coefficients(width: int, rho: float) -> np.ndarray:
    """Default starting coefficients: constant component at its pinned value
    and the entire remaining power on the first non-constant harmonic."""
    if width == 1:
        return np.array([2.0 * np.sqrt(np.pi)])
    start = np.zeros(width - 1)
    start[0] = 1.0
    return lift_coefficients(start, rho)


def coefficient_power_deviation(coeffs: np.ndarray) -> float:
    """Absolute deviation of the squared norm from the 4*pi power budget."""
    return abs(float(coeffs @ coeffs) - FOUR_PI)
