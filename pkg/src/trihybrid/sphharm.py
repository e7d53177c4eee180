"""Real spherical harmonics and surface quadrature.

Provides the orthonormal real harmonic basis on the unit sphere, synthesis
and decomposition of gain functions, and numerical integration over the
sphere on a Gauss-Legendre (inclination) x uniform (azimuth) grid.

Basis ordering: the pair (degree u, order q) with u >= 0 and |q| <= u is
flattened to t = u^2 + u + q + 1, so truncating at degree U keeps
T = (U + 1)^2 functions.  Associated Legendre functions are evaluated by
upward recurrence without the Condon-Shortley sign; the sign convention is
pinned by the orthonormality tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial, isqrt

import numpy as np
from numpy.polynomial.legendre import leggauss

from .exceptions import ResolutionError

FOUR_PI = 4.0 * np.pi


# ---------------------------------------------------------------------------
# Index bookkeeping
# ---------------------------------------------------------------------------

def truncation_length(degree: int) -> int:
    """Number of basis functions kept when truncating at `degree`."""
    if degree < 0:
        raise ValueError(f"degree must be nonnegative, got {degree}")
    return (degree + 1) ** 2


def flat_index(degree: int, order: int) -> int:
    """1-based flat index of the harmonic (degree, order)."""
    if abs(order) > degree:
        raise ValueError(f"|order| <= degree required, got ({degree}, {order})")
    return degree * degree + degree + order + 1


def degree_order(flat: int) -> tuple[int, int]:
    """Inverse of :func:`flat_index`."""
    if flat < 1:
        raise ValueError(f"flat index must be >= 1, got {flat}")
    u = isqrt(flat - 1)
    q = flat - 1 - u * u - u
    return u, q


@dataclass(frozen=True)
class SHIndex:
    """A harmonic index: (degree, order) together with its flat position."""

    degree: int
    order: int

    def __post_init__(self) -> None:
        if self.degree < 0 or abs(self.order) > self.degree:
            raise ValueError(
                f"invalid harmonic index ({self.degree}, {self.order})"
            )

    @property
    def flat(self) -> int:
        return flat_index(self.degree, self.order)

    @classmethod
    def from_flat(cls, flat: int) -> "SHIndex":
        u, q = degree_order(flat)
        return cls(u, q)


# ---------------------------------------------------------------------------
# Basis evaluation
# ---------------------------------------------------------------------------

def _double_factorial(n: int) -> float:
    out = 1.0
    while n > 1:
        out *= n
        n -= 2
    return out


def assoc_legendre(degree: int, order: int, x):
    """Associated Legendre function P_u^q(x) without the Condon-Shortley sign.

    Uses the stable upward recurrence in the degree.  `x` may be a scalar or
    an array with entries in [-1, 1].
    """
    if order < 0 or order > degree:
        raise ValueError(f"need 0 <= order <= degree, got ({degree}, {order})")
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > 1.0 + 1e-12):
        raise ValueError("argument of assoc_legendre must lie in [-1, 1]")
    x = np.clip(x, -1.0, 1.0)

    s = np.sqrt((1.0 - x) * (1.0 + x))
    p_prev = _double_factorial(2 * order - 1) * s**order
    if degree == order:
        return p_prev if p_prev.ndim else float(p_prev)
    p_curr = x * (2 * order + 1) * p_prev
    for u in range(order + 2, degree + 1):
        p_prev, p_curr = p_curr, (
            (2 * u - 1) * x * p_curr - (u + order - 1) * p_prev
        ) / (u - order)
    return p_curr if p_curr.ndim else float(p_curr)


def _normalization(degree: int, order: int) -> float:
    ratio = factorial(degree - order) / factorial(degree + order)
    return np.sqrt((2 * degree + 1) / FOUR_PI * ratio)


def real_sph_harm(degree: int, order: int, theta, phi):
    """Real spherical harmonic Y_u^q(theta, phi).

    theta is the inclination in [0, pi], phi the azimuth.  Scalars and
    broadcastable arrays are accepted.
    """
    if abs(order) > degree:
        raise ValueError(f"|order| <= degree required, got ({degree}, {order})")
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    q = abs(order)
    p = assoc_legendre(degree, q, np.cos(theta))
    norm = _normalization(degree, q)
    if order > 0:
        out = np.sqrt(2.0) * norm * p * np.cos(q * phi)
    elif order < 0:
        out = np.sqrt(2.0) * norm * p * np.sin(q * phi)
    else:
        out = norm * p * np.ones_like(phi)
    out = np.asarray(out)
    return out if out.ndim else float(out)


def sh_basis(theta, phi, degree: int) -> np.ndarray:
    """Stack of all harmonics up to `degree`, shape (..., (degree+1)^2).

    Entry t-1 along the last axis is the harmonic with flat index t.
    """
    if degree < 0:
        raise ValueError(f"degree must be nonnegative, got {degree}")
    theta, phi = np.broadcast_arrays(
        np.asarray(theta, dtype=float), np.asarray(phi, dtype=float)
    )
    out = np.empty(theta.shape + (truncation_length(degree),))
    for u in range(degree + 1):
        for q in range(-u, u + 1):
            out[..., u * u + u + q] = real_sph_harm(u, q, theta, phi)
    return out


# ---------------------------------------------------------------------------
# Coefficient vectors
# ---------------------------------------------------------------------------

@dataclass
class SHCoefficients:
    """Coefficient vector of a truncated harmonic expansion."""

    values: np.ndarray
    degree: int

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        expected = truncation_length(self.degree)
        if self.values.shape != (expected,):
            raise ValueError(
                f"expected {expected} coefficients for degree {self.degree}, "
                f"got shape {self.values.shape}"
            )

    @classmethod
    def from_values(cls, values) -> "SHCoefficients":
        values = np.asarray(values, dtype=float)
        degree = isqrt(values.size) - 1
        return cls(values, degree)

    def total_power(self) -> float:
        """Squared 2-norm; equals the surface integral of the squared gain."""
        return float(self.values @ self.values)


def scale_to_sphere_power(coeffs: SHCoefficients) -> SHCoefficients:
    """Rescale so the synthesized gain carries total power 4*pi."""
    power = coeffs.total_power()
    if power <= 0.0:
        raise ValueError("cannot normalize a zero coefficient vector")
    return SHCoefficients(coeffs.values * np.sqrt(FOUR_PI / power), coeffs.degree)


def synthesize_gain(coeffs, theta, phi):
    """Evaluate the gain synthesized from harmonic coefficients at (theta, phi)."""
    if isinstance(coeffs, SHCoefficients):
        values, degree = coeffs.values, coeffs.degree
    else:
        values = np.asarray(coeffs, dtype=float)
        degree = isqrt(values.size) - 1
        if truncation_length(degree) != values.size:
            raise ValueError(
                f"coefficient length {values.size} is not a perfect square"
            )
    out = sh_basis(theta, phi, degree) @ values
    out = np.asarray(out)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Quadrature grids
# ---------------------------------------------------------------------------

@dataclass
class SphereGrid:
    """Quadrature nodes on the sphere.

    Inclination nodes carry Gauss-Legendre weights in cos(theta), so the
    sin(theta) surface element is already absorbed; azimuth nodes are
    uniformly spaced with equal weights summing to 2*pi.
    """

    theta: np.ndarray
    theta_weights: np.ndarray
    phi: np.ndarray
    _basis_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_theta(self) -> int:
        return self.theta.size

    @property
    def n_phi(self) -> int:
        return self.phi.size

    @property
    def phi_weight(self) -> float:
        return 2.0 * np.pi / self.n_phi

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.theta, self.phi, indexing="ij")

    def weights(self) -> np.ndarray:
        return np.outer(self.theta_weights, np.full(self.n_phi, self.phi_weight))

    def integrate(self, values: np.ndarray) -> float:
        """Surface integral of `values` sampled on the grid."""
        values = np.asarray(values)
        if values.shape != (self.n_theta, self.n_phi):
            raise ValueError(
                f"expected samples of shape {(self.n_theta, self.n_phi)}, "
                f"got {values.shape}"
            )
        return float(np.sum(values * self.weights()))

    def area(self) -> float:
        return self.integrate(np.ones((self.n_theta, self.n_phi)))

    def basis(self, degree: int) -> np.ndarray:
        """Cached harmonic basis sampled on the grid, shape (n_theta, n_phi, T)."""
        if degree not in self._basis_cache:
            tg, pg = self.mesh()
            self._basis_cache[degree] = sh_basis(tg, pg, degree)
        return self._basis_cache[degree]


def sphere_grid(n_theta: int = 64, n_phi: int = 128) -> SphereGrid:
    """Gauss-Legendre x uniform-azimuth grid; exact for harmonic products of
    degree up to 2*n_theta - 1."""
    if n_theta < 1 or n_phi < 1:
        raise ValueError("grid sizes must be positive")
    x, w = leggauss(n_theta)
    order = np.argsort(np.arccos(x))
    theta = np.arccos(x)[order]
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    return SphereGrid(theta=theta, theta_weights=w[order], phi=phi)


_DEFAULT_GRID: SphereGrid | None = None


def default_grid() -> SphereGrid:
    """Shared 64 x 128 grid, sufficient for degrees used at desk scale."""
    global _DEFAULT_GRID
    if _DEFAULT_GRID is None:
        _DEFAULT_GRID = sphere_grid()
    return _DEFAULT_GRID


def _sample(gain, grid: SphereGrid) -> np.ndarray:
    if callable(gain):
        tg, pg = grid.mesh()
        return np.asarray(gain(tg, pg), dtype=float)
    values = np.asarray(gain, dtype=float)
    if values.shape != (grid.n_theta, grid.n_phi):
        raise ValueError(
            f"tabulated gain must have shape {(grid.n_theta, grid.n_phi)}, "
            f"got {values.shape}"
        )
    return values


def pattern_energy(gain, grid: SphereGrid | None = None) -> float:
    """Total radiated power: surface integral of the squared gain.

    `gain` is either a callable gain(theta, phi) or samples on the grid.
    """
    grid = grid or default_grid()
    values = _sample(gain, grid)
    return grid.integrate(values**2)


def decompose_gain(gain, degree: int, grid: SphereGrid | None = None) -> SHCoefficients:
    """Project a gain function onto the harmonic basis up to `degree`.

    Requires at least 2*(degree+1) inclination nodes and 4*(degree+1)
    azimuth nodes to avoid aliasing.
    """
    grid = grid or default_grid()
    if grid.n_theta < 2 * (degree + 1) or grid.n_phi < 4 * (degree + 1):
        raise ResolutionError(
            f"grid {grid.n_theta}x{grid.n_phi} too coarse for degree {degree}; "
            f"need at least {2 * (degree + 1)}x{4 * (degree + 1)}"
        )
    values = _sample(gain, grid)
    coeffs = np.einsum("ij,ij,ijt->t", grid.weights(), values, grid.basis(degree))
    return SHCoefficients(coeffs, degree)


# ---------------------------------------------------------------------------
# Plain-text coefficient files
# ---------------------------------------------------------------------------

def save_coefficients(path, coeffs: SHCoefficients) -> None:
    """Write `U <degree>` followed by one `t c_t` row per coefficient."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"U {coeffs.degree}\n")
        for t, value in enumerate(coeffs.values, start=1):
            fh.write(f"{t} {float(value)!r}\n")


def load_coefficients(path) -> SHCoefficients:
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().split()
        if len(header) != 2 or header[0] != "U":
            raise ValueError(f"{path}: expected a 'U <degree>' header line")
        degree = int(header[1])
        values = np.zeros(truncation_length(degree))
        for line in fh:
            if not line.strip():
                continue
            t_str, c_str = line.split()
            values[int(t_str) - 1] = float(c_str)
    return SHCoefficients(values, degree)
