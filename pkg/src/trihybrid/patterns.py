"""Radiation patterns and candidate sets for pattern-reconfigurable antennas.

A pattern is a strictly positive magnitude gain over the sphere.  Normalized
patterns radiate total power 4*pi, i.e. the squared gain integrates to the
full solid angle.  Candidate sets hold an ordered list of normalized patterns
from which each transmit antenna selects one; index 0 is the designated
fixed-baseline pattern.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from functools import cached_property
from math import isqrt

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import sphharm
from .exceptions import ConfigurationError
from .sphharm import FOUR_PI, SHCoefficients, SphereGrid, default_grid

_LN2 = float(np.log(2.0))

BROADSIDE = (np.pi / 2.0, 0.0)


def great_circle_angle(theta1, phi1, theta2, phi2):
    """Central angle between two directions given as (inclination, azimuth)."""
    cos_angle = np.cos(theta1) * np.cos(theta2) + np.sin(theta1) * np.sin(
        theta2
    ) * np.cos(np.asarray(phi1, dtype=float) - phi2)
    return np.arccos(np.clip(cos_angle, -1.0, 1.0))


def most_square_factors(n: int) -> tuple[int, int]:
    """Factor n = a * b with a <= b and a as large as possible."""
    if n < 1:
        raise ValueError(f"need a positive count, got {n}")
    for a in range(isqrt(n), 0, -1):
        if n % a == 0:
            return a, n // a
    raise AssertionError("unreachable")


@dataclass(frozen=True, eq=False)
class RadiationPattern:
    """Magnitude gain over the sphere.

    `kind` selects the representation: "isotropic", "gaussian" (a parametric
    beam), "harmonic" (coefficients of the real spherical basis), or
    "tabulated" (samples on a tensor grid, bilinearly interpolated with
    azimuth wraparound).  `scale` is the multiplicative factor applied by
    normalization.
    """

    kind: str
    params: dict = field(default_factory=dict)
    scale: float = 1.0
    normalized: bool = False

    def gain(self, theta, phi):
        theta = np.asarray(theta, dtype=float)
        phi = np.asarray(phi, dtype=float)
        if self.kind == "isotropic":
            raw = np.ones(np.broadcast_shapes(theta.shape, phi.shape))
        elif self.kind == "gaussian":
            delta = great_circle_angle(
                theta, phi, self.params["theta0"], self.params["phi0"]
            )
            ratio = 2.0 * delta / self.params["beamwidth"]
            raw = np.exp(-0.5 * _LN2 * ratio**2) + self.params["floor"]
        elif self.kind == "harmonic":
            raw = np.asarray(
                sphharm.synthesize_gain(self.params["coefficients"], theta, phi)
            )
        elif self.kind == "tabulated":
            raw = self._interpolator(theta, phi)
        else:
            raise ValueError(f"unknown pattern kind {self.kind!r}")
        out = self.scale * raw
        return out if out.ndim else float(out)

    __call__ = gain

    @cached_property
    def _interpolator(self):
        theta_nodes = self.params["theta_nodes"]
        phi_nodes = self.params["phi_nodes"]
        values = self.params["values"]
        # Wrap the azimuth axis so interpolation is periodic.
        phi_ext = np.concatenate([phi_nodes, [phi_nodes[0] + 2.0 * np.pi]])
        values_ext = np.concatenate([values, values[:, :1]], axis=1)
        interp = RegularGridInterpolator(
            (theta_nodes, phi_ext),
            values_ext,
            method="linear",
            bounds_error=False,
            fill_value=None,
        )

        def evaluate(theta, phi):
            theta = np.asarray(theta, dtype=float)
            phi = np.asarray(phi, dtype=float)
            phi = np.mod(phi - phi_nodes[0], 2.0 * np.pi) + phi_nodes[0]
            theta_b, phi_b = np.broadcast_arrays(theta, phi)
            pts = np.stack([theta_b.ravel(), phi_b.ravel()], axis=-1)
            return interp(pts).reshape(theta_b.shape)

        return evaluate

    def scaled(self, factor: float, normalized: bool = False) -> "RadiationPattern":
        return replace(self, scale=self.scale * factor, normalized=normalized)


def isotropic_pattern() -> RadiationPattern:
    return RadiationPattern(kind="isotropic", normalized=True)


def gaussian_beam(
    center_inclination: float,
    center_azimuth: float,
    beamwidth: float,
    floor: float = 0.0,
) -> RadiationPattern:
    """Unnormalized Gaussian beam steered at (center_inclination, center_azimuth).

    `beamwidth` is the 3 dB beamwidth of the power pattern in radians: the
    squared gain halves at an angular offset of beamwidth / 2 when the floor
    is zero.  `floor` is a small additive gain keeping the pattern strictly
    positive after truncation and quadrature.
    """
    if not 0.0 < beamwidth < np.pi:
        raise ValueError(f"beamwidth must lie in (0, pi), got {beamwidth}")
    if floor < 0.0:
        raise ValueError(f"floor must be nonnegative, got {floor}")
    return RadiationPattern(
        kind="gaussian",
        params={
            "theta0": float(center_inclination),
            "phi0": float(center_azimuth),
            "beamwidth": float(beamwidth),
            "floor": float(floor),
        },
    )


def harmonic_pattern(coeffs: SHCoefficients) -> RadiationPattern:
    """Pattern synthesized from harmonic coefficients.

    Positivity is the caller's responsibility; audit with
    :func:`trihybrid.metrics.audit_constraints` when in doubt.
    """
    return RadiationPattern(kind="harmonic", params={"coefficients": coeffs})


def tabulated_pattern(theta_nodes, phi_nodes, values) -> RadiationPattern:
    theta_nodes = np.asarray(theta_nodes, dtype=float)
    phi_nodes = np.asarray(phi_nodes, dtype=float)
    values = np.asarray(values, dtype=float)
    if values.shape != (theta_nodes.size, phi_nodes.size):
        raise ValueError("tabulated values must be laid out theta x phi")
    if np.any(values <= 0.0):
        raise ValueError("tabulated magnitude gains must be strictly positive")
    return RadiationPattern(
        kind="tabulated",
        params={
            "theta_nodes": theta_nodes,
            "phi_nodes": phi_nodes,
            "values": values,
        },
    )


def normalize_pattern(
    pattern: RadiationPattern, grid: SphereGrid | None = None
) -> RadiationPattern:
    """Rescale so the squared gain integrates to 4*pi over the sphere."""
    energy = sphharm.pattern_energy(pattern, grid)
    if energy <= 0.0:
        raise ValueError("cannot normalize a pattern with zero radiated power")
    return pattern.scaled(float(np.sqrt(FOUR_PI / energy)), normalized=True)


# ---------------------------------------------------------------------------
# Candidate sets
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CandidateSet:
    """Ordered set of normalized patterns selectable per antenna."""

    patterns: tuple[RadiationPattern, ...]

    def __len__(self) -> int:
        return len(self.patterns)

    @property
    def size(self) -> int:
        return len(self.patterns)

    @property
    def baseline(self) -> RadiationPattern:
        return self.patterns[0]

    def gain_vector(self, theta, phi) -> np.ndarray:
        """Per-candidate gains at a direction, stacked along the last axis."""
        return np.stack([p.gain(theta, phi) for p in self.patterns], axis=-1)


def gaussian_beam_grid(
    count: int,
    theta_range: tuple[float, float] = (np.pi / 2.0, np.pi),
    phi_range: tuple[float, float] = (-np.pi / 2.0, np.pi / 2.0),
    beamwidth: float = np.deg2rad(85.0),
    floor: float = 1e-3,
    grid_shape: tuple[int, int] | None = None,
    baseline_first: bool = False,
    quad: SphereGrid | None = None,
) -> CandidateSet:
    """Candidate set of Gaussian beams with centers on a uniform tensor grid.

    Beam centers sit at the cell midpoints of a (count_theta x count_phi)
    partition of the given ranges, inclination-major.  With `baseline_first`
    the candidate whose center is closest to array broadside is moved to
    index 0, where it doubles as the fixed-baseline pattern.
    """
    if count < 1:
        raise ConfigurationError(f"candidate count must be positive, got {count}")
    if grid_shape is None:
        n_theta, n_phi = most_square_factors(count)
    else:
        n_theta, n_phi = grid_shape
        if n_theta * n_phi != count:
            raise ConfigurationError(
                f"grid shape {n_theta}x{n_phi} does not factor count {count}"
            )
    quad = quad or default_grid()

    theta_lo, theta_hi = theta_range
    phi_lo, phi_hi = phi_range
    theta_centers = theta_lo + (np.arange(n_theta) + 0.5) * (theta_hi - theta_lo) / n_theta
    phi_centers = phi_lo + (np.arange(n_phi) + 0.5) * (phi_hi - phi_lo) / n_phi

    beams = []
    for t0 in theta_centers:
        for p0 in phi_centers:
            beam = gaussian_beam(t0, p0, beamwidth, floor)
            beams.append(normalize_pattern(beam, quad))

    if baseline_first and len(beams) > 1:
        centers = np.array(
            [(b.params["theta0"], b.params["phi0"]) for b in beams]
        )
        dist = great_circle_angle(centers[:, 0], centers[:, 1], *BROADSIDE)
        best = int(np.argmin(dist))
        beams[0], beams[best] = beams[best], beams[0]
    return CandidateSet(tuple(beams))


# ---------------------------------------------------------------------------
# Plain-text pattern files
# ---------------------------------------------------------------------------

def save_tabulated(path, pattern: RadiationPattern, grid: SphereGrid | None = None) -> None:
    """Sample a pattern on a grid and write `theta phi gain` rows."""
    grid = grid or default_grid()
    tg, pg = grid.mesh()
    values = pattern.gain(tg, pg)
    with open(path, "w", encoding="ascii") as fh:
        fh.write("theta phi gain\n")
        for t, p, g in zip(tg.ravel(), pg.ravel(), np.asarray(values).ravel()):
            fh.write(f"{float(t)!r} {float(p)!r} {float(g)!r}\n")


def load_tabulated(path) -> RadiationPattern:
    data = np.loadtxt(path, skiprows=1)
    if data.ndim != 2 or data.shape[1] != 3:
        raise ValueError(f"{path}: expected rows of 'theta phi gain'")
    theta_nodes = np.unique(data[:, 0])
    phi_nodes = np.unique(data[:, 1])
    if theta_nodes.size * phi_nodes.size != data.shape[0]:
        raise ValueError(f"{path}: samples do not form a complete tensor grid")
    values = np.full((theta_nodes.size, phi_nodes.size), np.nan)
    ti = np.searchsorted(theta_nodes, data[:, 0])
    pi = np.searchsorted(phi_nodes, data[:, 1])
    values[ti, pi] = data[:, 2]
    if np.any(np.isnan(values)):
        raise ValueError(f"{path}: samples do not form a complete tensor grid")
    return tabulated_pattern(theta_nodes, phi_nodes, values)


def save_candidate_manifest(path, candidates: CandidateSet) -> None:
    """Write a manifest: `S <count>` then one line per pattern.

    Gaussian members are stored by their parameters; other representations
    are sampled to sidecar tabulation files next to the manifest.
    """
    directory = os.path.dirname(os.path.abspath(path))
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"S {candidates.size}\n")
        for s, pattern in enumerate(candidates.patterns, start=1):
            if pattern.kind == "gaussian":
                p = pattern.params
                fh.write(
                    f"{s} {p['theta0']!r} {p['phi0']!r} "
                    f"{p['beamwidth']!r} {p['floor']!r}\n"
                )
            else:
                sidecar = f"{os.path.splitext(os.path.basename(path))[0]}_pattern{s}.txt"
                save_tabulated(os.path.join(directory, sidecar), pattern)
                fh.write(f"{s} tabulated {sidecar}\n")


def load_candidate_manifest(path, quad: SphereGrid | None = None) -> CandidateSet:
    """Read a manifest written by :func:`save_candidate_manifest`.

    Every member is (re-)normalized on load, so the manifest need not store
    normalization scales.
    """
    quad = quad or default_grid()
    directory = os.path.dirname(os.path.abspath(path))
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().split()
        if len(header) != 2 or header[0] != "S":
            raise ValueError(f"{path}: expected an 'S <count>' header line")
        count = int(header[1])
        patterns: list[RadiationPattern | None] = [None] * count
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            s = int(parts[0])
            if parts[1] == "tabulated":
                pattern = load_tabulated(os.path.join(directory, parts[2]))
            else:
                theta0, phi0, beamwidth, floor = map(float, parts[1:5])
                pattern = gaussian_beam(theta0, phi0, beamwidth, floor)
            patterns[s - 1] = normalize_pattern(pattern, quad)
    if any(p is None for p in patterns):
        raise ValueError(f"{path}: manifest is missing pattern entries")
    return CandidateSet(tuple(patterns))
