"""Independent oracles used to pin expected values.

These deliberately avoid the library's own code paths: Legendre functions
come from the Rodrigues formula evaluated symbolically, surface integrals
from dense trapezoid grids, and channels from entry-by-entry loops.
"""

from __future__ import annotations

import math

import numpy as np
import sympy as sp


def legendre_rodrigues(degree: int, order: int, x: float) -> float:
    """P_u^q(x) via the Rodrigues formula, no Condon-Shortley sign,
    evaluated in extended precision."""
    xs = sp.Symbol("x")
    poly = (xs**2 - 1) ** degree
    deriv = sp.diff(poly, xs, degree + order)
    expr = (1 - xs**2) ** sp.Rational(order, 2) * deriv / (
        2**degree * sp.factorial(degree)
    )
    return float(expr.evalf(50, subs={xs: sp.Float(x, 50)}))


def real_sh_oracle(degree: int, order: int, theta: float, phi: float) -> float:
    """Direct evaluation of the three-branch real harmonic definition."""
    q = abs(order)
    norm = math.sqrt(
        (2 * degree + 1)
        / (4 * math.pi)
        * math.factorial(degree - q)
        / math.factorial(degree + q)
    )
    p = legendre_rodrigues(degree, q, math.cos(theta))
    if order > 0:
        return math.sqrt(2.0) * norm * p * math.cos(q * phi)
    if order < 0:
        return math.sqrt(2.0) * norm * p * math.sin(q * phi)
    return norm * p


def trapezoid_sphere_integral(fn, n_theta: int = 400, n_phi: int = 800) -> float:
    """Dense trapezoid quadrature of fn(theta, phi) * sin(theta)."""
    theta = np.linspace(0.0, np.pi, n_theta)
    phi = np.linspace(0.0, 2.0 * np.pi, n_phi)
    tg, pg = np.meshgrid(theta, phi, indexing="ij")
    values = fn(tg, pg) * np.sin(tg)
    return float(np.trapezoid(np.trapezoid(values, phi, axis=1), theta))


def channel_entry_loops(geom, tx_patterns, rx_pattern) -> np.ndarray:
    """Entry-by-entry reimplementation of the per-antenna channel."""
    lam = geom.wavelength
    zeta = geom.pathloss_exponent
    L, M, N = geom.distances.shape
    out = np.zeros((M, N), dtype=complex)
    for ell in range(L):
        for m in range(M):
            for n in range(N):
                d = geom.distances[ell, m, n]
                c = (lam / (4.0 * np.pi * d)) ** (zeta / 2.0) * np.exp(
                    1j * geom.phases[ell, m, n]
                )
                a = np.exp(
                    -2j * np.pi / lam * (d - geom.ref_distances[ell])
                ) / np.sqrt(N * M)
                g_bs = tx_patterns[n].gain(
                    geom.aod_inclination[ell, m, n], geom.aod_azimuth[ell, m, n]
                )
                g_ue = rx_pattern.gain(
                    geom.aoa_inclination[ell, m, n], geom.aoa_azimuth[ell, m, n]
                )
                out[m, n] += c * a * g_ue * g_bs
    return np.sqrt(N * M / L) * out


def random_psd(rng, size: int, scale: float = 1.0) -> np.ndarray:
    """Random Hermitian positive semidefinite matrix."""
    a = rng.standard_normal((size, size)) + 1j * rng.standard_normal((size, size))
    return scale * (a @ a.conj().T) / size


def random_complex(rng, *shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def ball_samples(rng, count: int, dim: int, radius: float) -> np.ndarray:
    """Uniform samples from a complex ball of the given radius."""
    raw = rng.standard_normal((count, 2 * dim))
    raw /= np.linalg.norm(raw, axis=1, keepdims=True)
    radii = radius * rng.uniform(0.0, 1.0, count) ** (1.0 / (2 * dim))
    scaled = raw * radii[:, None]
    return scaled[:, :dim] + 1j * scaled[:, dim:]


def block_objective(terms, row: np.ndarray, vector: np.ndarray) -> float:
    """||f||^2 v^T B v + 2 Re(f^H (Q - D) v) computed directly."""
    quad = float(np.real(vector @ terms.quad_term @ vector))
    dvec = (terms.cross_term - terms.align_term) @ vector
    return float(
        np.real(row @ row.conj()) * quad + 2.0 * float(np.real(row.conj() @ dvec))
    )
