"""Contour-dynamics evaluation for nested, star-shaped vortex patches.

Boundary ``i`` is ``z_i(x) = (b_i + R_i(x)) (cos x, sin x)`` and the patch
vorticity is ``sum_i Theta_i 1_{D_i}``.  Two velocity normalisations appear:

* the *kernel* velocity of patch ``i`` on curve ``j``,
  ``u_ij(x) = int_0^{2pi} log|z_j(x) - z_i(y)|^2 z_i'(y) dy``, whose
  components feed the stationarity functional
  ``F_j = 1/(4 pi) sum_i Theta_i (u_ij^theta R_j' - u_ij^r (b_j + R_j))``;
* the *physical* Biot-Savart velocity ``u = grad^perp(omega * log|.| / 2pi)``,
  which equals ``-1/(4 pi) sum_i Theta_i u_i`` off the boundaries.

Only zeros of ``F`` matter, so the overall sign and scale of ``F`` are a
convention; the one above reproduces the closed-form linearisation blocks in
:mod:`vortexpatch.spectral` exactly.

All integrals are composite trapezoid sums on ``N`` uniform nodes.  For the
self-interaction the kernel is split into ``log(2 - 2 cos(x - y))``, applied
as the Fourier multiplier ``-2 pi / |k|``, and a smooth remainder.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from vortexpatch.errors import NestingError, ParameterError, QuadratureError
from vortexpatch.fourier import FourierEvenSeries, FourierOddSeries, differentiate

DEFAULT_NODES = 512
STANDOFF = 1e-6

__all__ = [
    "DEFAULT_NODES",
    "Geometry",
    "LayerConfig",
    "PatchSystem",
    "VelocitySample",
    "b3_closure",
    "boundary_velocity",
    "exterior_velocity_sup",
    "functional_F",
    "functional_G",
    "functional_coefficients",
    "functional_nodes",
    "has_finite_energy",
    "interaction",
    "log_kernel_moment",
    "near_boundary",
    "resolvent_moment",
    "stream_function_at",
    "three_layer_system",
    "total_circulation",
    "two_layer_system",
    "velocity_at",
]


@dataclass(frozen=True)
class LayerConfig:
    radius: float
    strength: float

    def __post_init__(self) -> None:
        if not self.radius > 0:
            raise ParameterError("DOMAIN", f"layer radius must be positive, got {self.radius}")


@dataclass(frozen=True)
class VelocitySample:
    point: np.ndarray
    u: np.ndarray
    u_theta: float | None = None
    u_r: float | None = None


@dataclass(frozen=True)
class Geometry:
    """Boundary samples: ``rho`` and ``drho`` are (layers, N); ``z``, ``dz`` are (layers, N, 2)."""

    x: np.ndarray
    rho: np.ndarray
    drho: np.ndarray
    z: np.ndarray
    dz: np.ndarray

    @property
    def normal_dir(self) -> np.ndarray:
        """``z'^perp = (-z2', z1')`` per layer and node."""
        return np.stack([-self.dz[..., 1], self.dz[..., 0]], axis=-1)


@dataclass(frozen=True, eq=False)
class PatchSystem:
    """Nested layers, outermost first, each perturbed by an even m-fold series."""

    fold: int
    layers: tuple[LayerConfig, ...]
    perturbations: tuple[FourierEvenSeries, ...]
    nodes: int = DEFAULT_NODES

    def __post_init__(self) -> None:
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "perturbations", tuple(self.perturbations))
        if len(self.layers) != len(self.perturbations):
            raise ValueError("one perturbation per layer is required")
        if self.nodes < 4 or self.nodes % 2:
            raise ValueError(f"nodes must be an even integer >= 4, got {self.nodes}")
        radii = [layer.radius for layer in self.layers]
        if any(b_out <= b_in for b_out, b_in in zip(radii, radii[1:])):
            raise ParameterError("NOT_NESTED", f"radii must be strictly decreasing, got {radii}")
        for p in self.perturbations:
            if p.fold != self.fold:
                raise ValueError(f"perturbation fold {p.fold} differs from system fold {self.fold}")

    @classmethod
    def radial(cls, fold, radii, strengths, truncation=64, nodes=DEFAULT_NODES) -> "PatchSystem":
        layers = tuple(LayerConfig(b, t) for b, t in zip(radii, strengths, strict=True))
        zero = FourierEvenSeries.zeros(fold, truncation)
        return cls(fold, layers, (zero,) * len(layers), nodes)

    @property
    def radii(self) -> np.ndarray:
        return np.array([layer.radius for layer in self.layers])

    @property
    def strengths(self) -> np.ndarray:
        return np.array([layer.strength for layer in self.layers])

    @property
    def truncation(self) -> int:
        return max(p.truncation for p in self.perturbations)

    def with_nodes(self, nodes: int) -> "PatchSystem":
        return PatchSystem(self.fold, self.layers, self.perturbations, nodes)

    def with_perturbations(self, perturbations) -> "PatchSystem":
        return PatchSystem(self.fold, self.layers, tuple(perturbations), self.nodes)

    def coefficient_matrix(self) -> np.ndarray:
        J = self.truncation
        return np.array([p.padded(J).coeffs for p in self.perturbations])

    def geometry(self, nodes: int | None = None) -> Geometry:
        if nodes is None or nodes == self.nodes:
            return self._geometry
        return self.with_nodes(nodes)._geometry

    @cached_property
    def _geometry(self) -> Geometry:
        n = self.nodes
        x = 2.0 * np.pi * np.arange(n) / n
        rho = np.array([b + p(x) for b, p in zip(self.radii, self.perturbations)])
        drho = np.array([differentiate(p)(x) for p in self.perturbations])
        e = np.stack([np.cos(x), np.sin(x)], axis=-1)
        e_perp = np.stack([-np.sin(x), np.cos(x)], axis=-1)
        z = rho[..., None] * e
        dz = drho[..., None] * e + rho[..., None] * e_perp
        return Geometry(x, rho, drho, z, dz)

    def check_nesting(self) -> None:
        """Nesting is checked at the quadrature nodes only."""
        rho = self._geometry.rho
        if np.any(rho[-1] <= 0):
            raise NestingError("NESTING_VIOLATION", "innermost boundary reaches the origin")
        gaps = rho[:-1] - rho[1:]
        if gaps.size and np.any(gaps <= 0):
            i, k = np.unravel_index(np.argmin(gaps), gaps.shape)
            raise NestingError(
                "NESTING_VIOLATION",
                f"boundaries {i} and {i + 1} cross near x={self._geometry.x[k]:.6g}",
            )

    def min_gap(self) -> float:
        """Smallest radial gap between consecutive boundaries (or to the origin)."""
        rho = self._geometry.rho
        gaps = [np.min(rho[-1])]
        if len(rho) > 1:
            gaps.append(np.min(rho[:-1] - rho[1:]))
        return float(min(gaps))


# --------------------------------------------------------------------------
# kernels


def _log_dist2(targets: np.ndarray, sources: np.ndarray) -> np.ndarray:
    dx = targets[:, None, 0] - sources[None, :, 0]
    dy = targets[:, None, 1] - sources[None, :, 1]
    return np.log(dx * dx + dy * dy)


def _log_multiplier(n: int) -> np.ndarray:
    """rfft multiplier of ``g -> int log(2 - 2 cos(x - y)) g(y) dy``."""
    k = np.arange(n // 2 + 1, dtype=float)
    mult = np.zeros_like(k)
    mult[1:] = -2.0 * np.pi / k[1:]
    return mult


def _self_velocity(geo: Geometry, i: int, idx: np.ndarray) -> np.ndarray:
    n = geo.x.size
    rho, drho, dz = geo.rho[i], geo.drho[i], geo.dz[i]
    t = geo.x[idx][:, None] - geo.x[None, :]
    s2 = 4.0 * np.sin(0.5 * t) ** 2
    diag = np.arange(idx.size), idx
    s2[diag] = 1.0
    # |z(x)-z(y)|^2 / (2 - 2cos(x-y)), written without cancellation
    ratio = rho[idx][:, None] * rho[None, :] + (rho[idx][:, None] - rho[None, :]) ** 2 / s2
    ratio[diag] = rho[idx] ** 2 + drho[idx] ** 2
    smooth = np.log(ratio) @ dz * (2.0 * np.pi / n)
    spec = np.fft.rfft(dz, axis=0) * _log_multiplier(n)[:, None]
    singular = np.fft.irfft(spec, n=n, axis=0)[idx]
    return smooth + singular


def _pair_velocity(geo: Geometry, i: int, j: int, idx: np.ndarray) -> np.ndarray:
    """Kernel velocity of patch ``i`` on boundary ``j`` at node indices ``idx``; shape (T, 2)."""
    if i == j:
        return _self_velocity(geo, i, idx)
    n = geo.x.size
    return _log_dist2(geo.z[j][idx], geo.z[i]) @ geo.dz[i] * (2.0 * np.pi / n)


def _exterior_safe_log(points: np.ndarray, sources: np.ndarray) -> np.ndarray:
    """``log|p - z|^2`` up to a per-point constant, which integrates to zero against ``z'``.

    Outside the source curve the constant ``log|p|^2`` is dropped, leaving
    ``log|1 - z/p|^2``; this keeps the roundoff proportional to the field.
    """
    out = _log_dist2(points, sources)
    p2 = np.sum(points * points, axis=1)
    outside = p2 > np.max(np.sum(sources * sources, axis=1))
    if np.any(outside):
        p = points[outside]
        pc = p[:, 0] + 1j * p[:, 1]
        w = (sources[None, :, 0] + 1j * sources[None, :, 1]) / pc[:, None]
        out[outside] = np.log1p(w.real * w.real + w.imag * w.imag - 2.0 * w.real)
    return out


def _polar(u: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    c, s = np.cos(x), np.sin(x)
    return -u[..., 0] * s + u[..., 1] * c, u[..., 0] * c + u[..., 1] * s


def interaction(system: PatchSystem, i: int, j: int, *, check_resolution: bool = False,
                tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    """``(u_ij^theta, u_ij^r)`` of the kernel velocity on all nodes of boundary ``j``."""
    system.check_nesting()
    geo = system.geometry()
    idx = np.arange(system.nodes)
    u_theta, u_r = _polar(_pair_velocity(geo, i, j, idx), geo.x)
    if check_resolution:
        fine = system.with_nodes(2 * system.nodes)
        fgeo = fine.geometry()
        ft, fr = _polar(_pair_velocity(fgeo, i, j, 2 * idx), fgeo.x[2 * idx])
        change = max(np.max(np.abs(ft - u_theta)), np.max(np.abs(fr - u_r)))
        if change > tol:
            raise QuadratureError(
                "QUADRATURE_UNDERRESOLVED",
                f"doubling the node count moved samples of ({i},{j}) by {change:.3e} > {tol:.1e}",
            )
    return u_theta, u_r


def log_kernel_moment(r: float, m: int, nodes: int = DEFAULT_NODES) -> float:
    """``int_0^{2pi} log(1 + r^2 - 2 r cos y) cos(m y) dy`` with the interaction quadrature.

    ``r = 1`` goes through the split used for self-interaction.
    """
    y = 2.0 * np.pi * np.arange(nodes) / nodes
    w = np.cos(m * y)
    if r == 1.0:
        # log(2 - 2cos) part via the multiplier, remainder is identically zero
        return float(np.fft.irfft(np.fft.rfft(w) * _log_multiplier(nodes), n=nodes)[0])
    src = np.stack([r * np.cos(y), r * np.sin(y)], axis=-1)
    row = _log_dist2(np.array([[1.0, 0.0]]), src)[0]
    return float(row @ w * (2.0 * np.pi / nodes))


def resolvent_moment(r: float, m: int, nodes: int = DEFAULT_NODES) -> float:
    """``int_0^{2pi} cos(m y) / (1 + r^2 - 2 r cos y) dy`` by the trapezoid rule."""
    y = 2.0 * np.pi * np.arange(nodes) / nodes
    return float(np.sum(np.cos(m * y) / (1.0 + r * r - 2.0 * r * np.cos(y))) * 2.0 * np.pi / nodes)


# --------------------------------------------------------------------------
# functionals


def _target_indices(fold: int, nodes: int) -> tuple[np.ndarray, float]:
    """Node subset and weight that recover sine coefficients of an odd m-fold function."""
    if nodes % (2 * fold) == 0 and nodes // (2 * fold) >= 2:
        half = nodes // (2 * fold)
        return np.arange(1, half), 4.0 * fold / nodes
    return np.arange(nodes), 2.0 / nodes


def boundary_velocity(system: PatchSystem, idx: np.ndarray | None = None) -> np.ndarray:
    """``u_j = 1/(4 pi) sum_i Theta_i u_ij`` on every boundary; shape (layers, T, 2)."""
    geo = system.geometry()
    if idx is None:
        idx = np.arange(system.nodes)
    n_layers = len(system.layers)
    out = np.zeros((n_layers, idx.size, 2))
    for j in range(n_layers):
        for i, theta in enumerate(system.strengths):
            if theta != 0.0:
                out[j] += theta * _pair_velocity(geo, i, j, idx)
    return out / (4.0 * np.pi)


def functional_nodes(system: PatchSystem, idx: np.ndarray | None = None) -> np.ndarray:
    """Values of ``F_j`` on node indices ``idx`` (all nodes by default); shape (layers, T)."""
    system.check_nesting()
    geo = system.geometry()
    if idx is None:
        idx = np.arange(system.nodes)
    u = boundary_velocity(system, idx)
    return np.sum(u * geo.normal_dir[:, idx], axis=-1)


def functional_coefficients(system: PatchSystem, truncation: int | None = None) -> np.ndarray:
    """Sine coefficients of every ``F_j`` on modes ``m, 2m, ..., Jm``; shape (layers, J)."""
    J = system.truncation if truncation is None else truncation
    idx, weight = _target_indices(system.fold, system.nodes)
    vals = functional_nodes(system, idx)
    x = system.geometry().x[idx]
    basis = np.sin(np.outer(x, system.fold * np.arange(1, J + 1)))
    return weight * vals @ basis


def functional_F(system: PatchSystem, truncation: int | None = None) -> list[FourierOddSeries]:
    """Stationarity functional as one sine series per layer."""
    coeffs = functional_coefficients(system, truncation)
    return [FourierOddSeries(system.fold, c) for c in coeffs]


def two_layer_system(b: float, theta: float, R: Sequence[FourierEvenSeries],
                     nodes: int = DEFAULT_NODES) -> PatchSystem:
    """``b_1 = 1, b_2 = b, Theta_1 = Theta, Theta_2 = -1``."""
    if not 0 < b < 1:
        raise ParameterError("DOMAIN", f"inner radius must lie in (0, 1), got {b}")
    return PatchSystem(R[0].fold, (LayerConfig(1.0, theta), LayerConfig(b, -1.0)), tuple(R), nodes)


def b3_closure(theta3: float, R: Sequence[FourierEvenSeries], b1: float, b2: float,
               theta1: float, theta2: float) -> float:
    """Innermost radius making the total vorticity integral vanish."""
    if theta3 == 0:
        raise ParameterError("DOMAIN", "Theta_3 must be nonzero")
    sq = [float(np.dot(r.coeffs, r.coeffs)) for r in R]
    # int_0^{2pi} (b + R)^2 dx = 2 pi b^2 + pi sum a_j^2 for mean-free R
    radicand = -(theta1 * (2 * b1 * b1 + sq[0]) + theta2 * (2 * b2 * b2 + sq[1]) + theta3 * sq[2]) / (2 * theta3)
    if not radicand > 0:
        raise ParameterError("NEGATIVE_RADICAND", f"b_3^2 = {radicand:.6g} is not positive")
    b3 = float(np.sqrt(radicand))
    if b3 >= b2:
        raise ParameterError("NOT_NESTED", f"b_3 = {b3:.6g} is not below b_2 = {b2:.6g}")
    return b3


def three_layer_system(theta3: float, R: Sequence[FourierEvenSeries], b2: float, theta2: float,
                       b1: float = 1.0, theta1: float = 1.0,
                       nodes: int = DEFAULT_NODES) -> PatchSystem:
    """Three layers with ``b_3`` from the zero-circulation closure."""
    b3 = b3_closure(theta3, R, b1, b2, theta1, theta2)
    layers = (LayerConfig(b1, theta1), LayerConfig(b2, theta2), LayerConfig(b3, theta3))
    return PatchSystem(R[0].fold, layers, tuple(R), nodes)


def functional_G(theta3: float, R: Sequence[FourierEvenSeries], b2: float, theta2: float,
                 b1: float = 1.0, theta1: float = 1.0,
                 nodes: int = DEFAULT_NODES) -> list[FourierOddSeries]:
    return functional_F(three_layer_system(theta3, R, b2, theta2, b1, theta1, nodes))


# --------------------------------------------------------------------------
# physics diagnostics


def near_boundary(system: PatchSystem, points, standoff: float | None = None) -> np.ndarray:
    """Mask of points whose radial distance to some boundary is below ``standoff``."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if standoff is None:
        standoff = STANDOFF * system.radii[0]
    r = np.hypot(pts[:, 0], pts[:, 1])
    ang = np.arctan2(pts[:, 1], pts[:, 0])
    mask = np.zeros(pts.shape[0], dtype=bool)
    for b, p in zip(system.radii, system.perturbations):
        mask |= np.abs(r - (b + p(ang))) < standoff
    return mask


def _check_standoff(system: PatchSystem, pts: np.ndarray, standoff: float) -> None:
    bad = near_boundary(system, pts, standoff)
    if np.any(bad):
        k = int(np.argmax(bad))
        raise NestingError("POINT_ON_BOUNDARY", f"point {pts[k].tolist()} is within {standoff:.1e} of a boundary")


def velocity_at(system: PatchSystem, points, *, standoff: float | None = None) -> np.ndarray:
    """Physical Biot-Savart velocity at ``points`` (shape (..., 2)) off the boundaries."""
    pts = np.asarray(points, dtype=float)
    flat = pts.reshape(-1, 2)
    if standoff is None:
        standoff = STANDOFF * system.radii[0]
    _check_standoff(system, flat, standoff)
    geo = system.geometry()
    u = np.zeros_like(flat)
    for i, theta in enumerate(system.strengths):
        u += theta * (_exterior_safe_log(flat, geo.z[i]) @ geo.dz[i])
    u *= -(2.0 * np.pi / system.nodes) / (4.0 * np.pi)
    return u.reshape(pts.shape)


def stream_function_at(system: PatchSystem, points, *, standoff: float | None = None) -> np.ndarray:
    """``(omega * log|.|)(p) / (2 pi)`` via ``int_D log|p-q|^2 dq = 1/2 oint (log|q-p|^2 - 1)(q-p).n ds``."""
    pts = np.asarray(points, dtype=float)
    flat = pts.reshape(-1, 2)
    if standoff is None:
        standoff = STANDOFF * system.radii[0]
    _check_standoff(system, flat, standoff)
    geo = system.geometry()
    psi = np.zeros(flat.shape[0])
    for i, theta in enumerate(system.strengths):
        dx = geo.z[i][None, :, 0] - flat[:, None, 0]
        dy = geo.z[i][None, :, 1] - flat[:, None, 1]
        flux = dx * geo.dz[i][None, :, 1] - dy * geo.dz[i][None, :, 0]
        psi += theta * np.sum((np.log(dx * dx + dy * dy) - 1.0) * flux, axis=1)
    return (psi * 0.5 * (2.0 * np.pi / system.nodes) / (4.0 * np.pi)).reshape(pts.shape[:-1])


def total_circulation(system: PatchSystem) -> float:
    """``sum_i Theta_i int (b_i + R_i)^2 / 2 dx``, exact for truncated series."""
    total = 0.0
    for layer, p in zip(system.layers, system.perturbations):
        total += layer.strength * (np.pi * layer.radius**2 + 0.5 * np.pi * float(np.dot(p.coeffs, p.coeffs)))
    return float(total)


def has_finite_energy(system: PatchSystem, tol: float = 1e-12) -> bool:
    return abs(total_circulation(system)) < tol


def exterior_velocity_sup(system: PatchSystem, radius: float, n_samples: int = 256) -> float:
    """max |u| over ``n_samples`` equispaced points on the circle of given radius."""
    rmax = max(float(np.max(b + p(system.geometry().x))) for b, p in zip(system.radii, system.perturbations))
    if not radius > rmax:
        raise ParameterError("DOMAIN", f"radius {radius} is not outside the outermost boundary ({rmax:.6g})")
    t = 2.0 * np.pi * np.arange(n_samples) / n_samples
    pts = radius * np.stack([np.cos(t), np.sin(t)], axis=-1)
    u = velocity_at(system, pts)
    return float(np.max(np.hypot(u[:, 0], u[:, 1])))
