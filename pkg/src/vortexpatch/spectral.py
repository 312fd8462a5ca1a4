"""Linearisation at radial solutions, bifurcation points and certificates.

At ``R = 0`` the functional is diagonal in the Fourier index: perturbing
layer ``k`` by ``h cos(N x)`` changes layer ``j`` of the functional by
``(-N) M[j, k] h sin(N x)`` with

    M[j, k] = -1/2 (delta_jk sum_i Theta_i b_i r_ij - Theta_k b_k r_kj^N / N),
    r_ij = min(b_i, b_j) / max(b_i, b_j).

For two layers ``(b_1, b_2) = (1, b)``, ``(Theta_1, Theta_2) = (Theta, -1)``,
and for three layers ``b_1 = Theta_1 = 1`` with ``N = m n``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

from vortexpatch.contour import (
    DEFAULT_NODES,
    boundary_velocity,
    functional_coefficients,
    three_layer_system,
)
from vortexpatch.errors import ParameterError
from vortexpatch.fourier import FourierEvenSeries, FourierOddSeries, differentiate

__all__ = [
    "BifurcationPoint",
    "LinearizationBlock",
    "a_operator",
    "b_critical",
    "decompose_dG",
    "delta_m",
    "jacobian_fd",
    "kernel_and_transversality_2",
    "radial_block",
    "theta_roots",
    "three_layer_bifurcation",
    "three_layer_block",
    "three_layer_window",
    "two_layer_bifurcation",
    "two_layer_block",
]

ROOT_TOL = 1e-10


@dataclass(frozen=True)
class LinearizationBlock:
    mode: int
    entries: np.ndarray
    det: float

    @classmethod
    def from_entries(cls, mode: int, entries) -> "LinearizationBlock":
        a = np.array(entries, dtype=float)
        a.setflags(write=False)
        return cls(mode, a, float(np.linalg.det(a)))

    @property
    def jacobian_block(self) -> np.ndarray:
        """``(-N) M_N``: the action on coefficients of ``cos(N x)``."""
        return -self.mode * self.entries


@dataclass(frozen=True, eq=False)
class BifurcationPoint:
    fold: int
    family: str
    parameters: dict
    theta_star: float
    kernel: tuple[FourierEvenSeries, ...]
    cokernel: tuple[FourierOddSeries, ...]
    transversality: float
    higher_mode_margin: float
    kernel_vector: np.ndarray
    cokernel_vector: np.ndarray
    det_m1: float
    margins: np.ndarray
    details: dict = field(default_factory=dict)

    @property
    def radii(self) -> tuple[float, ...]:
        return tuple(self.parameters["radii"])

    @property
    def strengths(self) -> tuple[float, ...]:
        return tuple(self.parameters["strengths"])


# --------------------------------------------------------------------------
# blocks


def radial_block(radii: Sequence[float], strengths: Sequence[float], N: int) -> np.ndarray:
    b = np.asarray(radii, dtype=float)
    t = np.asarray(strengths, dtype=float)
    r = np.minimum.outer(b, b) / np.maximum.outer(b, b)
    diag = (t * b) @ r
    return -0.5 * (np.diag(diag) - (t * b)[None, :] * r.T**N / N)


def two_layer_block(b: float, theta: float, n: int, m: int | None = None) -> LinearizationBlock:
    """2x2 block for the actual Fourier mode ``n`` (``m`` is accepted for symmetry of signatures)."""
    if not 0 < b < 1:
        raise ParameterError("DOMAIN", f"b must lie in (0, 1), got {b}")
    if n < 1:
        raise ParameterError("DOMAIN", f"mode must be >= 1, got {n}")
    entries = [
        [b * b / 2 - theta / 2 + theta / (2 * n), -b ** (n + 1) / (2 * n)],
        [theta * b**n / (2 * n), -b / (2 * n) + b * (1 - theta) / 2],
    ]
    return LinearizationBlock.from_entries(n, entries)


def three_layer_block(b2: float, theta2: float, b3: float, theta3: float, n: int, m: int) -> LinearizationBlock:
    """3x3 block for mode ``m n`` with ``b_1 = Theta_1 = 1``."""
    if not 1 > b2 > b3 > 0:
        raise ParameterError("DOMAIN", f"need 1 > b_2 > b_3 > 0, got b_2={b2}, b_3={b3}")
    if n < 1:
        raise ParameterError("DOMAIN", f"block index must be >= 1, got {n}")
    return LinearizationBlock.from_entries(m * n, radial_block((1.0, b2, b3), (1.0, theta2, theta3), m * n))


def _row_normalized_det(a: np.ndarray) -> float:
    scale = np.max(np.abs(a), axis=1)
    scale[scale == 0] = 1.0
    return float(np.linalg.det(a / scale[:, None]))


# --------------------------------------------------------------------------
# two layers


def delta_m(b: float, theta: float, m: int) -> float:
    """``(4 m^2 / b) det M_m``, a quadratic in ``Theta``."""
    return (
        m * (m - 1) * theta**2
        - ((m - 1) ** 2 + b * b * m * m - b ** (2 * m)) * theta
        + b * b * m * (m - 1)
    )


def b_critical(m: int) -> float:
    """Unique root of ``m - 1 - b m - b^m`` in (0, 1)."""
    if m < 2:
        raise ParameterError("DOMAIN", f"fold must be >= 2, got {m}")
    return float(brentq(lambda b: m - 1 - b * m - b**m, 0.0, 1.0, xtol=1e-17))


def theta_roots(b: float, m: int) -> tuple[float, float, float]:
    """``(Theta^-, Theta^+, b_m)`` with ``Delta_m = 0``."""
    bm = b_critical(m)
    if not 0 < b:
        raise ParameterError("DOMAIN", f"b must be positive, got {b}")
    if b >= bm:
        raise ParameterError("B_TOO_LARGE", f"b = {b} is not below b_{m} = {bm:.15g}")
    S = ((m - 1) ** 2 + b * b * m * m - b ** (2 * m)) / (m * (m - 1))
    disc = S * S - 4 * b * b
    if disc <= 0:
        raise ParameterError("B_TOO_LARGE", f"discriminant {disc:.3e} is not positive")
    plus = 0.5 * (S + np.sqrt(disc))
    # product form avoids cancellation in the small root
    return float(b * b / plus), float(plus), bm


def kernel_and_transversality_2(b: float, m: int, theta: float, tol: float = ROOT_TOL):
    """Kernel ``v0`` of ``M_m``, range direction ``w`` and transversality factor ``tau``."""
    d = delta_m(b, theta, m)
    if abs(d) > tol:
        raise ParameterError("NOT_A_ROOT", f"Delta_{m}({theta}) = {d:.3e} exceeds {tol:.1e}")
    v0 = np.array([b / (2 * m) - b * (1 - theta) / 2, theta * b**m / (2 * m)])
    w = np.array([-(b ** (m + 1)) / (2 * m), -b / (2 * m) + b * (1 - theta) / 2])
    tau = (theta - (1 - (1 + b**m) / m)) * (theta - (1 - (1 - b**m) / m))
    return v0, w, float(tau)


def two_layer_bifurcation(b: float, m: int, root: str = "+", *, theta: float | None = None,
                          n_max: int = 50, truncation: int = 64) -> BifurcationPoint:
    """Certified bifurcation point of the two-layer family.

    ``theta`` may be given explicitly; ``Theta = b^2`` (zero total vorticity)
    is refused since the mode-``m`` block is then invertible.
    """
    if theta is not None and abs(theta - b * b) <= 1e-12 * max(1.0, b * b):
        raise ParameterError(
            "ZERO_MEAN",
            f"Theta = b^2 gives zero total vorticity; Delta_{m}(b^2) = {delta_m(b, b * b, m):.6g} != 0, no bifurcation",
        )
    lo, hi, bm = theta_roots(b, m)
    if theta is None:
        if root not in ("+", "-"):
            raise ValueError("root must be '+' or '-'")
        theta = hi if root == "+" else lo
    v0, w_range, tau = kernel_and_transversality_2(b, m, theta)
    block = two_layer_block(b, theta, m)
    # unit left null vector: orthogonal to the range direction
    coker = np.array([w_range[1], -w_range[0]])
    coker /= np.linalg.norm(coker)
    margins = np.array([abs(two_layer_block(b, theta, j * m).det) for j in range(2, n_max + 1)])
    margin = float(margins.min()) if margins.size else np.inf
    if margin < 1e-10:
        raise ParameterError("DEGENERATE", f"higher-mode margin {margin:.3e} below 1e-10")
    kernel = tuple(FourierEvenSeries.mode(m, truncation, 1, c) for c in v0)
    l2 = np.sqrt(np.pi)
    cokernel = tuple(FourierOddSeries.mode(m, truncation, 1, c / l2) for c in coker)
    return BifurcationPoint(
        fold=m,
        family="two_layer",
        parameters={"radii": (1.0, b), "strengths": (theta, -1.0), "b": b, "b_critical": bm,
                    "theta_minus": lo, "theta_plus": hi},
        theta_star=float(theta),
        kernel=kernel,
        cokernel=cokernel,
        transversality=tau,
        higher_mode_margin=margin,
        kernel_vector=v0,
        cokernel_vector=coker,
        det_m1=_row_normalized_det(block.entries),
        margins=margins,
        details={"range_vector": w_range, "delta_m": delta_m(b, theta, m)},
    )


# --------------------------------------------------------------------------
# three layers


def three_layer_window(b2: float, m: int) -> tuple[float, float]:
    """Open interval of admissible ``Theta_2`` for given ``b_2``."""
    if m < 2:
        raise ParameterError("PARAM_WINDOW", f"fold must be >= 2, got {m}")
    bmax = 0.5 ** (1.0 / (2 * m))
    if not 0 < b2 < bmax:
        raise ParameterError("PARAM_WINDOW", f"b_2 = {b2} outside (0, {bmax:.15g})")
    q = b2 ** (2 * m)
    lower = m * (b2 * b2 - 1) / ((1 - q) * b2 * b2)
    upper = min(2 * b2 ** (2 * m - 2) * (b2 * b2 - 1) * m / (1 - q), -1 / (b2 * b2))
    return lower, upper


def _three_layer_coefficients(b2: float, theta2: float, m: int) -> dict:
    q = b2**m
    t = -1 - theta2 * b2 * b2
    a33 = theta2 / (2 * m) * (1 - q * q) + (1 - b2 * b2) / (2 * b2 * b2)
    B0 = t * ((1 - 1 / b2**2) / (4 * m) + theta2 * (q - 1 / q) / (4 * m * m * q))
    B1 = a33 * (-0.5 - 0.5 * theta2)
    B2 = a33 * t * (-0.5 + 0.5 / m)
    d2 = (b2 * b2 - 1) / b2
    det_cm33 = (-0.5 * d2 + theta2 * b2 / (2 * m) * (1 - q * q)) / (2 * m)
    C0 = (2 * m - 1) / (8 * m * m) * (
        1 / (2 * b2) - b2 / 2 + theta2 / (2 * m * b2 ** (2 * m - 1)) - b2 * theta2 / (2 * m)
    )
    C1 = det_cm33 * (1 + theta2) / (4 * t)
    C2 = det_cm33 * (-0.25 + 0.25 / m)
    return {"A33": a33, "B0": B0, "B1": B1, "B2": B2, "C0": C0, "C1": C1, "C2": C2,
            "d2": d2, "det_cm33": det_cm33}


def _bisect(f: Callable[[float], float], lo: float, hi: float, width: float = 1e-14) -> float:
    flo = f(lo)
    while hi - lo > width:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        fm = f(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def three_layer_bifurcation(b2: float, theta2: float, m: int, n_max: int = 50,
                            truncation: int = 64) -> BifurcationPoint:
    """Zero-circulation three-layer bifurcation point with ``b_1 = Theta_1 = 1``."""
    lower, upper = three_layer_window(b2, m)
    if not lower < theta2 < upper:
        raise ParameterError("PARAM_WINDOW", f"Theta_2 = {theta2} outside ({lower:.15g}, {upper:.15g})")
    c = _three_layer_coefficients(b2, theta2, m)
    if not (c["B0"] > 0 and c["B1"] > 0 and c["B2"] < 0):
        raise ParameterError("NO_ROOT", f"sign pattern of (B0, B1, B2) = ({c['B0']}, {c['B1']}, {c['B2']}) fails")
    B0, B1, B2 = c["B0"], c["B1"], c["B2"]
    z = _bisect(lambda z: B0 * z**m + B1 * z + B2, 0.0, b2 * b2)
    b3 = float(np.sqrt(z))
    theta3 = -(1 + theta2 * b2 * b2) / z
    g = c["C0"] * b3 ** (2 * m) + c["C1"] * b3**2 + c["C2"]
    if not (c["C0"] * c["C1"] > 0 and c["C1"] * c["C2"] > 0):
        raise ParameterError("DEGENERATE", "transversality coefficients C_i do not share one sign")
    d3 = (1 + theta2 + theta3) * b3

    M1 = three_layer_block(b2, theta2, b3, theta3, 1, m).entries
    cm33 = M1[:2, :2]
    v12 = np.linalg.solve(cm33, -M1[:2, 2])
    v = np.array([v12[0], v12[1], 1.0])
    cross = np.cross(M1[:, 0], M1[:, 1])
    w = cross / np.linalg.norm(cross)

    margins = np.array([abs(three_layer_block(b2, theta2, b3, theta3, n, m).det) for n in range(2, n_max + 1)])
    margin = float(margins.min()) if margins.size else np.inf
    if margin < 1e-10:
        raise ParameterError("DEGENERATE", f"higher-mode margin {margin:.3e} below 1e-10")

    # parameter derivative of M_1 along the closure curve b_3(Theta_3)
    h = 1e-6 * abs(theta3)
    dM = (_closure_block(b2, theta2, theta3 + h, m) - _closure_block(b2, theta2, theta3 - h, m)) / (2 * h)

    kernel = tuple(FourierEvenSeries.mode(m, truncation, 1, x) for x in v)
    cokernel = tuple(FourierOddSeries.mode(m, truncation, 1, x / np.sqrt(np.pi)) for x in w)
    details = dict(c)
    details.update({
        "g": float(g), "d3": float(d3), "b3": b3, "window": (lower, upper),
        "M1": M1, "dtheta_M1": dM, "w_dM_v": float(w @ dM @ v),
        "asymptotic_margin": abs(c["d2"] * d3) / 4.0,
        "residual_Mv": float(np.max(np.abs(M1 @ v))),
        "residual_MTw": float(np.max(np.abs(M1.T @ w))),
    })
    return BifurcationPoint(
        fold=m,
        family="three_layer",
        parameters={"radii": (1.0, b2, b3), "strengths": (1.0, theta2, theta3),
                    "b2": b2, "theta2": theta2, "b3": b3},
        theta_star=float(theta3),
        kernel=kernel,
        cokernel=cokernel,
        transversality=float(g),
        higher_mode_margin=margin,
        kernel_vector=v,
        cokernel_vector=w,
        det_m1=_row_normalized_det(M1),
        margins=margins,
        details=details,
    )


def _closure_block(b2: float, theta2: float, theta3: float, m: int) -> np.ndarray:
    b3 = np.sqrt(-(1 + theta2 * b2 * b2) / theta3)
    return radial_block((1.0, b2, b3), (1.0, theta2, theta3), m)


# --------------------------------------------------------------------------
# finite-difference oracle and the a + A splitting


def jacobian_fd(functional: Callable[[np.ndarray], np.ndarray], state, h: float = 1e-6) -> np.ndarray:
    """Central differences; column ``k`` uses step ``h * max(1, |x_k|)``."""
    x = np.array(state, dtype=float)
    cols = []
    for k in range(x.size):
        step = h * max(1.0, abs(x[k]))
        xp, xm = x.copy(), x.copy()
        xp[k] += step
        xm[k] -= step
        cols.append((np.asarray(functional(xp)) - np.asarray(functional(xm))) / (2 * step))
    return np.column_stack(cols)


def _as_series(R, fold: int) -> tuple[FourierEvenSeries, ...]:
    return tuple(r if isinstance(r, FourierEvenSeries) else FourierEvenSeries(fold, r) for r in R)


def a_operator(theta3: float, R: Sequence[FourierEvenSeries], b2: float, theta2: float,
               nodes: int = DEFAULT_NODES) -> Callable:
    """``h -> (P0(h_1' u_1^theta), 0, 0)`` as sine coefficients, shape (3, J)."""
    system = three_layer_system(theta3, R, b2, theta2, nodes=nodes)
    geo = system.geometry()
    u1 = boundary_velocity(system)[0]
    c, s = np.cos(geo.x), np.sin(geo.x)
    u_theta = -u1[:, 0] * s + u1[:, 1] * c
    J = system.truncation
    basis = np.sin(np.outer(geo.x, system.fold * np.arange(1, J + 1)))
    fold = system.fold

    def apply(h) -> np.ndarray:
        hs = _as_series(h, fold)
        prod = differentiate(hs[0].padded(J))(geo.x) * u_theta
        out = np.zeros((3, J))
        out[0] = (2.0 / geo.x.size) * prod @ basis
        return out

    return apply


def decompose_dG(theta3: float, R: Sequence[FourierEvenSeries], b2: float, theta2: float,
                 nodes: int = DEFAULT_NODES, eps: float = 1e-6) -> tuple[Callable, Callable]:
    """``(a, A)`` with ``A = DG - a``; ``DG[h]`` is a central directional difference."""
    R = tuple(R)
    fold = R[0].fold
    J = max(r.truncation for r in R)
    a = a_operator(theta3, R, b2, theta2, nodes)

    def G(Rs) -> np.ndarray:
        return functional_coefficients(three_layer_system(theta3, Rs, b2, theta2, nodes=nodes), J)

    def dG(h) -> np.ndarray:
        hs = _as_series(h, fold)
        scale = max(float(np.max([np.max(np.abs(x.coeffs)) for x in hs])), 1e-300)
        t = eps / scale
        plus = tuple(r + x * t for r, x in zip(R, hs))
        minus = tuple(r - x * t for r, x in zip(R, hs))
        return (G(plus) - G(minus)) / (2 * t)

    def A(h) -> np.ndarray:
        return dG(h) - a(h)

    return a, A
