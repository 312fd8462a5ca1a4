"""Truncated m-fold symmetric Fourier series.

A boundary perturbation is an even, ``2*pi/m``-periodic, mean-free function

    f(x) = sum_{j=1..J} a_{jm} cos(j m x)

and the stationarity functionals produce the odd counterparts built on
``sin(j m x)``.  Coefficients are stored as ``(a_m, a_{2m}, ..., a_{Jm})``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

__all__ = [
    "FourierEvenSeries",
    "FourierOddSeries",
    "NormSpec",
    "differentiate",
    "eval_series",
    "l2_inner",
    "project_kernel",
    "smooth",
    "weighted_norm",
]


def _frozen(coeffs) -> np.ndarray:
    arr = np.array(coeffs, dtype=float).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class _Series:
    fold: int
    coeffs: np.ndarray

    def __post_init__(self) -> None:
        if int(self.fold) < 1:
            raise ValueError(f"fold must be a positive integer, got {self.fold}")
        object.__setattr__(self, "fold", int(self.fold))
        object.__setattr__(self, "coeffs", _frozen(self.coeffs))
        if self.coeffs.size < 1:
            raise ValueError("a series needs at least one mode")

    @classmethod
    def zeros(cls, fold: int, truncation: int):
        return cls(fold, np.zeros(truncation))

    @classmethod
    def mode(cls, fold: int, truncation: int, j: int, amplitude: float = 1.0):
        """Single harmonic ``amplitude * basis(j*fold*x)``."""
        c = np.zeros(truncation)
        c[j - 1] = amplitude
        return cls(fold, c)

    @property
    def truncation(self) -> int:
        return self.coeffs.size

    @property
    def modes(self) -> np.ndarray:
        return self.fold * np.arange(1, self.truncation + 1)

    def _basis(self, x):
        raise NotImplementedError

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.tensordot(self._basis(np.multiply.outer(x, self.modes)), self.coeffs, axes=([-1], [0]))

    def padded(self, truncation: int):
        """Copy with ``truncation`` modes (zero-padded or cut)."""
        c = np.zeros(truncation)
        n = min(truncation, self.truncation)
        c[:n] = self.coeffs[:n]
        return type(self)(self.fold, c)

    def _check(self, other) -> None:
        if type(other) is not type(self):
            raise TypeError(f"cannot combine {type(self).__name__} with {type(other).__name__}")
        if other.fold != self.fold:
            raise ValueError(f"fold mismatch: {self.fold} vs {other.fold}")

    def __add__(self, other):
        self._check(other)
        n = max(self.truncation, other.truncation)
        return type(self)(self.fold, self.padded(n).coeffs + other.padded(n).coeffs)

    def __sub__(self, other):
        return self + (-other)

    def __neg__(self):
        return type(self)(self.fold, -self.coeffs)

    def __mul__(self, scalar: float):
        return type(self)(self.fold, float(scalar) * self.coeffs)

    __rmul__ = __mul__

    def __eq__(self, other) -> bool:
        return (
            type(other) is type(self)
            and other.fold == self.fold
            and np.array_equal(other.coeffs, self.coeffs)
        )

    def __hash__(self) -> int:
        return hash((type(self).__name__, self.fold, self.coeffs.tobytes()))

    def __repr__(self) -> str:
        return f"{type(self).__name__}(fold={self.fold}, coeffs={self.coeffs.tolist()!r})"


class FourierEvenSeries(_Series):
    """``sum_j a_{jm} cos(j m x)``: even, ``2*pi/m``-periodic, zero mean."""

    def _basis(self, x):
        return np.cos(x)

    @classmethod
    def from_samples(cls, values, fold: int, truncation: int) -> "FourierEvenSeries":
        """Discrete cosine projection of samples on ``x_k = 2*pi*k/N``."""
        values = np.asarray(values, dtype=float)
        n = values.size
        x = 2.0 * np.pi * np.arange(n) / n
        modes = fold * np.arange(1, truncation + 1)
        return cls(fold, (2.0 / n) * np.cos(np.outer(modes, x)) @ values)


class FourierOddSeries(_Series):
    """``sum_j b_{jm} sin(j m x)``: odd, ``2*pi/m``-periodic."""

    def _basis(self, x):
        return np.sin(x)

    @classmethod
    def from_samples(cls, values, fold: int, truncation: int) -> "FourierOddSeries":
        values = np.asarray(values, dtype=float)
        n = values.size
        x = 2.0 * np.pi * np.arange(n) / n
        modes = fold * np.arange(1, truncation + 1)
        return cls(fold, (2.0 / n) * np.sin(np.outer(modes, x)) @ values)


Series = Union[FourierEvenSeries, FourierOddSeries]


@dataclass(frozen=True)
class NormSpec:
    """Sobolev order ``k`` and analyticity strip width ``c`` (``c = 0``: plain H^k)."""

    sobolev_order: int = 0
    strip_width: float = 0.0

    def __post_init__(self) -> None:
        if self.sobolev_order < 0:
            raise ValueError("sobolev_order must be >= 0")
        if self.strip_width < 0:
            raise ValueError("strip_width must be >= 0")

    def weights(self, modes: np.ndarray) -> np.ndarray:
        modes = np.asarray(modes, dtype=float)
        c = self.strip_width
        w = (1.0 + modes) ** (2 * self.sobolev_order)
        if c:
            w = w * (np.cosh(c * modes) ** 2 + np.sinh(c * modes) ** 2)
        return w


def eval_series(f: Series, x):
    return f(x)


def differentiate(f: Series) -> Series:
    """Termwise derivative; cosine and sine series swap roles."""
    if isinstance(f, FourierEvenSeries):
        return FourierOddSeries(f.fold, -f.modes * f.coeffs)
    return FourierEvenSeries(f.fold, f.modes * f.coeffs)


def weighted_norm(f: Series, spec: NormSpec = NormSpec()) -> float:
    """sqrt(sum |a_{jm}|^2 (1+jm)^{2k} (cosh(cjm)^2 + sinh(cjm)^2))."""
    return float(np.sqrt(np.sum(f.coeffs**2 * spec.weights(f.modes))))


def smooth(f: Series, cutoff: float) -> Series:
    """Sharp spectral cutoff: keep modes ``j*m <= cutoff``."""
    if cutoff <= 0:
        raise ValueError("cutoff must be positive")
    return type(f)(f.fold, np.where(f.modes <= cutoff, f.coeffs, 0.0))


def l2_inner(u: Sequence[Series], v: Sequence[Series]) -> float:
    """L^2 inner product on [0, 2*pi), summed over components."""
    total = 0.0
    for a, b in zip(u, v, strict=True):
        a._check(b)
        n = min(a.truncation, b.truncation)
        total += np.pi * float(np.dot(a.coeffs[:n], b.coeffs[:n]))
    return total


def project_kernel(R: Sequence[Series], v: Sequence[Series]):
    """Return ``(PR, R - PR)`` with ``PR = (v.R) v`` for the L^2-normalised ``v``."""
    norm = np.sqrt(l2_inner(v, v))
    if norm == 0:
        raise ValueError("kernel vector is zero")
    vhat = tuple(c * (1.0 / norm) for c in v)
    amp = l2_inner(vhat, R)
    proj = tuple(c * amp for c in vhat)
    return proj, tuple(r - p for r, p in zip(R, proj))
