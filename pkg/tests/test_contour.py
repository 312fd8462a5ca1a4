from __future__ import annotations

import numpy as np
import pytest

from vortexpatch.contour import (
    LayerConfig,
    PatchSystem,
    b3_closure,
    exterior_velocity_sup,
    functional_coefficients,
    functional_F,
    functional_G,
    functional_nodes,
    has_finite_energy,
    interaction,
    log_kernel_moment,
    near_boundary,
    resolvent_moment,
    stream_function_at,
    three_layer_system,
    total_circulation,
    two_layer_system,
    velocity_at,
)
from vortexpatch.errors import NestingError, ParameterError, QuadratureError
from vortexpatch.fourier import FourierEvenSeries, FourierOddSeries
from vortexpatch.spectral import kernel_and_transversality_2, theta_roots

J = 16


def zeros(n, m=2, J=J):
    return tuple(FourierEvenSeries.zeros(m, J) for _ in range(n))


def random_R(rng, n, m=2, J=J, amp=1e-2):
    return tuple(FourierEvenSeries(m, amp * rng.standard_normal(J) * 0.5 ** np.arange(J)) for _ in range(n))


@pytest.mark.parametrize("r", [0.25, 0.5, 0.9])
@pytest.mark.parametrize("m", [1, 2, 5])
def test_integral_oracles(r, m):
    assert abs(log_kernel_moment(r, m) + 2 * np.pi * r**m / m) < 1e-10
    assert abs(resolvent_moment(r, m) - 2 * np.pi * r**m / (1 - r * r)) < 1e-10


def test_integral_oracle_unit_radius_and_a1_example():
    assert log_kernel_moment(1.0, 1) == pytest.approx(-2 * np.pi, abs=1e-12)
    assert log_kernel_moment(1.0, 3) == pytest.approx(-2 * np.pi / 3, abs=1e-12)
    assert resolvent_moment(0.5, 1) == pytest.approx(4 * np.pi / 3, abs=1e-12)


def test_interaction_radial():
    s = PatchSystem.radial(2, [1.0, 0.5], [1.0, -1.0], truncation=8)
    b = s.radii
    for i in range(2):
        for j in range(2):
            ut, ur = interaction(s, i, j)
            assert np.max(np.abs(ur)) < 1e-12
            r = min(b[i], b[j]) / max(b[i], b[j])
            # kernel velocity of a disk: -2 pi b_i r on a concentric circle
            np.testing.assert_allclose(ut, -2 * np.pi * b[i] * r, atol=1e-12)


def test_interaction_resolution_check():
    rng = np.random.default_rng(1)
    s = two_layer_system(0.3, 0.49, random_R(rng, 2))
    interaction(s, 0, 1, check_resolution=True)
    rough = PatchSystem(2, (LayerConfig(1.0, 1.0), LayerConfig(0.5, -1.0)),
                        (FourierEvenSeries(2, [0.0] * 7 + [0.1]), FourierEvenSeries(2, [0.0] * 7 + [0.1])), 32)
    with pytest.raises(QuadratureError) as exc:
        interaction(rough, 0, 0, check_resolution=True)
    assert exc.value.code == "QUADRATURE_UNDERRESOLVED"


def test_nesting_violation():
    R = (FourierEvenSeries(2, [0.0]), FourierEvenSeries(2, [0.6]))
    s = PatchSystem(2, (LayerConfig(1.0, 1.0), LayerConfig(0.5, -1.0)), R, 64)
    with pytest.raises(NestingError) as exc:
        functional_F(s)
    assert exc.value.code == "NESTING_VIOLATION"
    with pytest.raises(ParameterError):
        PatchSystem.radial(2, [0.5, 1.0], [1.0, 1.0])
    with pytest.raises(ParameterError):
        LayerConfig(0.0, 1.0)


def test_functional_trivial():
    rng = np.random.default_rng(7)
    for _ in range(5):
        b, th = rng.uniform(0.05, 0.95), rng.uniform(-3, 3)
        coeffs = functional_coefficients(two_layer_system(b, th, zeros(2)))
        assert np.max(np.abs(coeffs)) < 1e-12


def test_functional_quadratic_along_kernel():
    b = 0.3
    _, theta, _ = theta_roots(b, 2)
    v0, _, _ = kernel_and_transversality_2(b, 2, theta)
    ratios = []
    for s in (1e-4, 1e-5):
        R = tuple(FourierEvenSeries.mode(2, J, 1, s * c) for c in v0)
        F = functional_coefficients(two_layer_system(b, theta, R))
        ratios.append(np.max(np.abs(F)) / s**2)
    assert ratios[1] == pytest.approx(ratios[0], rel=0.05)
    assert ratios[0] < 1.0


def test_functional_zero_mean_symmetry_and_rotation():
    rng = np.random.default_rng(3)
    m = 3
    s = PatchSystem(m, (LayerConfig(1.0, 0.7), LayerConfig(0.4, -1.0)), random_R(rng, 2, m=m), 384)
    vals = functional_nodes(s)
    n = s.nodes
    assert np.max(np.abs(vals.mean(axis=1))) < 1e-12
    # odd and 2 pi / m periodic
    np.testing.assert_allclose(np.roll(vals, -n // m, axis=1), vals, atol=1e-12)
    np.testing.assert_allclose(vals, -np.roll(vals[:, ::-1], 1, axis=1), atol=1e-12)
    # no energy outside the sine modes jm
    spec = np.fft.rfft(vals, axis=1) / n
    allowed = np.zeros(spec.shape[1], dtype=bool)
    allowed[::m] = True
    assert np.max(np.abs(spec[:, ~allowed])) < 1e-12
    assert np.max(np.abs(spec[:, allowed].real)) < 1e-12
    F = functional_F(s)
    assert all(isinstance(f, FourierOddSeries) and f.fold == m for f in F)


def test_rotation_equivariance_of_diagnostics():
    rng = np.random.default_rng(4)
    s = two_layer_system(0.3, 0.45, random_R(rng, 2))
    t = 2 * np.pi * np.arange(32) / 32
    pts = 1.7 * np.stack([np.cos(t), np.sin(t)], axis=-1)
    rot = np.array([[0.0, -1.0], [1.0, 0.0]])  # rotation by 2 pi / m with m = 2 is -I; use quarter turn twice
    half = rot @ rot
    u = velocity_at(s, pts)
    u_rot = velocity_at(s, pts @ half.T)
    np.testing.assert_allclose(u_rot, u @ half.T, atol=1e-12)


def test_spectral_convergence_in_nodes():
    rng = np.random.default_rng(5)
    R = random_R(rng, 3, J=16, amp=2e-2)
    s = three_layer_system(8.4, R, 0.5, -5.0, nodes=128)
    a = functional_coefficients(s)
    b = functional_coefficients(s.with_nodes(256))
    assert np.max(np.abs(a - b)) < 1e-10


def test_b3_closure_examples():
    b3 = b3_closure(8.3912, zeros(3), 1.0, 0.5, 1.0, -5.0)
    assert b3 == pytest.approx(np.sqrt(0.25 / 8.3912), rel=1e-15)
    assert b3_closure(4 * 8.3912, zeros(3), 1.0, 0.5, 1.0, -5.0) == pytest.approx(b3 / 2, rel=1e-14)
    for eps in (1e-2, 5e-3):
        R = (FourierEvenSeries.zeros(2, 4), FourierEvenSeries.zeros(2, 4), FourierEvenSeries(2, [eps]))
        drop = b3 - b3_closure(8.3912, R, 1.0, 0.5, 1.0, -5.0)
        assert drop == pytest.approx(eps**2 / (4 * b3), rel=10 * eps**2 / b3**2)


def test_b3_closure_errors():
    with pytest.raises(ParameterError) as exc:
        b3_closure(-1.0, zeros(3), 1.0, 0.5, 1.0, -5.0)
    assert exc.value.code == "NEGATIVE_RADICAND"
    with pytest.raises(ParameterError) as exc:
        b3_closure(0.5, zeros(3), 1.0, 0.5, 1.0, -5.0)
    assert exc.value.code == "NOT_NESTED"
    with pytest.raises(ParameterError):
        b3_closure(0.0, zeros(3), 1.0, 0.5, 1.0, -5.0)


def test_functional_G_trivial_and_circulation():
    assert np.max(np.abs([g.coeffs for g in functional_G(8.0, zeros(3), 0.5, -5.0)])) < 1e-12
    rng = np.random.default_rng(11)
    for _ in range(5):
        s = three_layer_system(rng.uniform(7, 12), random_R(rng, 3), 0.5, -5.0)
        assert abs(total_circulation(s)) < 1e-12
        assert has_finite_energy(s)


def test_total_circulation_examples():
    theta = 0.493625
    s = PatchSystem.radial(2, [1.0, 0.3], [theta, -1.0])
    assert total_circulation(s) == pytest.approx(np.pi * (theta - 0.09), abs=1e-14)
    assert total_circulation(s) == pytest.approx(1.2680253, abs=1e-7)
    assert not has_finite_energy(s)
    assert total_circulation(PatchSystem.radial(2, [1.0], [1.0])) == pytest.approx(np.pi, abs=1e-15)


def test_velocity_examples():
    theta = 0.45
    s = PatchSystem.radial(2, [1.0, 0.3], [theta, -1.0])
    gamma = total_circulation(s)
    for rho in (1.5, 3.0):
        u = velocity_at(s, [[rho, 0.0]])[0]
        assert u[0] == pytest.approx(0.0, abs=1e-14)
        assert u[1] == pytest.approx(gamma / (2 * np.pi * rho), rel=1e-12)
    rng = np.random.default_rng(2)
    s2 = two_layer_system(0.3, 0.45, random_R(rng, 2))
    assert np.max(np.abs(velocity_at(s2, [[0.0, 0.0]]))) < 1e-14
    with pytest.raises(NestingError) as exc:
        velocity_at(s, [[1.0, 0.0]])
    assert exc.value.code == "POINT_ON_BOUNDARY"
    assert near_boundary(s, [[0.3 + 1e-8, 0.0], [0.6, 0.0]]).tolist() == [True, False]
    # solid-body rotation inside a unit disk
    disk = PatchSystem.radial(2, [1.0], [1.0])
    np.testing.assert_allclose(velocity_at(disk, [[0.5, 0.0]])[0], [0.0, 0.25], atol=1e-14)


def test_stream_function_consistent_with_velocity():
    rng = np.random.default_rng(9)
    s = two_layer_system(0.3, 0.45, random_R(rng, 2))
    p = np.array([0.6, 0.35])
    h = 1e-5
    dpx = (stream_function_at(s, [p + [h, 0]]) - stream_function_at(s, [p - [h, 0]]))[0] / (2 * h)
    dpy = (stream_function_at(s, [p + [0, h]]) - stream_function_at(s, [p - [0, h]]))[0] / (2 * h)
    u = velocity_at(s, [p])[0]
    np.testing.assert_allclose(u, [-dpy, dpx], atol=1e-8)
    ring = 0.7 * np.stack([np.cos(np.linspace(0, 6, 9)), np.sin(np.linspace(0, 6, 9))], axis=-1)
    radial = PatchSystem.radial(2, [1.0, 0.3], [0.45, -1.0])
    psi = stream_function_at(radial, ring)
    assert np.ptp(psi) < 1e-13


def test_exterior_velocity_examples():
    b = 0.4
    zero_mean = PatchSystem.radial(2, [1.0, b], [b * b, -1.0])
    assert exterior_velocity_sup(zero_mean, 1.5) < 1e-12
    s = PatchSystem.radial(2, [1.0, 0.3], [0.493625, -1.0])
    assert exterior_velocity_sup(s, 2.0) == pytest.approx(abs(total_circulation(s)) / (4 * np.pi), rel=1e-12)
    with pytest.raises(ParameterError):
        exterior_velocity_sup(s, 0.9)
