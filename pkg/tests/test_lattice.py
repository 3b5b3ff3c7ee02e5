import numpy as np
import pytest

from blockflow.lattice import (
    AXES,
    Field,
    Hierarchy,
    Lattice,
    constant_field,
    delta_field,
    forward_derivative,
    integrate,
    pairing,
    plane_wave,
    random_field,
    scale_field_S,
    scale_field_S_inv,
    scale_field_S_nu,
)

RNG = np.random.default_rng(11)


def unit_lattice():
    return Lattice(3, 0, 0, 18, 6)


def test_integrate_constant_unit():
    lat = unit_lattice()
    assert integrate(constant_field(lat)) == pytest.approx(18 * 6**3)


def test_integrate_refinement_invariant():
    # the constant function has the same integral on every refinement of the
    # same physical box
    # a j = 1 lattice over the same physical box has L^5 times the points
    # and L^-5 the measure per point
    base = integrate(constant_field(Lattice(3, 0, 0, 18, 6)))
    refined = Lattice(3, 1, 0, 18 * 9, 6 * 3)
    assert refined.extent_t == pytest.approx(18) and refined.extent_s == pytest.approx(6)
    assert integrate(constant_field(refined)) == pytest.approx(base)


def test_integrate_delta():
    lat = unit_lattice()
    assert integrate(delta_field(lat, (3, 1, 2, 0))) == pytest.approx(1.0)


def test_pairing_examples():
    lat = unit_lattice()
    one = constant_field(lat)
    assert pairing(one, one) == pytest.approx(18 * 6**3)
    d = delta_field(lat, (0, 0, 0, 0))
    assert pairing(d, d) == pytest.approx(1.0)
    f, g = random_field(lat, RNG), random_field(lat, RNG)
    assert pairing(f, g) == pytest.approx(pairing(g, f))


def test_forward_derivative_annihilates_constants():
    lat = unit_lattice()
    for a in AXES:
        assert np.abs(forward_derivative(constant_field(lat, 2.5), a).values).max() == 0


def test_forward_derivative_delta_stencil():
    lat = unit_lattice()
    d = forward_derivative(delta_field(lat, (0, 0, 0, 0)), 1)
    expect = np.zeros(lat.shape, dtype=complex)
    expect[0, lat.shape[1] - 1, 0, 0] = 1.0   # delta at -e_1
    expect[0, 0, 0, 0] = -1.0
    assert np.abs(d.values - expect).max() == 0


def test_forward_derivative_plane_wave():
    lat = unit_lattice()
    m = (2, 1, 0, 3)
    pw = plane_wave(lat, m)
    k1 = 2 * np.pi * m[1] / lat.shape[1]
    want = (np.exp(1j * k1) - 1.0) * pw.values
    got = forward_derivative(pw, 1).values
    assert np.abs(got - want).max() < 1e-12


def test_scale_constant():
    lat = unit_lattice()
    s = scale_field_S(constant_field(lat, 2.0))
    assert np.abs(s.values - 2.0 * 3**1.5).max() == 0
    assert s.lattice.j == lat.j + 1


def test_scale_derivative_intertwining():
    # d_nu (S psi) = S_nu (d_nu psi) exactly
    lat = unit_lattice()
    psi = random_field(lat, RNG)
    for a in AXES:
        lhs = forward_derivative(scale_field_S(psi), a).values
        rhs = scale_field_S_nu(forward_derivative(psi, a), a).values
        assert np.abs(lhs - rhs).max() < 1e-12


def test_scale_round_trip():
    lat = unit_lattice()
    psi = random_field(lat, RNG)
    back = scale_field_S_inv(scale_field_S(psi))
    assert back.lattice == lat
    assert np.abs(back.values - psi.values).max() < 1e-14


def test_metric_contraction_under_scaling():
    lat = unit_lattice()
    fine = lat.scaled_finer()
    for _ in range(300):
        u = tuple(int(RNG.integers(0, s)) for s in lat.shape)
        v = tuple(int(RNG.integers(0, s)) for s in lat.shape)
        assert fine.distance(u, v) <= lat.distance(u, v) / lat.L + 1e-12


def test_lattice_divisibility_guard():
    with pytest.raises(ValueError):
        Lattice(3, 0, 2, 18, 9)  # 18 not divisible by 3^4
    with pytest.raises(ValueError):
        Lattice(4, 0, 0, 16, 4)  # even L


def test_field_shape_guard():
    lat = unit_lattice()
    with pytest.raises(ValueError):
        Field(lat, np.zeros((2, 2, 2, 2)))


def test_hierarchy_max_level():
    assert Hierarchy(3, 162, 9).max_level == 2
    assert Hierarchy(3, 18, 6).max_level == 1
    assert Hierarchy(3, 729, 27).max_level == 3
