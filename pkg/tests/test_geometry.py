import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cvsheet.errors import SurfaceError, SurfaceTooRoughError
from cvsheet.fields import SIDES, Grid, TorusScalar, grad2
from cvsheet.geometry import (Surface, build_flattening, common_delta, flatten_coefficients,
                              harmonic_coordinates, interface_normal, tangential_projection,
                              w1inf_distance)

G = Grid.make(16, 16, 17)


def surface(fn, c0=0.2, grid=G):
    return Surface(TorusScalar.from_function(fn, grid), c0)


def expected_sign(side):
    return 1 if side == "minus" else -1


class TestFlattening:
    @pytest.mark.parametrize("side", SIDES)
    def test_flat_is_identity(self, side):
        m = build_flattening(surface(lambda a, b: 0 * a), side)
        z = np.broadcast_to(G.z, G.shape3)
        np.testing.assert_array_equal(m.rho, expected_sign(side) * z)

    @pytest.mark.parametrize("side", SIDES)
    def test_lower_bound_on_dz_rho(self, side):
        m = build_flattening(surface(lambda a, b: 0.3 * np.cos(a), c0=0.5), side)
        assert np.min(expected_sign(side) * m.rho_z) >= 0.25

    @pytest.mark.parametrize("side", SIDES)
    @pytest.mark.parametrize("level", [0.8, -0.8])
    def test_constant_height_gives_straight_columns(self, side, level):
        m = build_flattening(surface(lambda a, b: level + 0 * a), side)
        o = expected_sign(side)
        z = G.z
        lid = o * -1.0
        np.testing.assert_allclose(m.rho, np.broadcast_to(lid + (level - lid) * (1 + z), G.shape3),
                                   atol=1e-14)

    def test_interface_and_lid_values(self):
        f = TorusScalar.from_function(lambda a, b: 0.2 * np.sin(a + b), G)
        for side in SIDES:
            m = build_flattening(Surface(f, 0.3), side)
            np.testing.assert_allclose(m.rho[..., 0], f.values, atol=1e-14)
            np.testing.assert_allclose(m.rho[..., -1], expected_sign(side) * -1.0, atol=1e-14)

    def test_deterministic(self):
        s = surface(lambda a, b: 0.4 * np.cos(3 * a) * np.sin(2 * b))
        a, b = build_flattening(s, "minus"), build_flattening(s, "minus")
        assert a.delta == b.delta
        assert np.array_equal(a.rho_z, b.rho_z)

    def test_fixed_delta_too_rough(self):
        s = surface(lambda a, b: 0.7 * np.cos(6 * a), c0=0.25)
        with pytest.raises(SurfaceTooRoughError):
            build_flattening(s, "minus", delta=1.0)

    def test_surface_out_of_channel(self):
        with pytest.raises(SurfaceError, match="1 - c0"):
            surface(lambda a, b: 0.95 + 0 * a, c0=0.1)

    def test_common_delta(self):
        s = surface(lambda a, b: 0.5 * np.cos(4 * a))
        d = common_delta(s)
        assert d <= min(build_flattening(s, side).delta for side in SIDES)

    @given(st.floats(-0.6, 0.6), st.integers(1, 5), st.integers(0, 5))
    def test_bound_holds_for_random_surfaces(self, amp, k1, k2):
        s = surface(lambda a, b: amp * np.cos(k1 * a + k2 * b), c0=0.3)
        for side in SIDES:
            m = build_flattening(s, side)
            assert np.min(expected_sign(side) * m.rho_z) >= 0.15


class TestCoefficients:
    @pytest.mark.parametrize("side", SIDES)
    def test_flat_exact(self, side):
        c = flatten_coefficients(build_flattening(surface(lambda a, b: 0 * a), side))
        assert np.all(c.alpha.values == 1.0)
        assert np.all(c.beta[0].values == 0.0) and np.all(c.beta[1].values == 0.0)
        assert np.all(c.gamma.values == 0.0)
        assert c.is_flat

    def test_first_order_expansion(self):
        # minus side, rho = z + eps*E with E = (1+z) e^{delta z} cos x1:
        # alpha = 1 + 2 eps E_z, beta = -2 eps grad E, gamma = eps (E_zz + Lap E) to O(eps^2)
        x1, _ = G.x
        z = G.z
        errs = []
        for eps in (1e-2, 5e-3):
            m = build_flattening(surface(lambda a, b: eps * np.cos(a)), "minus", delta=1.0)
            c = flatten_coefficients(m)
            e = np.exp(z)
            E = (1 + z) * e * np.cos(x1)[..., None]
            Ez = (1 + (1 + z)) * e * np.cos(x1)[..., None]
            Ezz = (2 + (1 + z)) * e * np.cos(x1)[..., None]
            E1 = -(1 + z) * e * np.sin(x1)[..., None]
            err = max(np.max(np.abs(c.alpha.values - (1 + 2 * eps * Ez))),
                      np.max(np.abs(c.beta[0].values + 2 * eps * E1)),
                      np.max(np.abs(c.beta[1].values)),
                      np.max(np.abs(c.gamma.values - eps * (Ezz - E))))
            errs.append(err)
        assert errs[0] < 1e-3
        assert errs[0] / errs[1] == pytest.approx(4, rel=0.1)

    @given(st.integers(0, 2**31 - 1))
    def test_defining_identity(self, seed):
        rng = np.random.default_rng(seed)
        g = Grid.make(16, 16, 25)
        x1, x2 = g.x
        a = rng.uniform(-0.15, 0.15, 3)
        f = a[0] * np.cos(x1) + a[1] * np.sin(x2) + a[2] * np.cos(x1 + x2)
        s = Surface(TorusScalar(f, g), 0.3)
        for side in SIDES:
            m = build_flattening(s, side)
            c = flatten_coefficients(m)
            # independent route: collocation z-derivatives of rho itself
            rz = m.rho @ g.dzt
            rzz = rz @ g.dzt
            r1, r2 = grad2(m.rho, g)
            lap = sum(grad2(d, g)[i] for i, d in enumerate((r1, r2)))
            rz1, rz2 = grad2(rz, g)
            lhs = c.gamma.values * rz
            rhs = rzz + c.alpha.values * lap + c.beta[0].values * rz1 + c.beta[1].values * rz2
            assert np.max(np.abs(lhs - rhs)) < 1e-10


class TestHarmonicCoordinates:
    def test_same_surface_is_identity(self):
        s = surface(lambda a, b: 0.2 * np.cos(a))
        hc = harmonic_coordinates(s, "minus", s.f)
        np.testing.assert_allclose(hc.values.values[2], build_flattening(s, "minus").rho, atol=1e-12)

    @pytest.mark.parametrize("side", SIDES)
    def test_flat_reference_analytic(self, side):
        eps = 0.05
        s = surface(lambda a, b: eps * np.cos(a))
        hc = harmonic_coordinates(s, side, TorusScalar.zeros(G), delta0=0.2)
        o = expected_sign(side)
        z = G.z
        chi = eps * np.cos(G.x[0])[..., None] * np.sinh(1 + z) / np.sinh(1)
        np.testing.assert_allclose(hc.values.values[2], o * z + chi, atol=1e-9)

    def test_positive_jacobian_and_inverse(self):
        s = surface(lambda a, b: 0.08 * np.cos(a) * np.sin(b))
        hc = harmonic_coordinates(s, "minus", TorusScalar.zeros(G), delta0=0.25)
        assert np.min(hc.jacobian_determinant()) > 0
        y3 = hc.reference.rho
        back = hc.invert(hc.values.values[2][..., 1:-1])
        np.testing.assert_allclose(back, y3[..., 1:-1], atol=1e-8)

    def test_delta0_neighbourhood(self):
        s = surface(lambda a, b: 0.05 * np.cos(2 * a))
        # sup 0.05 plus sup of the gradient 0.1
        assert w1inf_distance(s.f, TorusScalar.zeros(G), G) == pytest.approx(0.15)
        with pytest.raises(SurfaceError, match="delta0"):
            harmonic_coordinates(s, "minus", TorusScalar.zeros(G))
        harmonic_coordinates(s, "minus", TorusScalar.zeros(G), delta0=None)


class TestNormal:
    def test_flat(self):
        n = interface_normal(surface(lambda a, b: 0 * a))
        assert np.all(n[0].values == 0) and np.all(n[2].values == 1)

    def test_cosine(self):
        n = interface_normal(Surface(TorusScalar.from_function(lambda a, b: np.cos(a), G), 0.1,
                                     check=False))
        np.testing.assert_allclose(n[0].values, np.sin(G.x[0]), atol=1e-12)
        np.testing.assert_allclose(n[1].values, 0, atol=1e-12)

    @given(st.integers(0, 2**31 - 1))
    def test_projection_is_tangent(self, seed):
        rng = np.random.default_rng(seed)
        s = surface(lambda a, b: 0.3 * np.cos(a + 2 * b))
        h = tuple(rng.standard_normal(G.shape2) for _ in range(3))
        t = tangential_projection(h, s)
        n = interface_normal(s)
        assert np.max(np.abs(sum(t[i] * n[i].values for i in range(3)))) < 1e-12
