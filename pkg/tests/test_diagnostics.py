import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from cvsheet.diagnostics import (InterfaceTraces, NoLinearWindowError, dispersion, energy_es,
                                 growth_rate_fit, lambda_stability, metric_matrix, mode_amplitude,
                                 s2_form, sigma2, stable_planar, syrovatskii_check,
                                 tangent_from_direction, tangent_margin)
from cvsheet.fields import Grid, TorusScalar

vec2 = st.tuples(st.floats(-3, 3), st.floats(-3, 3))
G = Grid.make(16, 16)


def planar(jump, hp, hm, w=(0.0, 0.0)):
    v = 0.5 * np.asarray(jump, float)
    w = np.asarray(w, float)
    return InterfaceTraces.planar(w + v, w - v, hp, hm)


def brute_margin(hp, hm, v, n=20001):
    # the stability form sampled on the unit circle
    t = np.linspace(0, 2 * np.pi, n)
    phi = np.stack([np.cos(t), np.sin(t)])
    dot = lambda a: np.asarray(a, float)[:2] @ phi  # noqa: E731
    return float(np.min(dot(hp) ** 2 + dot(hm) ** 2 - 2 * dot(v) ** 2))


class TestLambda:
    def test_orthogonal_fields_no_jump(self):
        assert lambda_stability(planar((0, 0), (1, 0), (0, 1))).lambda_min == pytest.approx(1)

    def test_unstable_closed_form(self):
        rep = lambda_stability(planar((0, 2), (1, 0), (1, 0)))
        assert rep.lambda_min == pytest.approx(-2)
        np.testing.assert_allclose(np.abs(rep.worst_direction), [0, 1], atol=1e-12)

    @given(vec2, vec2)
    def test_current_sheet_always_positive(self, hp, hm):
        assume(abs(hp[0] * hm[1] - hp[1] * hm[0]) > 1e-3)
        assert lambda_stability(planar((0, 0), hp, hm)).lambda_min > 0

    @given(vec2, vec2, vec2)
    def test_matches_sampled_form(self, jump, hp, hm):
        rep = lambda_stability(planar(jump, hp, hm))
        brute = brute_margin(hp, hm, 0.5 * np.asarray(jump))
        scale = 1 + np.sum(np.square(hp)) + np.sum(np.square(hm)) + np.sum(np.square(jump))
        assert rep.lambda_min <= brute + 1e-12 * scale
        assert rep.lambda_min == pytest.approx(brute, abs=1e-6 * scale)

    @given(vec2, vec2, vec2)
    def test_hyperbolicity_link(self, jump, hp, hm):
        v = 0.5 * np.asarray(jump)
        rep = lambda_stability(planar(jump, hp, hm))
        # Lambda = -2 max over unit directions of sigma^2
        assert rep.lambda_min == pytest.approx(-2 * sigma2(v, hp, hm, rep.worst_direction), abs=1e-12 * (
            1 + np.sum(np.square(hp)) + np.sum(np.square(hm)) + np.sum(np.square(jump))))
        if abs(rep.lambda_min) > 1e-9:
            modes = [(a, b) for a in range(-4, 5) for b in range(0, 5) if (a, b) != (0, 0)]
            all_stable = all(r.sigma2 < 0 for r in dispersion(v, hp, hm, modes))
            if rep.lambda_min > 0:
                assert all_stable and stable_planar(v, hp, hm)
            else:
                assert not stable_planar(v, hp, hm)

    def test_half_velocity_variant_logged(self):
        rep = lambda_stability(planar((0, 2), (1, 0), (1, 0)))
        # coefficient 1/2 on (v . phi)^2 with v = (0, 1), at phi = (0, 1)
        assert rep.lambda_half_velocity == pytest.approx(-0.5)


class TestTangential:
    def test_flat_metric_is_identity(self):
        g11, g12, g22 = metric_matrix((0.0, 0.0))
        assert (g11, g12, g22) == (1.0, 0.0, 1.0)
        q = tangent_from_direction(np.array([0.6, 0.8]), (0.0, 0.0))
        np.testing.assert_allclose(q, [0.6, 0.8, 0.0])

    @given(vec2, vec2, vec2, st.floats(-1, 1), st.floats(-1, 1))
    def test_margin_matches_tangent_sampling(self, jump, hp2, hm2, f1, f2):
        # fields tangent to a sloped plane x3 = f1 x1 + f2 x2
        hp = np.array([hp2[0], hp2[1], f1 * hp2[0] + f2 * hp2[1]])
        hm = np.array([hm2[0], hm2[1], f1 * hm2[0] + f2 * hm2[1]])
        ju = np.array([jump[0], jump[1], f1 * jump[0] + f2 * jump[1]])
        tr = InterfaceTraces.planar(ju / 2, -ju / 2, hp, hm)
        t = np.linspace(0, 2 * np.pi, 20001)
        q = np.stack([np.cos(t), np.sin(t), f1 * np.cos(t) + f2 * np.sin(t)])
        q /= np.linalg.norm(q, axis=0)
        brute = float(np.min(s2_form(tr, q))) / 2
        scale = 1 + hp @ hp + hm @ hm + ju @ ju
        assert tangent_margin(tr, (f1, f2)) == pytest.approx(brute, abs=1e-6 * scale)

    @given(vec2, vec2, vec2)
    def test_s2_form_twice_lambda_form_on_flat(self, jump, hp, hm):
        tr = planar(jump, hp, hm)
        t = np.linspace(0, 2 * np.pi, 7)
        q = np.stack([np.cos(t), np.sin(t), 0 * t])
        v = 0.5 * np.asarray(jump)
        lam_form = -2 * np.array([sigma2(v, hp, hm, q[:2, i]) for i in range(q.shape[1])])
        np.testing.assert_allclose(s2_form(tr, q), 2 * lam_form, atol=1e-10 * (1 + np.max(np.abs(lam_form))))


class TestSyrovatskii:
    def test_current_sheet(self):
        flags = syrovatskii_check((0, 0, 0), (0, 0, 0), (1, 0, 0), (0.3, 1, 0))
        assert all(flags[k] for k in ("jump_bound", "cross_bound", "weak_strict"))

    def test_vortex_sheet_fails(self):
        flags = syrovatskii_check((1, 0, 0), (-1, 0, 0), (0, 0, 0), (0, 0, 0))
        assert not flags["jump_bound"]
        # with no field the cross products vanish on both sides
        assert flags["cross_bound"] and not flags["weak_strict"]

    @given(st.floats(-1, 1), st.floats(0, 2 * np.pi), vec2, vec2)
    def test_jump_in_span(self, r, ang, hp, hm):
        hp3, hm3 = np.array([*hp, 0.0]), np.array([*hm, 0.0])
        assume(abs(np.cross(hp3, hm3)[2]) > 1e-2)
        nu = 1.4 * r * np.array([np.cos(ang), np.sin(ang)])  # nu1^2 + nu2^2 < 2
        ju = nu[0] * hp3 + nu[1] * hm3
        flags = syrovatskii_check(ju, np.zeros(3), hp3, hm3)
        assert flags["cross_bound"] and flags["weak_strict"]


class TestDispersion:
    def test_pure_kh(self):
        r = dispersion((1, 0), (0, 0), (0, 0), [(1, 0)]).records[0]
        assert r.sigma2 == 1 and r.classification == "unstable" and r.growth_rate == 1

    def test_stabilized(self):
        r = dispersion((1, 0), (np.sqrt(2), 0), (np.sqrt(2), 0), [(1, 0)]).records[0]
        assert r.sigma2 == pytest.approx(-1) and r.classification == "stable"
        assert r.frequency == pytest.approx(1)

    def test_neutral(self):
        r = dispersion((1, 0), (2, 0), (-1, 0), [(0, 3)]).records[0]
        assert r.classification == "neutral" and r.sigma2 == 0 and r.frequency == 0

    def test_doppler(self):
        r = dispersion((0, 0), (1, 0), (0, 0), [(2, 1)], w=(0.5, 1.0)).records[0]
        assert r.doppler == pytest.approx(2.0)

    def test_rows(self):
        rows = dispersion((1, 0), (0, 0), (0, 0), [(1, 0), (0, 1)]).rows()
        assert [r["classification"] for r in rows] == ["unstable", "neutral"]


class TestEnergy:
    def test_zero_state(self):
        z = TorusScalar.zeros(G)
        rep = energy_es(z, z, planar((1, 0), (1, 0), (0, 1)), 1.0)
        assert rep.value == 0 and all(v == 0 for v in rep.terms.values())

    def test_magnetic_only(self):
        f = TorusScalar.from_function(lambda a, b: np.cos(a), G)
        rep = energy_es(f, TorusScalar.zeros(G), planar((0, 0), (1, 0), (1, 0)), 0.0)
        # 1/2 |d1 f|^2 twice = |sin x1|^2 = 2 pi^2
        assert rep.value == pytest.approx(2 * np.pi**2, rel=1e-12)

    def test_negative_when_unstable(self):
        tr = planar((0, 2), (1, 0), (1, 0))
        d = lambda_stability(tr).worst_direction
        f = TorusScalar.from_function(lambda a, b: np.cos(round(d[0]) * a + round(d[1]) * b), G)
        rep = energy_es(f, TorusScalar.zeros(G), tr, 0.0)
        assert rep.value < 0 and not rep.holds

    @given(st.integers(0, 2**31 - 1))
    def test_equivalence_bounds_when_stable(self, seed):
        rng = np.random.default_rng(seed)
        hat = (rng.standard_normal((16, 9)) + 1j * rng.standard_normal((16, 9))) * (G.kabs < 5)
        f = TorusScalar.from_spectral(hat, G)
        th = TorusScalar.from_spectral(np.roll(hat, 1, axis=0), G)
        rep = energy_es(f, th, planar((1, 0), (2, 0), (0, 2), w=(0.3, -0.2)), 1.0)
        assert rep.holds and rep.lower <= rep.value + rep.lower_order <= rep.upper


class TestGrowthFit:
    t = np.linspace(0, 10, 101)

    def test_exact_exponential(self):
        assert growth_rate_fit(self.t, np.exp(0.5 * self.t)) == pytest.approx(0.5, abs=1e-6)

    def test_noisy(self):
        noise = 1 + 0.01 * np.random.default_rng(3).standard_normal(self.t.size)
        assert growth_rate_fit(self.t, np.exp(0.5 * self.t) * noise) == pytest.approx(0.5, abs=0.01)

    def test_oscillation_has_no_window(self):
        with pytest.raises(NoLinearWindowError, match="reduce the perturbation"):
            growth_rate_fit(self.t, 1.0 + 0.9 * np.cos(3 * self.t))

    def test_saturation_excluded(self):
        a = np.minimum(1e-6 * np.exp(0.5 * self.t), 1e-4)
        fit = growth_rate_fit(self.t, a, details=True)
        # the 2 % residual allowance admits a few points past the knee at index 92
        assert fit.rate == pytest.approx(0.5, abs=5e-3)
        assert fit.window[1] <= 97


def test_mode_amplitude_conjugate_half():
    g = TorusScalar.from_function(lambda a, b: np.cos(2 * a - b) + 3 * np.sin(b), G)
    assert mode_amplitude(g, (2, -1)) == pytest.approx(0.5)
    assert mode_amplitude(g, (-2, 1)) == pytest.approx(0.5)
    assert mode_amplitude(g, (0, 1)) == pytest.approx(-1.5j)
