import numpy as np
import pytest
import sympy as sp
from hypothesis import given
from hypothesis import strategies as st

from cvsheet.diagnostics import sigma2
from cvsheet.dynamics import (BulkState, InterfaceState, Model, PicardInfo, State, integrate,
                              picard_map, planar_state, recover_fields, step_rk4, theta_rhs,
                              trajectory_distance, trajectory_from_states, vorticity_rhs)
from cvsheet.errors import CFLError, SurfaceError
from cvsheet.fields import SIDES, Grid, StripVector, TorusScalar

G = Grid.make(16, 16, 9)
MAGNETIZED = dict(u_plus=(1, 0), u_minus=(-1, 0), h_plus=(2, 0), h_minus=(0, 2))


def col(a):
    return np.asarray(a)[..., None]


@pytest.fixture(scope="module")
def wavy_state():
    return planar_state(G, **MAGNETIZED, amplitude=0.05, mode=(1, 1))


class TestRecovery:
    def test_zero(self):
        m = Model(G, 0.1)
        z = TorusScalar.zeros(G)
        snap = recover_fields(m, InterfaceState(z, z), BulkState.zeros(G))
        for s in SIDES:
            assert np.all(snap.u[s] == 0) and np.all(snap.h[s] == 0)

    def test_lid_mean_branch(self):
        m = Model(G, 0.1)
        z = TorusScalar.zeros(G)
        bulk = BulkState.zeros(G)
        bulk.beta["plus"][:] = (1.0, 0.0)
        snap = recover_fields(m, InterfaceState(z, z), bulk)
        np.testing.assert_allclose(snap.u["plus"], StripVector.constant([1, 0, 0], G, "plus").values,
                                   atol=1e-14)
        assert np.all(snap.u["minus"] == 0)

    def test_planar_constants(self):
        m = Model(G, 0.1)
        st0 = planar_state(G, (0.3, -1), (2, 0.5), (1, 1), (-0.5, 2))
        snap = m.recover_fields(st0.iface, st0.bulk, check=True)
        for s, u, h in (("plus", (0.3, -1), (1, 1)), ("minus", (2, 0.5), (-0.5, 2))):
            np.testing.assert_allclose(snap.u[s], StripVector.constant([*u, 0], G, s).values, atol=1e-14)
            np.testing.assert_allclose(snap.h[s], StripVector.constant([*h, 0], G, s).values, atol=1e-14)

    def test_degenerate_surface_refused(self):
        m = Model(G, 0.2)
        st0 = planar_state(G, (0, 0), (0, 0), (0, 0), (0, 0), amplitude=0.85, mode=(1, 0))
        with pytest.raises(SurfaceError):
            m.recover_fields(st0.iface, st0.bulk)

    def test_pack_round_trip(self, wavy_state):
        back = State.unpack(wavy_state.t, wavy_state.pack(), G)
        for k, v in wavy_state.pack().items():
            assert np.array_equal(back.pack()[k], v)


class TestInterface:
    def test_equilibrium_is_zero(self):
        m = Model(G, 0.1)
        st0 = planar_state(G, **MAGNETIZED)
        snap = m.recover_fields(st0.iface, st0.bulk)
        assert np.max(np.abs(theta_rhs(m, st0.iface, snap).values)) < 1e-14

    @pytest.mark.parametrize("k", [1, 2])
    def test_kelvin_helmholtz_curvature_term(self, k):
        # theta = 0, u = (+-1, 0, 0): d_t theta = sigma^2(D) f to first order in eps
        eps = 1e-5
        m = Model(G, 0.1)
        st0 = planar_state(G, (1, 0), (-1, 0), (0, 0), (0, 0), amplitude=eps, mode=(k, 0),
                           theta_mode="rest")
        assert np.all(st0.iface.theta.values == 0)
        out = theta_rhs(m, st0.iface, m.recover_fields(st0.iface, st0.bulk)).values
        expected = k**2 * eps * np.cos(k * G.x[0])
        assert np.max(np.abs(out - expected)) <= 1e-3 * np.max(np.abs(expected))

    @pytest.mark.parametrize("H", [0.5, 1.5])
    def test_magnetic_sign_flip(self, H):
        eps, k = 1e-5, 2
        m = Model(G, 0.1)
        st0 = planar_state(G, (0, 1), (0, -1), (0, H), (0, H), amplitude=eps, mode=(0, k),
                           theta_mode="rest")
        out = theta_rhs(m, st0.iface, m.recover_fields(st0.iface, st0.bulk)).values
        s2 = sigma2((0, 1), (0, H), (0, H), (0, k))
        assert np.sign(s2) == (1 if H < 1 else -1)
        expected = s2 * eps * np.cos(k * G.x[1])
        assert np.max(np.abs(out - expected)) <= 1e-3 * np.max(np.abs(expected))

    def test_compact_and_expanded_forms_agree(self, wavy_state):
        m = Model(G, 0.1)
        snap = m.recover_fields(wavy_state.iface, wavy_state.bulk)
        a = m.theta_rhs(wavy_state.iface, snap, form="expanded").values
        b = m.theta_rhs(wavy_state.iface, snap, form="compact").values
        assert np.max(np.abs(a - b)) <= 1e-8 * np.max(np.abs(a))
        assert abs(a.mean()) < 1e-15


class TestBulk:
    def test_constant_fields(self):
        m = Model(G, 0.1)
        st0 = planar_state(G, **MAGNETIZED)
        snap = m.recover_fields(st0.iface, st0.bulk)
        dw, dj = vorticity_rhs(m, st0.iface, st0.bulk, snap)
        for s in SIDES:
            assert np.all(dw[s] == 0) and np.all(dj[s] == 0)

    def test_euler_stretching_against_sympy(self):
        # u = ((z+1)^2 cos x2, (z+1)^2 cos x1, 0) below a flat interface, h = 0
        X1, X2, X3 = sp.symbols("x1 x2 x3")
        xs = (X1, X2, X3)
        u = sp.Matrix([(X3 + 1) ** 2 * sp.cos(X2), (X3 + 1) ** 2 * sp.cos(X1), 0])
        w = sp.Matrix([sp.diff(u[2], X2) - sp.diff(u[1], X3), sp.diff(u[0], X3) - sp.diff(u[2], X1),
                       sp.diff(u[1], X1) - sp.diff(u[0], X2)])
        rhs = [sum(-u[j] * sp.diff(w[i], xs[j]) + w[j] * sp.diff(u[i], xs[j]) for j in range(3))
               for i in range(3)]
        x1, x2 = col(G.x[0]), col(G.x[1])
        z = G.z

        def ev(e):
            return np.broadcast_to(sp.lambdify(xs, e, "numpy")(x1, x2, z), G.shape3)

        omega = {s: StripVector.zeros(G, s) for s in SIDES}
        omega["minus"] = StripVector(np.stack([ev(c) for c in w]), G, "minus")
        bulk = BulkState(omega, {s: StripVector.zeros(G, s) for s in SIDES},
                         {s: np.zeros(2) for s in SIDES}, {s: np.zeros(2) for s in SIDES})
        zero = TorusScalar.zeros(G)
        iface = InterfaceState(zero, zero)
        m = Model(G, 0.1)
        snap = m.recover_fields(iface, bulk, check=True)
        np.testing.assert_allclose(snap.u["minus"], np.stack([ev(c) for c in u]), atol=1e-9)
        dw, dj = vorticity_rhs(m, iface, bulk, snap)
        np.testing.assert_allclose(dw["minus"], np.stack([ev(c) for c in rhs]), atol=1e-8)
        assert np.max(np.abs(dj["minus"])) < 1e-12

    def test_alfvenic_state_is_stationary(self):
        # omega = j and equal lid means give u = h: transport and stretching
        # cancel pairwise and the source sum of grad u_i x grad u_i is zero
        x1, x2 = col(G.x[0]), col(G.x[1])
        y = G.z + 1
        w = np.stack([-2 * y * np.cos(x1) + 0 * x2, 2 * y * np.cos(x2) + 0 * x1,
                      y**2 * (np.sin(x2) - np.sin(x1))])
        om = {"minus": StripVector(w, G, "minus"), "plus": StripVector.zeros(G, "plus")}
        bulk = BulkState(om, dict(om), {s: np.array([0.2, 0.0]) for s in SIDES},
                         {s: np.array([0.2, 0.0]) for s in SIDES})
        zero = TorusScalar.zeros(G)
        iface = InterfaceState(zero, zero)
        m = Model(G, 0.1)
        snap = m.recover_fields(iface, bulk)
        np.testing.assert_allclose(snap.u["minus"], snap.h["minus"], atol=1e-13)
        dw, dj = vorticity_rhs(m, iface, bulk, snap)
        assert np.max(np.abs(snap.u["minus"])) > 0.5
        assert np.max(np.abs(dw["minus"])) < 1e-10
        assert np.max(np.abs(dj["minus"])) < 1e-10

    class _Lid:
        def __init__(self, u, h):
            self.u, self.h = u, h

        def lid_trace(self, name, side):
            return self.u if name == "u" else self.h

    @pytest.mark.parametrize("u2", [lambda a, b: 0 * a, lambda a, b: np.cos(a)])
    def test_lid_means(self, u2):
        x1, x2 = G.x
        u = np.stack([np.sin(x2), u2(x1, x2), 0 * x1])
        m = Model(G, 0.1)
        dbeta, dgamma = m.boundary_average_rhs(self._Lid(u, np.zeros_like(u)))
        for s in SIDES:
            np.testing.assert_allclose(dbeta[s], 0, atol=1e-14)
            np.testing.assert_allclose(dgamma[s], 0, atol=1e-14)

    def test_lid_means_nonzero_case(self):
        # u = (cos x1, sin x1, 0), h = 0: d beta_1 = -mean(u1 d1 u1) = 0,
        # d beta_2 = -mean(u1 d1 u2) = -mean(cos^2 x1) = -1/2
        x1, _ = G.x
        u = np.stack([np.cos(x1), np.sin(x1), 0 * x1])
        m = Model(G, 0.1)
        dbeta, _ = m.boundary_average_rhs(self._Lid(u, np.zeros_like(u)))
        np.testing.assert_allclose(dbeta["plus"], [0, -0.5], atol=1e-14)


class TestStepping:
    def test_equilibrium_fixed_point(self):
        m = Model(G, 0.1)
        state = planar_state(G, **MAGNETIZED)
        y0 = state.pack()
        for _ in range(100):
            state, _ = step_rk4(m, state, 0.05)
        for k, v in state.pack().items():
            assert np.max(np.abs(v - y0[k])) <= 1e-10
        assert state.t == pytest.approx(5.0)

    def test_cfl_refusal(self, wavy_state):
        m = Model(G, 0.1)
        snap = m.recover_fields(wavy_state.iface, wavy_state.bulk)
        dt_max = m.cfl_dt(snap)
        with pytest.raises(CFLError, match="CFL") as exc:
            m.step_rk4(wavy_state, 2 * dt_max)
        assert exc.value.dt_max == pytest.approx(dt_max)

    def test_means_and_lid_flux(self, wavy_state):
        m = Model(G, 0.1)
        state = wavy_state
        f0 = state.iface.f.mean()
        for _ in range(3):
            state, info = m.step_rk4(state, 0.02)
            assert abs(state.iface.f.mean() - f0) <= 1e-12
            assert abs(state.iface.theta.mean()) <= 1e-10
            assert max(abs(v) for v in info.lid_flux_post.values()) < 1e-14
        snap = m.recover_fields(state.iface, state.bulk, check=True)
        res = m.normal_residuals(snap)
        assert max(res.values()) < 1e-8

    def test_kelvin_helmholtz_growth(self):
        g = Grid.make(16, 8, 9)
        m = Model(g, 0.1)
        st0 = planar_state(g, (0.5, 0), (-0.5, 0), (0, 0), (0, 0), amplitude=1e-6, mode=(1, 0))
        traj = integrate(m, st0, 2.0, 10)
        amp = [abs(s.iface.f.spectral[1, 0]) for s in traj.states]
        rate = np.log(amp[-1] / amp[0]) / 2.0
        assert rate == pytest.approx(0.5, rel=0.05)

    def test_residuals_vanish_at_equilibrium(self):
        m = Model(G, 0.1)
        s0 = planar_state(G, **MAGNETIZED)
        traj = integrate(m, s0, 0.1, 2)
        res = m.residual_momentum(*traj.snapshots, 0.05)
        assert max(res.values()) <= 1e-8


class TestPicard:
    def test_equilibrium_trajectory_fixed(self):
        m = Model(G, 0.1)
        traj = integrate(m, planar_state(G, **MAGNETIZED), 0.02, 4)
        assert trajectory_distance(picard_map(m, traj), traj) <= 1e-8

    def test_first_pass_is_second_order(self, wavy_state):
        m = Model(G, 0.1)
        gaps = []
        for T in (0.02, 0.01):
            ref = integrate(m, wavy_state, T, 4)
            frozen = trajectory_from_states(m, ref.times, [wavy_state] * 5)
            info = PicardInfo()
            gaps.append(trajectory_distance(picard_map(m, frozen, info), ref))
            assert info.clamped == 0
        assert gaps[0] / gaps[1] >= 3


@given(st.floats(0.1, 1.0), st.floats(-0.5, 0.5))
def test_planar_state_has_requested_mode(amp, mean):
    st0 = planar_state(G, (1, 0), (-1, 0), (0, 0), (0, 0), amplitude=amp * 0.1, mode=(2, 1), f_mean=mean)
    f = st0.iface.f
    assert f.mean() == pytest.approx(mean)
    assert abs(f.spectral[2, 1]) == pytest.approx(0.05 * amp)
    assert abs(st0.iface.theta.mean()) < 1e-15
