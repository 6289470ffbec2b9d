import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st

from stabkit.errors import (DimensionError, GaugeError, NonFiniteError,
                            SingularGaugeError, SystemFormatError)
from stabkit.operators import (ControlSystem, adjoint, dumps_system,
                               fractional_power, fractional_power_matrix,
                               graded_norm, loads_system, semigroup_apply,
                               shift_state_space, spectral_abscissa)


def sys_of(A, B=None, **kw):
    A = np.atleast_2d(np.asarray(A, dtype=complex))
    if B is None:
        B = np.ones((A.shape[0], 1))
    return ControlSystem(A, B, **kw)


def random_system(rng, n, m=1, gamma=0.0):
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    B = rng.standard_normal((n, m)) + 1j * rng.standard_normal((n, m))
    return ControlSystem(A, B, gamma=gamma)


# -- construction ------------------------------------------------------------

def test_default_gauge_is_abscissa_plus_one():
    s = sys_of(np.diag([-1.0, 2.0]))
    assert s.rho0 == pytest.approx(3.0)


def test_gauge_must_exceed_abscissa():
    with pytest.raises(GaugeError):
        sys_of(np.diag([-1.0, 2.0]), rho0=2.0)


def test_shape_and_finiteness_checks():
    with pytest.raises(DimensionError):
        ControlSystem(np.zeros((2, 3)), np.ones((2, 1)))
    with pytest.raises(DimensionError):
        ControlSystem(np.zeros((2, 2)), np.ones((3, 1)))
    with pytest.raises(NonFiniteError):
        ControlSystem(np.array([[np.nan]]), np.ones((1, 1)))
    with pytest.raises(ValueError):
        ControlSystem(np.zeros((1, 1)), np.ones((1, 1)), gamma=1.0)


def test_system_is_immutable():
    s = sys_of([[0.0]])
    with pytest.raises(ValueError):
        s.A[0, 0] = 1.0


# -- semigroup -----------------------------------------------------------------

def test_semigroup_examples():
    assert np.allclose(semigroup_apply(sys_of([[0.0]]), 7, [1.0]), [1.0])
    assert np.allclose(semigroup_apply(sys_of([[-1.0]]), 1, [1.0]), [np.exp(-1)])
    nil = sys_of([[0.0, 1.0], [0.0, 0.0]])
    out = semigroup_apply(nil, 1.0, [0.0, 1.0])
    # scaling-and-squaring oracle
    assert np.allclose(out, sla.expm(nil.A) @ [0, 1], atol=1e-14)
    assert np.allclose(out, [1.0, 1.0], atol=1e-14)


def test_semigroup_negative_time_inverts():
    rng = np.random.default_rng(1)
    s = random_system(rng, 5)
    x = rng.standard_normal(5)
    back = semigroup_apply(s, -0.7, semigroup_apply(s, 0.7, x))
    assert np.allclose(back, x, atol=1e-10)


def test_semigroup_errors():
    s = sys_of([[0.0]])
    with pytest.raises(DimensionError):
        semigroup_apply(s, 1.0, [1.0, 2.0])
    with pytest.raises(NonFiniteError):
        semigroup_apply(s, np.inf, [1.0])
    with pytest.raises(NonFiniteError):
        semigroup_apply(s, 1.0, [np.nan])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 16),
       st.floats(0, 2), st.floats(0, 2))
def test_semigroup_law(seed, n, t, s_):
    rng = np.random.default_rng(seed)
    s = random_system(rng, n)
    x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    lhs = semigroup_apply(s, t + s_, x)
    rhs = semigroup_apply(s, t, semigroup_apply(s, s_, x))
    assert np.linalg.norm(lhs - rhs) <= 1e-8 * max(1.0, np.linalg.norm(lhs))


# -- fractional powers -------------------------------------------------------

def test_fractional_power_examples():
    assert np.allclose(fractional_power(sys_of(np.diag([-3.0]), rho0=1), 0.5), [[2.0]])
    s = sys_of(np.diag([-1.0, -4.0]), rho0=0)
    # log/exp oracle
    oracle = np.diag(np.exp(0.75 * np.log([1.0, 4.0])))
    assert np.allclose(fractional_power(s, 0.75), oracle, atol=1e-14)
    assert np.allclose(fractional_power(s, 0.0), np.eye(2))


def test_fractional_power_jordan_block_uses_schur_path():
    A = np.array([[-1.0, 1.0], [0.0, -1.0]])
    s = sys_of(A, rho0=0.0)
    R = -A
    half = fractional_power(s, 0.5)
    assert np.allclose(half @ half, R, atol=1e-12)
    # closed form for a Jordan block: sqrt(1 + N) = 1 + N/2
    assert np.allclose(half, [[1.0, -0.5], [0.0, 1.0]], atol=1e-12)


def test_branch_cut_raises():
    with pytest.raises(SingularGaugeError):
        fractional_power_matrix(np.diag([1.0, -2.0]), 0.5)
    with pytest.raises(SingularGaugeError):
        fractional_power_matrix(np.zeros((1, 1)), -0.5)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 10),
       st.floats(-1, 1), st.floats(-1, 1))
def test_fractional_power_composition(seed, n, a, b):
    rng = np.random.default_rng(seed)
    s = random_system(rng, n)
    Pa, Pb, Pab = (fractional_power(s, e) for e in (a, b, a + b))
    scale = max(1.0, np.linalg.norm(Pa) * np.linalg.norm(Pb))
    assert np.linalg.norm(Pa @ Pb - Pab) <= 1e-8 * scale


# -- graded norms --------------------------------------------------------------

def test_graded_norm_examples():
    assert graded_norm(sys_of(np.diag([-1.0, -2.0])), [3.0, 4.0], 0) == pytest.approx(5.0)
    assert graded_norm(sys_of(np.diag([-3.0]), rho0=1), [8.0], -1) == pytest.approx(2.0)
    s = sys_of(np.diag([-1.0, -4.0]), rho0=0)
    assert graded_norm(s, [1.0, 1.0], 0.5) == pytest.approx(np.sqrt(5.0))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 8))
def test_graded_norm_negative_grade_bound(seed, n):
    rng = np.random.default_rng(seed)
    lam = -rng.uniform(0.1, 5, n) + 1j * rng.uniform(-3, 3, n)
    V = rng.standard_normal((n, n)) + np.eye(n) * 3
    A = V @ np.diag(lam) @ np.linalg.inv(V)
    s = ControlSystem(A, np.ones((n, 1)), rho0=0.0)
    x = rng.standard_normal(n)
    C = np.linalg.norm(np.linalg.inv(-A), 2)
    assert graded_norm(s, x, -1) <= C * graded_norm(s, x, 0) * (1 + 1e-10)


# -- shift -----------------------------------------------------------------------

def test_shift_identity_below_half():
    rng = np.random.default_rng(3)
    s = random_system(rng, 4, 2, gamma=0.3)
    sh = shift_state_space(s)
    assert np.array_equal(sh.A_shift, s.A)
    assert np.array_equal(sh.Bstar_shift, s.B.conj().T)
    assert sh.isometric_system() is s


def test_shift_commuting_case():
    s = sys_of(np.diag([-1.0, -3.0, 2.0]), gamma=0.6)
    sh = shift_state_space(s)
    assert np.allclose(sh.A_shift, s.A, atol=1e-12)
    R = s.resolvent_gauge
    assert np.allclose(sh.Bstar_shift, s.B.conj().T @ np.linalg.inv(R), atol=1e-12)


def test_shift_preserves_spectrum_example():
    s = ControlSystem([[-1.0, 1.0], [0.0, -2.0]], [[0.0], [1.0]], gamma=0.6)
    ev = np.sort_complex(np.linalg.eigvals(shift_state_space(s).A_shift))
    assert np.allclose(ev, [-2.0, -1.0], atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 8), st.floats(0.5, 0.99))
def test_shift_similarity(seed, n, gamma):
    rng = np.random.default_rng(seed)
    s = random_system(rng, n, gamma=gamma)
    sh = shift_state_space(s)
    e1 = np.sort_complex(np.linalg.eigvals(s.A))
    e2 = np.sort_complex(np.linalg.eigvals(sh.A_shift))
    assert np.allclose(e1, e2, atol=1e-8 * max(1, np.abs(e1).max()))
    # isometric pair is similar as well
    e3 = np.sort_complex(np.linalg.eigvals(sh.A_iso))
    assert np.allclose(e1, e3, atol=1e-8 * max(1, np.abs(e1).max()))


def test_gain_to_raw_preserves_closed_loop_spectrum():
    rng = np.random.default_rng(4)
    s = random_system(rng, 5, 2, gamma=0.7)
    sh = shift_state_space(s)
    K_iso = rng.standard_normal((2, 5))
    e_iso = np.sort_complex(np.linalg.eigvals(sh.A_iso + sh.B_iso @ K_iso))
    e_raw = np.sort_complex(np.linalg.eigvals(s.A + s.B @ sh.gain_to_raw(K_iso)))
    assert np.allclose(e_iso, e_raw, atol=1e-8)


# -- adjoint, abscissa ----------------------------------------------------------

def test_adjoint_examples():
    S = np.array([[2.0, 1.0], [1.0, -3.0]])
    assert np.array_equal(adjoint(sys_of(S)).Astar, S)
    d = adjoint(sys_of([[0.0, 1.0], [0.0, 0.0]]))
    assert np.array_equal(d.Astar, [[0, 0], [1, 0]])
    rng = np.random.default_rng(5)
    s = random_system(rng, 6, 2)
    assert adjoint(adjoint(s)) == s
    with pytest.raises(TypeError):
        adjoint(np.eye(2))


def test_spectral_abscissa_examples():
    assert spectral_abscissa(np.diag([-1.0, -2.0])) == pytest.approx(-1.0)
    assert spectral_abscissa([[0.0, 1.0], [-1.0, 0.0]]) == pytest.approx(0.0, abs=1e-14)
    rng = np.random.default_rng(6)
    A = rng.standard_normal((8, 8))
    roots = np.roots(np.poly(A))
    assert spectral_abscissa(A) == pytest.approx(roots.real.max(), abs=1e-8)


# -- structured text -----------------------------------------------------------

def test_system_roundtrip_is_exact():
    rng = np.random.default_rng(7)
    s = random_system(rng, 5, 3, gamma=0.55)
    s2 = loads_system(dumps_system(s))
    assert np.array_equal(s2.A, s.A) and np.array_equal(s2.B, s.B)
    assert s2.gamma == s.gamma and s2.rho0 == s.rho0


def test_malformed_system_reports_line():
    text = dumps_system(sys_of([[-1.0]])).splitlines()
    text[3] = text[3] + ",,"
    with pytest.raises(SystemFormatError, match=r"line 4"):
        loads_system("\n".join(text))


def test_missing_field_reported():
    with pytest.raises(SystemFormatError, match="missing field 'B'"):
        loads_system('{"n": 1, "m": 1, "A": [[[0, 0]]]}')
