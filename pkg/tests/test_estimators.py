import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from gnndr import channels as ch
from gnndr.errors import DegeneratePosteriorError, InvalidArgumentError, InvalidStateError, UnstableWeightsError
from gnndr.estimators import (
    OnebitFixedEngine, conditional_omega_mean, gaussian_moments, lmmse_stats, make_engine,
    moments_closed_form_gaussian, moments_onebit_quadrature, moments_pilot_snis, onebit_lmmse_closed_form,
    pilot_lmmse_closed_form, pilot_moments_radial,
)
from gnndr.mathkernel import Rng, gauss_hermite

INP = ch.GaussianInputSpec(1.0)
S2 = ch.default_fixed_state(2)


# Gaussian ------------------------------------------------------------------

def test_gaussian_uninformative():
    m = moments_closed_form_gaussian([0.0], 1.0, 2.0, [1.3 - 0.2j])
    assert m.mean == 0 and m.omega == pytest.approx(2.0)


def test_gaussian_scalar_value():
    m = moments_closed_form_gaussian([1.0], 1.0, 1.0, [2.0])
    assert m.mean == pytest.approx(1.0) and m.omega == pytest.approx(0.5)


def test_gaussian_against_planar_quadrature():
    # p(x|y) on a tensor Gauss-Hermite grid in the prior's own coordinates
    s, s2, P, y = np.array([0.6 + 0.2j, -0.3j]), 0.7, 1.5, np.array([0.4 + 1.1j, 0.2 - 0.5j])
    t1, t2, w = gauss_hermite(96).tensor2()
    x = math.sqrt(P) * (t1 + 1j * t2)
    ll = -np.sum(np.abs(y[None, :] - x[:, None] * s[None, :]) ** 2, axis=1) / s2
    wt = w * np.exp(ll - ll.max())
    mean = np.sum(wt * x) / wt.sum()
    second = np.sum(wt * np.abs(x) ** 2) / wt.sum()
    m = moments_closed_form_gaussian(s, s2, P, y)
    assert m.mean == pytest.approx(mean, abs=1e-10)
    assert m.omega == pytest.approx(second - abs(mean) ** 2, abs=1e-10)


def test_gaussian_noiseless_limit():
    assert moments_closed_form_gaussian([1e4], 1.0, 1.0, [1.0]).omega < 1e-7


@given(st.integers(1, 5), st.floats(0.05, 5), st.floats(0.1, 4), st.integers(0, 2**31))
def test_gaussian_batched_matches_dense(p, s2, P, seed):
    gen = np.random.default_rng(seed)
    S = gen.normal(size=(3, p)) + 1j * gen.normal(size=(3, p))
    Y = gen.normal(size=(3, p)) + 1j * gen.normal(size=(3, p))
    mean, second, omega = gaussian_moments(S, Y, s2, P)
    for k in range(3):
        C = P * np.outer(S[k], S[k].conj()) + s2 * np.eye(p)
        want = P * S[k].conj() @ np.linalg.solve(C, Y[k])
        assert mean[k] == pytest.approx(want, abs=1e-9)
        assert omega[k] == pytest.approx(P - P**2 * np.real(S[k].conj() @ np.linalg.solve(C, S[k])), abs=1e-9)
        assert 0 < omega[k] <= P


# One-bit -------------------------------------------------------------------

def test_onebit_single_antenna_symmetry():
    spec = ch.ChannelSpec.linear([1.0], 1.0, ch.ONE_BIT)
    m = moments_onebit_quadrature(spec, INP, [1 + 1j])
    assert m.mean.real == pytest.approx(m.mean.imag, abs=1e-12)
    means = np.array([moments_onebit_quadrature(spec, INP, y).mean for y in ch.onebit_patterns(1)])
    pmf = OnebitFixedEngine(spec, INP).pmf.ravel()
    assert abs(np.sum(pmf * means)) < 1e-12


def test_onebit_moments_against_counting_oracle():
    spec = ch.ChannelSpec.linear(S2, 1.0, ch.ONE_BIT)
    cnt, s1, s2 = oracles.onebit_pattern_stats(S2, 1.0, 1.0, 4 * 10**6, seed=11, batches=1)
    cnt, s1, s2 = cnt[0], s1[0], s2[0]
    pats = ch.onebit_patterns(2)
    for k in range(16):
        m = moments_onebit_quadrature(spec, INP, pats[k])
        mc = s1[k] / cnt[k]
        var = s2[k] / cnt[k] - abs(mc) ** 2
        se = math.sqrt(var / cnt[k])
        assert abs(m.mean - mc) < 4 * se
        assert cnt[k] / cnt.sum() == pytest.approx(
            OnebitFixedEngine(spec, INP).pmf.ravel()[k], abs=5 * math.sqrt(0.07 / cnt.sum()))


def test_onebit_polar_and_hermite_agree_at_low_snr():
    spec = ch.ChannelSpec.linear(S2, 1.0, ch.ONE_BIT)
    a = OnebitFixedEngine(spec, INP, rule="polar")
    b = OnebitFixedEngine(spec, INP, 96, rule="hermite")
    assert np.allclose(a.omega, b.omega, atol=1e-7)


@pytest.mark.parametrize("snr_db", [0.0, 20.0, 30.0])
def test_onebit_line_rule_matches_polar_without_dither(snr_db):
    spec = ch.ChannelSpec.linear(S2, 10 ** (-snr_db / 10), ch.ONE_BIT)
    a = OnebitFixedEngine(spec, INP, rule="polar")
    b = OnebitFixedEngine(spec, INP, rule="lines")
    assert np.allclose(a.pmf, b.pmf, atol=1e-9)
    assert np.allclose(a.omega, b.omega, atol=1e-6)


def test_onebit_polar_rejects_dither():
    with pytest.raises(InvalidArgumentError):
        OnebitFixedEngine(ch.ChannelSpec.linear(S2, 1.0, ch.dithered(1.0)), INP, rule="polar")


@pytest.mark.parametrize("alpha,snr_db", [(1.0, 20.0), (0.5, 30.0)])
def test_dithered_tables_against_counting_oracle(alpha, snr_db):
    spec = ch.ChannelSpec.linear(S2, 10 ** (-snr_db / 10), ch.dithered(alpha))
    eng = OnebitFixedEngine(spec, INP)
    b = ch.dither_vector(spec, INP).b
    cnt, s1, s2 = oracles.onebit_pattern_stats(S2, spec.noise_power, 1.0, 4 * 10**6, seed=5, batches=1, dither=b)
    cnt, s1, s2 = cnt[0], s1[0], s2[0]
    n = cnt.sum()
    assert np.all(np.abs(cnt / n - eng.pmf) <= 5 * np.sqrt(eng.pmf * (1 - eng.pmf) / n) + 1e-7)
    for k in np.flatnonzero(cnt >= 2000):
        mc = s1[k] / cnt[k]
        sd = math.sqrt((s2[k] / cnt[k] - abs(mc) ** 2) / cnt[k])
        assert abs(eng.mean[k] - mc) < 5 * sd


def test_onebit_rejects_bad_input():
    spec = ch.ChannelSpec.linear(S2, 1.0, ch.ONE_BIT)
    with pytest.raises(InvalidArgumentError):
        moments_onebit_quadrature(spec, INP, [0.5 + 1j, 1 + 1j])
    with pytest.raises(InvalidArgumentError):
        moments_onebit_quadrature(spec, INP, [1 + 1j, 1 + 1j], rule=gauss_hermite(8))
    with pytest.raises(InvalidStateError):
        moments_onebit_quadrature(ch.ChannelSpec.linear(S2, 1.0), INP, [1 + 1j, 1 + 1j])


def test_onebit_degenerate_pattern():
    # at tiny noise and a real state, an output with mismatched signs across identical antennas is impossible
    spec = ch.ChannelSpec.linear([1.0, 1.0], 1e-8, ch.ONE_BIT)
    with pytest.raises(DegeneratePosteriorError):
        moments_onebit_quadrature(spec, INP, [1 + 1j, -1 - 1j])


def test_onebit_fading_omega_bounded_and_equivariant():
    spec = ch.ChannelSpec.fading(2, 0.3, quantizer=ch.ONE_BIT)
    eng = make_engine(spec, INP)
    u = eng.sample(5000, Rng(5))
    mean, _, omega = eng.moments(u.y, u.v)
    assert np.all(omega <= INP.power + 1e-9) and np.all(omega >= 0)
    # negating the real parts of y and s maps x to conj(x)
    flip = lambda a: -a.conj()  # noqa: E731
    m2, _, om2 = eng.moments(flip(u.y[:200]), flip(u.v[:200]))
    assert np.allclose(m2, mean[:200].conj(), atol=1e-9)
    assert np.allclose(om2, omega[:200], atol=1e-9)


def test_onebit_fading_matches_fixed_engine():
    spec = ch.ChannelSpec.fading(2, 0.5, quantizer=ch.ONE_BIT)
    s = np.array([0.3 + 0.8j, -1.1 + 0.1j])
    fixed = OnebitFixedEngine(ch.ChannelSpec.linear(s, 0.5, ch.ONE_BIT), INP)
    pats = ch.onebit_patterns(2)
    mean, _, omega = make_engine(spec, INP).moments(pats, np.tile(s, (16, 1)))
    assert np.allclose(omega, fixed.omega.ravel(), atol=1e-6)
    assert np.allclose(mean, fixed.mean.ravel(), atol=1e-6)


# Pilot -----------------------------------------------------------------------

def test_pilot_radial_matches_snis():
    spec = ch.ChannelSpec.pilot_aided(2, 10 ** -0.5, ch.default_pilot(1.0))
    u = ch.sample_uses(spec, INP, 6, Rng(8))
    mean, _, omega = pilot_moments_radial(u.y, u.v, spec, 1.0)
    for k in range(6):
        m = moments_pilot_snis(spec, INP, u.y[k], u.v[k], 2**18, Rng(100 + k))
        assert m.mean == pytest.approx(mean[k], abs=0.01)
        assert m.omega == pytest.approx(omega[k], abs=0.01)


def test_pilot_zero_output_has_zero_mean():
    spec = ch.ChannelSpec.pilot_aided(2, 0.5, ch.default_pilot(1.0))
    m = moments_pilot_snis(spec, INP, [0, 0], [0.3 + 0.1j, -0.2j], 2**14, Rng(1))
    assert abs(m.mean) < 1e-12
    mean, _, _ = pilot_moments_radial(np.zeros((1, 2)), np.array([[0.3 + 0.1j, -0.2j]]), spec, 1.0)
    assert abs(mean[0]) < 1e-12


def test_pilot_perfect_limit():
    y = np.array([0.7 - 0.2j, 1.1 + 0.4j])
    xp = 1e3 * (1 + 1j)
    spec = ch.ChannelSpec.pilot_aided(2, 0.5, xp)
    s = np.array([0.4 + 0.3j, -0.9 + 0.5j])
    yp = xp * s
    m = moments_pilot_snis(spec, INP, y, yp, 2**14, Rng(2))
    ref = moments_closed_form_gaussian(s, 0.5, 1.0, y)
    assert m.mean == pytest.approx(ref.mean, abs=1e-3)
    assert m.omega == pytest.approx(ref.omega, abs=1e-3)


def test_pilot_snis_unstable_weights():
    spec = ch.ChannelSpec.pilot_aided(4, 1e-4, 0.05 + 0j)
    with pytest.raises(UnstableWeightsError):
        moments_pilot_snis(spec, INP, [3.0, -3.0j, 2.0, 1.0], [0, 0, 0, 0], 64, Rng(3))


def test_pilot_omega_decomposition():
    # E[omega(y, v)] = E[omega(y, s)] + E|E[x|y,s] - E[x|y,v]|^2
    spec = ch.ChannelSpec.pilot_aided(2, 10 ** -0.5, ch.default_pilot(1.0))
    u = ch.sample_uses(spec, INP, 10**5, Rng(9))
    m_v, _, om_v = pilot_moments_radial(u.y, u.v, spec, 1.0)
    m_s, _, om_s = gaussian_moments(u.s, u.y, spec.noise_power, 1.0)
    d = om_v - om_s - np.abs(m_s - m_v) ** 2
    assert abs(d.mean()) < 3 * d.std(ddof=1) / math.sqrt(d.size) + 1e-12


# Conditional MMSE and LMMSE ----------------------------------------------------

def test_conditional_mmse_gaussian():
    s = np.array([0.5, 1j])
    spec = ch.ChannelSpec.linear(s, 0.8)
    c = conditional_omega_mean(spec, INP)
    assert c.value == pytest.approx(0.8 / (0.8 + 1.25))


def test_conditional_mmse_exhaustive_sum():
    spec = ch.ChannelSpec.linear(S2, 1.0, ch.ONE_BIT)
    c = conditional_omega_mean(spec, INP)
    pats = ch.onebit_patterns(2)
    # exhaustive sum with the pattern pmf built by integrating the output law against the prior
    t1, t2, w = gauss_hermite(96).tensor2()
    x = t1 + 1j * t2
    pmf = sum(wk * ch.conditional_output_pmf_onebit(spec, INP, xk) for xk, wk in zip(x, w / math.pi))
    om = np.array([moments_onebit_quadrature(spec, INP, y).omega for y in pats])
    assert c.value == pytest.approx(float(np.sum(pmf * om)), abs=1e-6)
    assert 0 < c.value <= 1.0 and c.agrees


def test_conditional_mmse_pilot_mc_cross_check():
    spec = ch.ChannelSpec.pilot_aided(2, 0.5, ch.default_pilot(1.0))
    c = conditional_omega_mean(spec, INP, v=[0.4 + 0.2j, -0.6j], n=4000, rng=Rng(1))
    assert 0 < c.value <= 1.0 and c.agrees


def test_lmmse_gaussian_equals_mmse():
    s = np.array([0.5, 1j])
    st = lmmse_stats(ch.ChannelSpec.linear(s, 0.8), INP)
    assert st.lmmse == pytest.approx(0.8 / (0.8 + 1.25))


def test_lmmse_pilot_closed_form():
    spec = ch.ChannelSpec.pilot_aided(2, 0.5, ch.default_pilot(1.0))
    yp = np.array([[0.4 + 0.2j, -0.6j]])
    _, _, lm = pilot_lmmse_closed_form(spec, 1.0, yp)
    mc = lmmse_stats(spec, INP, v=yp[0], n=2 * 10**5, rng=Rng(4), method="mc")
    assert mc.lmmse == pytest.approx(lm[0], abs=0.01)
    # P (1 - f_tilde) with f_tilde = eta^2 |x_p|^2 ... written via the state estimate
    gain, var = spec.pilot_posterior()
    sh = gain * yp[0]
    ftilde = np.sum(np.abs(sh) ** 2) / (np.sum(np.abs(sh) ** 2) + var + 0.5)
    assert lm[0] == pytest.approx(1.0 - ftilde, abs=1e-12)


def test_lmmse_onebit_not_below_mmse():
    spec = ch.ChannelSpec.linear(S2, 1.0, ch.ONE_BIT)
    eng = make_engine(spec, INP)
    assert lmmse_stats(spec, INP, engine=eng).lmmse >= conditional_omega_mean(spec, INP, engine=eng).value - 1e-12


def test_onebit_lmmse_arcsine_matches_table_and_mc():
    spec = ch.ChannelSpec.linear(S2, 1.0, ch.ONE_BIT)
    cross, gram = onebit_lmmse_closed_form(S2, 1.0, 1.0)
    st = lmmse_stats(spec, INP)
    assert np.allclose(st.cross, cross[0], atol=1e-9) and np.allclose(st.gram, gram[0], atol=1e-9)
    mc = lmmse_stats(spec, INP, n=2 * 10**5, rng=Rng(6), method="mc")
    assert np.allclose(mc.cross, cross[0], atol=5 * np.abs(mc.cross_std_err).max())


def test_one_bit_pilot_not_implemented():
    with pytest.raises(NotImplementedError):
        make_engine(ch.ChannelSpec.pilot_aided(1, 1.0, 1 + 1j, quantizer=ch.ONE_BIT), INP)
