import numpy as np
import pytest

from conftest import random_spd
from latentdem.codec import LinearCodec, identity_codec, random_codec
from latentdem.estep import (
    AnnealSchedule,
    EStepState,
    TweedieLink,
    annealing_factor,
    data_consistency_gradient,
    estep_reverse_step,
    guidance_weight,
    latent_dps_step,
    unconditional_step,
    zeta_from_model_noise,
)
from latentdem.forward import ConvolutionOperator, DenseOperator
from latentdem.prior import GaussianMixturePrior, GaussianPrior, PriorScore
from latentdem.rng import stream, stream_position
from latentdem.sched import build_linear_schedule


def test_annealing_schedule_values():
    a = AnnealSchedule()
    assert annealing_factor(a, 1000) == 10.0
    assert annealing_factor(a, 600) == 1.0
    assert annealing_factor(a, 800) == pytest.approx(5.5, abs=1e-12)
    assert annealing_factor(a, 300) == 1.0
    assert annealing_factor(a, 1200) == 10.0


def test_annealing_is_monotone():
    a = AnnealSchedule()
    vals = [annealing_factor(a, t) for t in range(1, 1001)]
    assert all(x <= y for x, y in zip(vals, vals[1:]))


def test_constant_annealing():
    a = AnnealSchedule.constant(1.0)
    assert {annealing_factor(a, t) for t in range(0, 50)} == {1.0}


@pytest.mark.parametrize("kw", [dict(zeta_start=0.5, zeta_end=0.5), dict(zeta_start=1, zeta_end=2),
                                dict(t_start=100, t_end=200)])
def test_annealing_validation(kw):
    with pytest.raises(ValueError):
        AnnealSchedule(**kw)


def test_zeta_from_model_noise():
    s = 0.01
    assert zeta_from_model_noise(0.0, s) == 1.0
    assert zeta_from_model_noise(s, s) == pytest.approx(2.0)
    assert zeta_from_model_noise(3 * s, s) == pytest.approx(10.0)
    with pytest.raises(ValueError):
        zeta_from_model_noise(1.0, 0.0)


def _linear_setup(rng, n=4, m=3):
    sched = build_linear_schedule(100)
    prior = GaussianPrior(rng.standard_normal(n), random_spd(rng, n))
    A = DenseOperator(rng.standard_normal((m, n)))
    return sched, prior, A


def test_gradient_vanishes_as_zeta_grows(rng):
    sched, prior, A = _linear_setup(rng)
    codec = identity_codec((4,))
    st = EStepState(z=rng.standard_normal(4), t=40, rng=stream(0, "t"))
    y = rng.standard_normal(3)
    g1 = data_consistency_gradient(y, A, codec, PriorScore(prior, sched), sched, st, 1.0, 0.1)
    g_inf = data_consistency_gradient(y, A, codec, PriorScore(prior, sched), sched, st, 1e12, 0.1)
    assert np.linalg.norm(g_inf) < 1e-9 * np.linalg.norm(g1)


def test_gradient_zero_at_consistent_observation(rng):
    sched, prior, A = _linear_setup(rng)
    codec = identity_codec((4,))
    sm = PriorScore(prior, sched)
    z = rng.standard_normal(4)
    link = TweedieLink(sm, sched, z, 40)
    y = A.apply(codec.decode(link.z0_hat))
    st = EStepState(z=z, t=40, rng=stream(0, "t"))
    np.testing.assert_allclose(data_consistency_gradient(y, A, codec, sm, sched, st, 1.0, 0.1), 0.0, atol=1e-12)


def test_gradient_matches_finite_differences_of_explicit_objective(rng):
    sched, prior, A = _linear_setup(rng, n=5, m=4)
    codec = identity_codec((5,))
    sm = PriorScore(prior, sched)
    y = rng.standard_normal(4)
    t, zeta, sigma = 30, 2.5, 0.3
    ab = sched.alpha_bar_at(t)
    C_t = ab * prior.cov + (1 - ab) * np.eye(5)

    def objective(z):
        # closed-form posterior mean E[z_0 | z_t], independent of the score code
        z0 = prior.mean + np.sqrt(ab) * prior.cov @ np.linalg.solve(C_t, z - np.sqrt(ab) * prior.mean)
        r = y - A.matrix @ z0
        return r @ r / (2 * zeta * sigma**2)

    z = rng.standard_normal(5)
    g = data_consistency_gradient(y, A, codec, sm, sched, EStepState(z, t, stream(0, "t")), zeta, sigma)
    h = 1e-6
    fd = np.array([(objective(z + h * e) - objective(z - h * e)) / (2 * h) for e in np.eye(5)])
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-6)


def test_fallback_vjp_matches_exact(rng):
    sched = build_linear_schedule(100)
    comps = [GaussianPrior(rng.standard_normal(3), random_spd(rng, 3)) for _ in range(2)]
    sm = PriorScore(GaussianMixturePrior([0.5, 0.5], comps), sched)

    class ScoreOnly:
        def score(self, z, t):
            return sm.score(z, t)

    z, g = rng.standard_normal(3), rng.standard_normal(3)
    exact = TweedieLink(sm, sched, z, 20).vjp(g)
    approx = TweedieLink(ScoreOnly(), sched, z, 20).vjp(g)
    np.testing.assert_allclose(approx, exact, rtol=1e-6, atol=1e-8)


def _deblur_setup(seed=0):
    g = np.random.default_rng(seed)
    sched = build_linear_schedule(50)
    codec = random_codec((8, 8), 6, g, offset=0.5)
    prior = GaussianPrior(g.standard_normal(6), random_spd(g, 6))
    k = g.random((3, 3))
    A = ConvolutionOperator(k / k.sum())
    y = A.apply(codec.decode(prior.sample(g))) + 0.05 * g.standard_normal((8, 8))
    return sched, codec, PriorScore(prior, sched), A, y


def test_skipped_step_equals_unconditional_step():
    sched, codec, sm, A, y = _deblur_setup()
    z = np.random.default_rng(1).standard_normal(6)
    a, info = estep_reverse_step(EStepState(z, 30, stream(0, "x")), y, A, codec, sm, sched,
                                 AnnealSchedule(), 1.0, False, 0.05)
    b = unconditional_step(EStepState(z, 30, stream(0, "x")), sm, sched)
    assert info.skipped and info.residual is None
    assert a.x0_hat is None
    np.testing.assert_array_equal(a.z, b.z)


def test_skipped_and_full_steps_draw_the_same_noise():
    sched, codec, sm, A, y = _deblur_setup()
    z = np.random.default_rng(1).standard_normal(6)
    r1, r2 = stream(0, "x"), stream(0, "x")
    estep_reverse_step(EStepState(z, 30, r1), y, A, codec, sm, sched, AnnealSchedule(), 0.0, False, 0.05)
    estep_reverse_step(EStepState(z, 30, r2), y, A, codec, sm, sched, AnnealSchedule(), 0.5, True, 0.05)
    assert stream_position(r1) == stream_position(r2) == 6


@pytest.mark.parametrize("weighting,scale", [("literal", 1e-3), ("sde", 0.7)])
def test_unit_zeta_without_gluing_is_plain_dps(weighting, scale):
    sched, codec, sm, A, y = _deblur_setup()
    z = np.random.default_rng(2).standard_normal(6)
    a, _ = estep_reverse_step(EStepState(z, 25, stream(0, "x")), y, A, codec, sm, sched,
                              AnnealSchedule.constant(1.0), 0.0, True, 0.05, scale, weighting=weighting)
    w = guidance_weight(sched, 25, scale, weighting)
    b = latent_dps_step(EStepState(z, 25, stream(0, "x")), y, A, codec, sm, sched, 0.05, w)
    assert a.z.tobytes() == b.z.tobytes()
    assert a.x0_hat.tobytes() == b.x0_hat.tobytes()


def test_gluing_only_acts_when_weighted():
    sched, codec, sm, A, y = _deblur_setup()
    z = np.random.default_rng(3).standard_normal(6)
    args = (y, A, codec, sm, sched, AnnealSchedule())
    off, i_off = estep_reverse_step(EStepState(z, 10, stream(0, "x")), *args, 0.0, True, 0.05)
    on, i_on = estep_reverse_step(EStepState(z, 10, stream(0, "x")), *args, 0.1, True, 0.05)
    assert i_off.gluing is None and i_on.gluing is not None
    assert not np.array_equal(off.z, on.z)


def test_m_step_hook_sees_sample_and_replaces_operator():
    sched, codec, sm, A, y = _deblur_setup()
    seen = {}
    B = ConvolutionOperator(np.eye(3)[::-1] / 3)

    def hook(x0_hat, op):
        seen["x"], seen["op"] = x0_hat, op
        return B

    st, info = estep_reverse_step(EStepState(np.zeros(6), 10, stream(0, "x")), y, A, codec, sm, sched,
                                  AnnealSchedule(), 0.0, True, 0.05, update_operator=hook)
    assert seen["op"] is A and info.operator is B
    np.testing.assert_array_equal(seen["x"], st.x0_hat)


def test_guidance_weight():
    sched = build_linear_schedule(10)
    assert guidance_weight(sched, 4, 2.0, "literal") == 2.0
    assert guidance_weight(sched, 4, 2.0, "sde") == pytest.approx(
        2.0 * sched.beta_at(4) / np.sqrt(1 - sched.beta_at(4)))
    with pytest.raises(ValueError):
        guidance_weight(sched, 4, 1.0, "normalized")


def test_step_errors():
    sched, codec, sm, A, y = _deblur_setup()
    with pytest.raises(ValueError):
        estep_reverse_step(EStepState(np.zeros(6), 0, stream(0, "x")), y, A, codec, sm, sched,
                           AnnealSchedule(), 0.0, True, 0.05)
    with pytest.raises(ValueError):
        estep_reverse_step(EStepState(np.zeros(6), 3, stream(0, "x")), y, A, codec, sm, sched,
                           AnnealSchedule(), -1.0, True, 0.05)
    with pytest.raises(ValueError):
        estep_reverse_step(EStepState(np.zeros(6), 3, stream(0, "x")), y, A, codec, sm, sched,
                           AnnealSchedule(), 0.0, True, 0.0)


def test_decoder_grid_mismatch():
    sched, codec, sm, A, y = _deblur_setup()
    bad = LinearCodec(np.eye(6), image_shape=(6,))
    with pytest.raises(ValueError):
        estep_reverse_step(EStepState(np.zeros(6), 3, stream(0, "x")), y, A, bad, sm, sched,
                           AnnealSchedule(), 0.0, True, 0.05)
