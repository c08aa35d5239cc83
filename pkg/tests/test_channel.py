import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from losssense.channel import (
    LossParams,
    apply_loss,
    eta_to_phi,
    kraus_derivative_stack,
    kraus_ops,
    kraus_stack,
    loss_derivative,
    phi_to_eta,
    purified_derivatives,
    purified_evolve,
)
from losssense.errors import ValidationError
from losssense.fock import (
    DensityOperator,
    ModeLayout,
    PureState,
    as_density,
    coherent_probe,
    nds_probe,
    partial_trace,
    random_state,
    single_photon_probe,
    tmsv_probe,
)


def fock_rho(n, cutoff):
    lay = ModeLayout.build(signal=[(1, cutoff)])
    m = np.zeros((cutoff + 1, cutoff + 1))
    m[n, n] = 1.0
    return DensityOperator(lay, m)


def beam_splitter(phi, cutoff):
    """exp(phi (a^dag b - a b^dag)) on two modes of equal cutoff, built independently."""
    a = np.diag(np.sqrt(np.arange(1, cutoff + 1)), 1)
    eye = np.eye(cutoff + 1)
    A, B = np.kron(a, eye), np.kron(eye, a)
    return expm(phi * (A.T @ B - A @ B.T))


def test_eta_phi_involution():
    etas = np.linspace(0, 1, 101)
    np.testing.assert_allclose(phi_to_eta(eta_to_phi(etas)), etas, atol=1e-14)
    phis = np.linspace(0, math.pi / 2, 101)
    np.testing.assert_allclose(eta_to_phi(phi_to_eta(phis)), phis, atol=1e-7)


def test_loss_params_validation():
    with pytest.raises(ValidationError):
        LossParams((1.2,))
    with pytest.raises(ValidationError):
        LossParams((0.5,), "theta")
    p = LossParams.from_phis([math.pi / 4])
    assert abs(p.etas[0] - 0.5) < 1e-15
    assert p.theta == p.phis


def test_lossless_kraus_is_identity():
    ops = kraus_ops(1.0, 5)
    assert len(ops) == 1
    np.testing.assert_array_equal(ops[0], np.eye(6))


def test_single_photon_loss():
    out = apply_loss(fock_rho(1, 1), LossParams((0.6,)))
    np.testing.assert_allclose(out.matrix, np.diag([0.4, 0.6]), atol=1e-15)


def test_two_photon_binomial():
    out = apply_loss(fock_rho(2, 2), LossParams((0.5,)))
    np.testing.assert_allclose(out.matrix, np.diag([0.25, 0.5, 0.25]), atol=1e-15)


def test_vacuum_fixed_point():
    out = apply_loss(fock_rho(0, 4), LossParams((0.3,)))
    np.testing.assert_allclose(out.matrix, fock_rho(0, 4).matrix, atol=1e-15)


@pytest.mark.parametrize("eta", [0.0, 0.13, 0.5, 0.97, 1.0])
def test_kraus_completeness(eta):
    ops = kraus_stack(eta, 12)
    total = np.einsum("lji,ljk->ik", ops, ops)
    assert np.max(np.abs(total - np.eye(13))) < 1e-10


def test_kraus_match_beam_splitter():
    cutoff, phi = 5, 0.7
    u = beam_splitter(phi, cutoff)
    ops = kraus_stack(math.cos(phi) ** 2, cutoff)
    for n in range(cutoff + 1):
        inp = np.zeros((cutoff + 1) ** 2)
        inp[n * (cutoff + 1)] = 1.0
        out = (u @ inp).reshape(cutoff + 1, cutoff + 1)
        for l in range(n + 1):
            assert abs(abs(out[n - l, l]) - ops[l, n - l, n]) < 1e-12


def test_apply_loss_matches_beam_splitter_on_random_state():
    rng = np.random.default_rng(3)
    cutoff, phi = 4, 1.1
    lay = ModeLayout.build(signal=[(1, cutoff)])
    psi = random_state(lay, rng)
    full = np.kron(psi.amplitudes, np.eye(cutoff + 1)[0])
    out = (beam_splitter(phi, cutoff) @ full).reshape(cutoff + 1, cutoff + 1)
    oracle = out @ out.conj().T
    got = apply_loss(psi, LossParams.from_phis([phi])).matrix
    assert np.max(np.abs(got - oracle)) < 1e-12


@settings(max_examples=20, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.integers(0, 2**32 - 1))
def test_semigroup(eta1, eta2, seed):
    rng = np.random.default_rng(seed)
    lay = ModeLayout.build(ancilla=[1], signal=[(1, 3)])
    rho = as_density(random_state(lay, rng))
    two = apply_loss(apply_loss(rho, LossParams((eta1,))), LossParams((eta2,)))
    one = apply_loss(rho, LossParams((eta1 * eta2,)))
    assert np.max(np.abs(two.matrix - one.matrix)) < 1e-10


def test_trace_preserved_multi_element():
    rng = np.random.default_rng(8)
    lay = ModeLayout.build(ancilla=[1], signal=[(1, 2), (1, 1), (2, 2)])
    rho = apply_loss(random_state(lay, rng), LossParams((0.3, 0.8)))
    assert abs(rho.trace - 1.0) < 1e-12
    assert rho.check_psd()


def test_coherent_covariance():
    psi = coherent_probe(1.0, cutoff=30)
    out = apply_loss(psi, LossParams((0.49,)))
    target = coherent_probe(0.49, cutoff=30).amplitudes
    fid = np.vdot(target, out.matrix @ target).real
    assert fid >= 1 - 1e-8


def test_purified_lossless():
    psi = nds_probe({0: 0.2, 1: 0.5, 2: 0.3})
    out = purified_evolve(psi, LossParams((1.0,)))
    assert list(out.components) == [(0,)]
    np.testing.assert_allclose(out.components[(0,)], psi.amplitudes, atol=1e-15)


def test_purified_single_photon_components():
    psi = nds_probe({1: 1.0})
    out = purified_evolve(psi, LossParams((0.35,)))
    assert abs(np.vdot(out.components[(0,)], out.components[(0,)]).real - 0.35) < 1e-14
    assert abs(np.vdot(out.components[(1,)], out.components[(1,)]).real - 0.65) < 1e-14


@pytest.mark.parametrize("probe", [single_photon_probe(1.5), nds_probe({0: 0.2, 1: 0.5, 2: 0.3}), tmsv_probe(0.5, 18)])
def test_purification_consistency(probe):
    params = LossParams((0.8,))
    out = purified_evolve(probe, params, component_tol=0.0)
    assert abs(out.total_norm2 - 1.0) < 1e-10
    diff = out.reduced().matrix - apply_loss(probe, params).matrix
    assert np.max(np.abs(diff)) <= 1e-12


def test_purified_state_traces_to_reduced():
    probe = single_photon_probe(1.5)
    out = purified_evolve(probe, LossParams((0.6,)), component_tol=0.0)
    full = out.to_state()
    red = partial_trace(full, full.layout.env_modes)
    np.testing.assert_allclose(red.matrix, out.reduced().matrix, atol=1e-14)


def test_purified_nds_overlaps_real_positive():
    probe = nds_probe({0: 0.2, 1: 0.5, 2: 0.3})
    a = purified_evolve(probe, LossParams((0.7,)))
    b = purified_evolve(probe, LossParams((0.2,)))
    for l, v in a.components.items():
        ov = np.vdot(v, b.components[l])
        assert abs(ov.imag) < 1e-14 and ov.real >= 0


def test_kraus_derivative_matches_finite_difference():
    cutoff, eta, h = 6, 0.37, 1e-6
    d_eta = kraus_derivative_stack(eta, cutoff, "eta")
    fd = (kraus_stack(eta + h, cutoff) - kraus_stack(eta - h, cutoff)) / (2 * h)
    assert np.max(np.abs(d_eta - fd)) < 1e-7
    phi = float(eta_to_phi(eta))
    d_phi = kraus_derivative_stack(eta, cutoff, "phi")
    fd = (kraus_stack(math.cos(phi + h) ** 2, cutoff) - kraus_stack(math.cos(phi - h) ** 2, cutoff)) / (2 * h)
    assert np.max(np.abs(d_phi - fd)) < 1e-7


def test_eta_derivative_undefined_on_boundary():
    with pytest.raises(ValidationError):
        kraus_derivative_stack(1.0, 3, "eta")


def test_loss_derivative_matches_finite_difference():
    probe = single_photon_probe(1.5)
    params = LossParams((0.45,))
    h = 1e-6
    d = loss_derivative(probe, params, 1, "eta")
    fd = (apply_loss(probe, params.with_eta(1, 0.45 + h)).matrix - apply_loss(probe, params.with_eta(1, 0.45 - h)).matrix) / (2 * h)
    assert np.max(np.abs(d - fd)) < 1e-7


def test_purified_derivatives_consistent_with_reduced():
    probe = nds_probe({0: 0.2, 1: 0.5, 2: 0.3})
    params = LossParams((0.6,))
    comps = purified_derivatives(probe, params, 1, "phi")
    drho = sum(np.outer(d, v.conj()) + np.outer(v, d.conj()) for v, d in comps.values())
    np.testing.assert_allclose(drho, loss_derivative(probe, params, 1, "phi"), atol=1e-12)


def test_assignment_must_cover_signal_modes():
    probe = single_photon_probe(1.5)
    with pytest.raises(ValidationError):
        apply_loss(probe, LossParams((0.5,)), assignment={1: 1})
