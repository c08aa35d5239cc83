import io

import numpy as np
import pytest

from losssense.channel import LossParams
from losssense.errors import NumericalError, ValidationError
from losssense.estimation import LikelihoodModel, SimScenario, mle, run_sim, write_estimates_csv
from losssense.fock import ProbeSpec, build_probe
from losssense.measurements import on_off_povm, photon_counting_povm

SINGLE = ProbeSpec("single_photon_eq16", energies=(1.0,))


def test_scenario_validation():
    with pytest.raises(ValidationError):
        SimScenario(SINGLE, LossParams((0.5,)), shots=0)
    with pytest.raises(ValidationError):
        SimScenario(SINGLE, LossParams((0.5,)), grid_bounds=(0.0, 0.9))
    with pytest.raises(ValidationError):
        SimScenario(SINGLE, LossParams((0.5, 0.5)))
    with pytest.raises(ValidationError):
        SimScenario(SINGLE, LossParams((0.5,)), measurement="homodyne")


def test_likelihood_polynomial_is_exact():
    probe = build_probe(ProbeSpec("generic_nds", energies=(1.1,), distribution=({0: 0.2, 1: 0.5, 2: 0.3},)))
    model = LikelihoodModel(probe, photon_counting_povm(probe.layout))
    for eta in (0.03, 0.41, 0.97):
        np.testing.assert_allclose(model(eta), model.exact(eta), atol=1e-13)


def test_mle_recovers_exact_frequencies():
    probe = build_probe(SINGLE)
    model = LikelihoodModel(probe, on_off_povm(probe.layout))
    p = model.exact(0.3137)
    counts = np.round(p * 1e6).astype(int)
    grid = np.linspace(0.01, 0.99, 512)
    est, edge = mle(model, counts, grid)
    assert not edge
    assert abs(est - counts[model.povm.labels.index("on-on")] / counts.sum()) < 1e-7


def test_mle_flags_boundary():
    probe = build_probe(SINGLE)
    model = LikelihoodModel(probe, on_off_povm(probe.layout))
    counts = np.round(model.exact(1.0) * 100).astype(int)
    est, edge = mle(model, counts, np.linspace(0.01, 0.99, 512))
    assert edge and est == 0.99


def test_mle_flat_likelihood():
    probe = build_probe(ProbeSpec("custom", distribution=({0: 1.0},)))
    model = LikelihoodModel(probe, on_off_povm(probe.layout))
    with pytest.raises(NumericalError):
        mle(model, np.array([10] + [0] * (len(model.povm) - 1)), np.linspace(0.01, 0.99, 64))


def test_lossless_photon_counting_has_zero_variance():
    spec = ProbeSpec("generic_nds", energies=(2.0,), distribution=({2: 1.0},))
    rep = run_sim(SimScenario(spec, LossParams((1.0,)), "photon_counting", shots=10_000, trials=10,
                              grid_bounds=(0.01, 0.99)))
    assert rep.covariance[0, 0] == 0.0
    assert rep.boundary_hits == (10,)
    assert np.isnan(rep.qfim[0, 0])


def test_product_scenario_uncorrelated():
    spec = ProbeSpec("single_photon_eq16", energies=(1.0, 1.0))
    rep = run_sim(SimScenario(spec, LossParams((0.4, 0.7)), "on_off", shots=2000, trials=200, seed=5))
    sd = np.sqrt(np.diag(rep.covariance))
    corr = rep.covariance[0, 1] / (sd[0] * sd[1])
    # standard error of a sample correlation near zero is about 1/sqrt(trials)
    assert abs(corr) < 3 / np.sqrt(200)
    assert np.allclose(rep.covariance, rep.covariance.T)
    assert np.linalg.eigvalsh(rep.covariance)[0] >= -1e-15


def test_unbiased_and_respects_crb():
    rep = run_sim(SimScenario(SINGLE, LossParams((0.35,)), "on_off", shots=10_000, trials=200, seed=1))
    sd = np.sqrt(rep.covariance[0, 0])
    assert abs(rep.bias[0]) <= 3 * sd / np.sqrt(200)
    assert rep.covariance[0, 0] >= (1 - 3 / np.sqrt(200)) * rep.crb[0, 0]
    assert rep.qfim[0, 0] == pytest.approx(1 / (0.35 * 0.65), rel=1e-9)


def test_reproducible_and_thread_invariant():
    scen = SimScenario(SINGLE, LossParams((0.6,)), "schmidt", shots=500, trials=30, seed=99)
    a, b = run_sim(scen), run_sim(scen, threads=4)
    np.testing.assert_array_equal(a.estimates, b.estimates)
    assert a.to_json() == b.to_json()
    c = run_sim(SimScenario(SINGLE, LossParams((0.6,)), "schmidt", shots=500, trials=30, seed=100))
    assert not np.array_equal(a.estimates, c.estimates)


def test_grid_estimator_lands_on_grid():
    scen = SimScenario(SINGLE, LossParams((0.5,)), "on_off", shots=1000, trials=5, estimator="mle_grid", grid_points=99)
    grid = np.linspace(0.01, 0.99, 99)
    rep = run_sim(scen)
    assert all(np.min(np.abs(grid - e)) < 1e-15 for e in rep.estimates[:, 0])


def test_efficiency_is_one_on_average():
    # per-seed efficiency scatters by about sqrt(2 / (trials - 1)); its mean over seeds is close to 1
    effs = [run_sim(SimScenario(SINGLE, LossParams((0.5,)), "on_off", shots=10_000, trials=200, seed=s)).efficiency[0]
            for s in range(1, 41)]
    assert abs(np.mean(effs) - 1.0) < 4 * 0.1 / np.sqrt(40)


def test_estimates_csv():
    rep = run_sim(SimScenario(SINGLE, LossParams((0.5,)), shots=100, trials=3))
    buf = io.StringIO()
    write_estimates_csv(buf, rep)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "trial,eta_1"
    assert len(lines) == 4
