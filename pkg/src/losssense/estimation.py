"""Monte Carlo estimation: probe, loss, measurement, per-element maximum likelihood.

Probes built from a ``ProbeSpec`` are products over loss elements, so each
element is simulated as its own experiment and estimated by a 1-D MLE.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import chebyshev

from .channel import LossParams, apply_loss, loss_derivative
from .errors import NumericalError, ValidationError
from .fock import ProbeSpec, build_probe
from .measurements import on_off_povm, outcome_distribution, photon_counting_povm, rng_for, schmidt_povm
from .metrology import classical_fi, qfim

MEASUREMENTS = ("on_off", "schmidt", "photon_counting")
ESTIMATORS = ("mle_grid", "mle_refined")
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class SimScenario:
    probe: ProbeSpec
    true_params: LossParams
    measurement: str = "on_off"
    shots: int = 10_000
    trials: int = 200
    seed: int = 0
    estimator: str = "mle_refined"
    grid_points: int = 512
    grid_bounds: tuple[float, float] = (0.01, 0.99)
    xtol: float = 1e-8
    ancilla_policy: str = "orthonormal_min"

    def __post_init__(self):
        if self.shots < 1 or self.trials < 1:
            raise ValidationError("shots and trials must be at least 1")
        if self.measurement not in MEASUREMENTS:
            raise ValidationError(f"measurement must be one of {MEASUREMENTS}")
        if self.estimator not in ESTIMATORS:
            raise ValidationError(f"estimator must be one of {ESTIMATORS}")
        lo, hi = self.grid_bounds
        if not 0.0 < lo < hi < 1.0:
            raise ValidationError("grid bounds must satisfy 0 < lo < hi < 1")
        if self.grid_points < 3:
            raise ValidationError("grid needs at least 3 points")
        if len(self.true_params.etas) != self.probe.element_count:
            raise ValidationError("one true transmittance per probe element required")


@dataclass(frozen=True)
class SimReport:
    true_etas: tuple[float, ...]
    estimates: np.ndarray  # trials x K
    mean: np.ndarray
    covariance: np.ndarray
    bias: np.ndarray
    qfim: np.ndarray  # transmittance parametrization
    cfim: np.ndarray
    crb: np.ndarray
    efficiency: np.ndarray
    boundary_hits: tuple[int, ...]
    shots: int
    trials: int
    seed: int

    def to_dict(self):
        return {
            "true_etas": list(self.true_etas),
            "shots": self.shots,
            "trials": self.trials,
            "seed": self.seed,
            "mean": self.mean.tolist(),
            "covariance": self.covariance.tolist(),
            "bias": self.bias.tolist(),
            "qfim": self.qfim.tolist(),
            "cfim": self.cfim.tolist(),
            "crb": self.crb.tolist(),
            "efficiency": self.efficiency.tolist(),
            "boundary_hits": list(self.boundary_hits),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _povm_for(name, probe):
    if name == "on_off":
        return on_off_povm(probe.layout)
    if name == "photon_counting":
        return photon_counting_povm(probe.layout)
    return schmidt_povm(probe)


class LikelihoodModel:
    """Outcome probabilities of one element as exact polynomials in eta.

    Loss Kraus amplitudes squared are polynomials in eta of degree at most the
    element's total photon cutoff, so Chebyshev interpolation through that
    many + 1 nodes reproduces ``p_x(eta)`` up to rounding.
    """

    def __init__(self, probe, povm):
        self.probe = probe
        self.povm = povm
        degree = sum(probe.layout.cutoffs[m] for m in probe.layout.signal_modes)
        nodes = 0.5 * (1.0 + np.cos(np.pi * (np.arange(degree + 1) + 0.5) / (degree + 1)))
        values = np.stack([self.exact(e) for e in nodes])
        self.coef = chebyshev.chebfit(2.0 * nodes - 1.0, values, degree)

    def exact(self, eta):
        rho = apply_loss(self.probe, LossParams((eta,)))
        return outcome_distribution(rho, self.povm)

    def __call__(self, eta):
        return chebyshev.chebval(2.0 * np.asarray(eta) - 1.0, self.coef)


def _loglik(model, counts, etas):
    seen = counts > 0
    p = model(etas)[seen]
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.where(p > 0, np.log(np.where(p > 0, p, 1.0)), -np.inf)
    return counts[seen] @ logs


def _golden_max(f, a, b, xtol):
    c, d = b - _GOLDEN * (b - a), a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > xtol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def mle(model, counts, grid, refine=True, xtol=1e-8):
    """Grid maximum likelihood, optionally refined by golden section between grid neighbours.

    Returns ``(estimate, on_boundary)``.
    """
    ll = _loglik(model, counts, grid)
    if not np.isfinite(ll).any():
        raise NumericalError("likelihood vanishes on the whole grid")
    finite = ll[np.isfinite(ll)]
    if finite.max() - finite.min() <= 1e-12 * max(1.0, abs(finite.max())) and finite.size == ll.size:
        raise NumericalError("likelihood is flat in eta: scenario not identifiable")
    i = int(np.argmax(ll))
    if i == 0 or i == grid.size - 1:
        return float(grid[i]), True
    if not refine:
        return float(grid[i]), False
    est = _golden_max(lambda e: float(_loglik(model, counts, np.array([e]))[0]), grid[i - 1], grid[i + 1], xtol)
    return est, False


def run_sim(scenario, threads=1):
    """Run ``trials`` independent experiments of ``shots`` each and compare with the QCRB."""
    kdim = scenario.probe.element_count
    grid = np.linspace(*scenario.grid_bounds, scenario.grid_points)
    models, dists = [], []
    qfi = np.zeros(kdim)
    cfi = np.zeros(kdim)
    for k in range(1, kdim + 1):
        probe = build_probe(scenario.probe.element(k), scenario.ancilla_policy)
        model = LikelihoodModel(probe, _povm_for(scenario.measurement, probe))
        eta = scenario.true_params.etas[k - 1]
        models.append(model)
        dists.append(model.exact(eta))
        if 0.0 < eta < 1.0:
            params = LossParams((eta,), "eta")
            qfi[k - 1] = qfim(probe, params).qfim[0, 0]
            rho = apply_loss(probe, params)
            cfi[k - 1] = classical_fi(model.povm, rho, loss_derivative(probe, params, 1, "eta"))
        else:
            qfi[k - 1] = cfi[k - 1] = np.nan

    refine = scenario.estimator == "mle_refined"

    def trial(t):
        row, hits = [], []
        for k in range(kdim):
            counts = rng_for(scenario.seed, t, k).multinomial(scenario.shots, dists[k] / dists[k].sum())
            est, edge = mle(models[k], counts, grid, refine, scenario.xtol)
            row.append(est)
            hits.append(edge)
        return row, hits

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(trial, range(scenario.trials)))
    else:
        results = [trial(t) for t in range(scenario.trials)]
    est = np.array([r for r, _ in results])
    hits = tuple(int(sum(h[k] for _, h in results)) for k in range(kdim))
    truth = np.array(scenario.true_params.etas)
    mean = est.mean(axis=0)
    cov = np.atleast_2d(np.cov(est, rowvar=False, ddof=1)) if scenario.trials > 1 else np.zeros((kdim, kdim))
    k_mat = np.diag(qfi)
    with np.errstate(divide="ignore", invalid="ignore"):
        crb = np.diag(1.0 / qfi) / scenario.shots
    eff = np.diag(cov @ k_mat) * scenario.shots
    return SimReport(tuple(truth), est, mean, cov, mean - truth, k_mat, np.diag(cfi), crb, eff, hits,
                     scenario.shots, scenario.trials, scenario.seed)


def write_estimates_csv(fh, report):
    writer = csv.writer(fh)
    kdim = report.estimates.shape[1]
    writer.writerow(["trial"] + [f"eta_{k + 1}" for k in range(kdim)])
    for t, row in enumerate(report.estimates):
        writer.writerow([t] + [repr(float(v)) for v in row])
