"""Fidelities, SLDs and (quantum/classical) Fisher information for loss estimation."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .bures import mu
from .channel import (
    apply_loss,
    eta_to_phi,
    loss_derivative,
    purified_derivatives,
    purified_evolve,
)
from .errors import NumericalError, ValidationError
from .fock import DensityOperator, as_density, energy, hermitize, number_distribution

RANK_TOL = 1e-12
FIDELITY_RANK_TOL = 1e-13
PROB_TOL = 1e-15
FD_STEP = 1e-3


@dataclass(frozen=True)
class FidelityResult:
    value: float
    method: str

    def __post_init__(self):
        if not -1e-12 <= self.value <= 1 + 1e-12:
            raise NumericalError(f"fidelity {self.value} outside [0, 1]")


def _psd_factor(mat, rank_tol):
    vals, vecs = np.linalg.eigh(hermitize(np.asarray(mat)))
    top = max(vals[-1], 0.0)
    if vals[0] < -1e-10 * max(top, 1.0):
        raise ValidationError(f"operator not PSD (eigenvalue {vals[0]:.3e})")
    keep = vals > rank_tol * top
    return vecs[:, keep] * np.sqrt(vals[keep])


def fidelity_from_factors(b, c):
    """``F = || B^dag C ||_1`` for ``rho = B B^dag``, ``sigma = C C^dag``.

    Avoids matrix square roots of nearly singular operators, which would
    otherwise leak sqrt(machine epsilon) noise into the result.
    """
    return float(np.linalg.svd(b.conj().T @ c, compute_uv=False).sum())


def uhlmann_fidelity(rho, sigma, rank_tol=FIDELITY_RANK_TOL):
    """Root fidelity ``Tr sqrt(sqrt(rho) sigma sqrt(rho))`` of two density operators."""
    a = rho.matrix if isinstance(rho, DensityOperator) else np.asarray(rho)
    b = sigma.matrix if isinstance(sigma, DensityOperator) else np.asarray(sigma)
    if a.shape != b.shape:
        raise ValidationError("density operators live on different spaces")
    return fidelity_from_factors(_psd_factor(a, rank_tol), _psd_factor(b, rank_tol))


def nds_fidelity(p, eta, eta_prime):
    """Output fidelity ``sum_n p_n mu^n`` of an NDS probe with number distribution ``p``."""
    if isinstance(p, dict):
        return float(sum(pn * mu(eta, eta_prime) ** n for n, pn in p.items()))
    p = np.asarray(p, dtype=float)
    return float(np.dot(p, mu(eta, eta_prime) ** np.arange(p.size)))


def purified_fidelity(out, out_prime):
    """Overlap of two purified outputs, ``|sum_l <psi_l|psi'_l>|``."""
    total = 0j
    for l, v in out.components.items():
        w = out_prime.components.get(l)
        if w is not None:
            total += np.vdot(v, w)
    return float(abs(total))


def fidelity(probe, params, params_prime, method="uhlmann", assignment=None, component_tol=1e-14):
    """Fidelity between channel outputs for ``params`` and ``params_prime``.

    ``component_tol`` drops negligible environment branches in the
    ``purified_sum`` method only.
    """
    if method == "uhlmann":
        out = purified_evolve(probe, params, assignment, component_tol=0.0)
        out2 = purified_evolve(probe, params_prime, assignment, component_tol=0.0)
        keys = sorted(set(out.components) | set(out2.components))
        value = fidelity_from_factors(out.factor(keys), out2.factor(keys))
    elif method == "purified_sum":
        value = purified_fidelity(purified_evolve(probe, params, assignment, component_tol),
                                  purified_evolve(probe, params_prime, assignment, component_tol))
    elif method == "nds_closed_form":
        value = 1.0
        for k in probe.layout.elements:
            p = number_distribution(probe, k)
            value *= nds_fidelity(p, params.etas[k - 1], params_prime.etas[k - 1])
    else:
        raise ValidationError(f"unknown fidelity method {method!r}")
    return FidelityResult(min(max(value, 0.0), 1.0), method)


def _sld_from_eig(vals, vecs, drho, rank_tol):
    d = vecs.conj().T @ drho @ vecs
    s = vals[:, None] + vals[None, :]
    mask = s > rank_tol * max(vals[-1], 0.0)
    if not mask.any():
        raise NumericalError("no eigenvalue pair above rank tolerance")
    lt = np.zeros_like(d)
    lt[mask] = 2.0 * d[mask] / s[mask]
    resid = np.max(np.abs((0.5 * s * lt - d)[mask]), initial=0.0)
    if resid > 1e-8:
        raise NumericalError(f"SLD residual {resid:.3e} on support")
    return hermitize(vecs @ lt @ vecs.conj().T)


def sld(rho, drho, rank_tol=RANK_TOL):
    """Symmetric logarithmic derivative of ``rho`` along ``drho``.

    Pairs of eigenvalues whose sum falls below ``rank_tol`` times the largest
    eigenvalue are treated as outside the support and set to zero.
    """
    rho = rho.matrix if isinstance(rho, DensityOperator) else np.asarray(rho)
    vals, vecs = np.linalg.eigh(hermitize(rho))
    return _sld_from_eig(vals, vecs, np.asarray(drho), rank_tol)


def mp_bound(energies):
    """Upper bound ``4 diag(N)`` on the angle-parametrized QFIM."""
    n = np.atleast_1d(np.asarray(energies, dtype=float))
    if np.any(n < 0):
        raise ValidationError("energies must be nonnegative")
    return np.diag(4.0 * n)


def jacobian_phi_per_eta(etas):
    """``d phi / d eta`` for each element; singular on the boundary."""
    etas = np.asarray(etas, dtype=float)
    if np.any(etas <= 0) or np.any(etas >= 1):
        raise ValidationError("transmittance parametrization needs eta strictly inside (0, 1)")
    return -1.0 / (2.0 * np.sqrt(etas * (1.0 - etas)))


@dataclass(frozen=True)
class QfimReport:
    parametrization: str
    theta: tuple[float, ...]
    qfim: np.ndarray
    mp_bound: np.ndarray
    energies: tuple[float, ...]
    bound_margin: float
    sld_spectra: tuple = ()
    slds: tuple | None = field(default=None, compare=False, repr=False)
    rank_tol: float = RANK_TOL
    bound_tol: float = 1e-8

    @property
    def bound_satisfied(self):
        return self.bound_margin >= -self.bound_tol

    def to_dict(self):
        return {
            "parametrization": self.parametrization,
            "theta": list(self.theta),
            "energies": list(self.energies),
            "qfim": self.qfim.tolist(),
            "mp_bound": self.mp_bound.tolist(),
            "bound_satisfied": bool(self.bound_satisfied),
            "bound_margin": self.bound_margin,
            "sld_spectra": [list(map(float, s)) for s in self.sld_spectra],
            "tolerances": {"rank_tol": self.rank_tol, "bound_tol": self.bound_tol},
        }


def output_state(probe, params, assignment=None):
    return apply_loss(as_density(probe), params, assignment)


def qfim(probe, params, assignment=None, parametrization=None, rank_tol=RANK_TOL, keep_slds=False):
    """QFIM of the reduced output family, from analytic Kraus derivatives.

    Derivatives are taken in the angle parametrization and converted with
    ``d eta / d phi = -2 sqrt(eta (1 - eta))`` when ``eta`` is requested.
    """
    parametrization = parametrization or params.parametrization
    rho_in = as_density(probe)
    elements = probe.layout.elements
    if not elements or len(params.etas) < max(elements):
        raise ValidationError("one transmittance per loss element required")
    rho = apply_loss(rho_in, params, assignment).matrix
    vals, vecs = np.linalg.eigh(rho)
    slds = [_sld_from_eig(vals, vecs, loss_derivative(rho_in, params, k, "phi", assignment), rank_tol)
            for k in elements]
    kdim = len(elements)
    k_phi = np.zeros((kdim, kdim))
    for i in range(kdim):
        for j in range(i, kdim):
            val = 0.5 * np.trace(rho @ (slds[i] @ slds[j] + slds[j] @ slds[i])).real
            k_phi[i, j] = k_phi[j, i] = val
    energies = tuple(energy(probe, k) for k in elements)
    bound = mp_bound(energies)
    margin = float(np.linalg.eigvalsh(bound - k_phi)[0])
    etas = tuple(params.etas[k - 1] for k in elements)
    if parametrization == "eta":
        jac = jacobian_phi_per_eta(etas)
        matrix = k_phi * np.outer(jac, jac)
        slds = [l * jk for l, jk in zip(slds, jac)]
        theta = tuple(etas)
    else:
        matrix = k_phi
        theta = tuple(float(p) for p in eta_to_phi(np.array(etas)))
    spectra = tuple(np.linalg.eigvalsh(l) for l in slds)
    return QfimReport(parametrization, theta, matrix, bound, energies, margin, spectra,
                      tuple(slds) if keep_slds else None, rank_tol)


def purified_qfim(probe, params, parametrization="phi", assignment=None):
    """QFIM of the full signal-ancilla-environment output (environment accessible)."""
    elements = probe.layout.elements
    derivs = [purified_derivatives(probe, params, k, parametrization, assignment) for k in elements]
    keys = sorted(derivs[0])
    psi = np.concatenate([derivs[0][l][0] for l in keys])
    dpsi = [np.concatenate([d[l][1] for l in keys]) for d in derivs]
    kdim = len(elements)
    out = np.zeros((kdim, kdim))
    for i in range(kdim):
        for j in range(kdim):
            val = np.vdot(dpsi[i], dpsi[j]) - np.vdot(dpsi[i], psi) * np.vdot(psi, dpsi[j])
            out[i, j] = 4.0 * val.real
    return out


def qfi_from_fidelity(probe, params, assignment=None, step=FD_STEP, k=1, tol=None):
    """Angle-parametrized QFI from ``-4 d^2 F / d phi'^2`` at ``phi' = phi``.

    Central second differences at ``step`` and ``step/2`` are combined by
    Richardson extrapolation; a warning is raised when the two raw estimates
    disagree by more than ``tol`` (default ``max(1e-4, 10 step^2)``).
    """
    if not 1e-6 <= step <= 0.1:
        raise ValidationError("finite-difference step must lie in [1e-6, 0.1]")
    phi = params.phis[k - 1]
    if phi - step < 0 or phi + step > math.pi / 2:
        raise ValidationError("phi +/- step leaves [0, pi/2]; move away from the boundary")
    base = purified_evolve(probe, params, assignment, component_tol=0.0)
    keys = sorted(base.components)
    b0 = base.factor(keys)

    def f(dphi):
        shifted = purified_evolve(probe, params.with_phi(k, phi + dphi), assignment, component_tol=0.0)
        return fidelity_from_factors(b0, shifted.factor(keys))

    f0 = f(0.0)

    def second(h):
        return (f(h) - 2.0 * f0 + f(-h)) / h ** 2

    coarse, fine = -4.0 * second(step), -4.0 * second(step / 2)
    tol = max(1e-4, 10 * step ** 2) if tol is None else tol
    if abs(coarse - fine) > tol:
        warnings.warn(f"fidelity-based QFI unstable: {coarse:.8g} vs {fine:.8g}", RuntimeWarning)
    return (4.0 * fine - coarse) / 3.0


def classical_fi(povm, rho, drho, prob_tol=PROB_TOL):
    """Fisher information of the outcome distribution of ``povm``.

    Outcomes with probability below ``prob_tol`` are pooled into one residual
    outcome, which only contributes if its pooled probability clears the
    threshold.
    """
    rho_m = rho.matrix if isinstance(rho, DensityOperator) else np.asarray(rho)
    p = povm.expectations(rho_m)
    dp = povm.expectations(np.asarray(drho))
    big = p > prob_tol
    if not big.any():
        raise NumericalError("every outcome probability is below prob_tol")
    total = float(np.sum(dp[big] ** 2 / p[big]))
    p_rest, dp_rest = p[~big].sum(), dp[~big].sum()
    if p_rest > prob_tol:
        total += dp_rest ** 2 / p_rest
    return total
