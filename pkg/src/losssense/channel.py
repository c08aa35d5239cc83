"""Pure-loss channel on signal modes, by Kraus operators and by explicit purification.

Single-mode Kraus elements map ``|n> -> |n-l>`` with amplitude
``sqrt(C(n, l) eta^(n-l) (1-eta)^l)``, ``l`` being the number of photons
lost to the environment. Environment phases are taken all-positive; the
beam-splitter convention only adds an ``l``-dependent phase that no
reported quantity sees.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy.special import comb

from .errors import ValidationError
from .fock import ENV, DensityOperator, ModeLayout, PureState, as_density, hermitize

PARAMETRIZATIONS = ("eta", "phi")


def eta_to_phi(eta):
    return np.arccos(np.sqrt(eta))


def phi_to_eta(phi):
    return np.cos(phi) ** 2


@dataclass(frozen=True)
class LossParams:
    """Transmittances per loss element plus the parametrization used for derivatives."""

    etas: tuple[float, ...]
    parametrization: str = "eta"

    def __post_init__(self):
        etas = tuple(float(e) for e in np.atleast_1d(self.etas))
        object.__setattr__(self, "etas", etas)
        if any(not 0.0 <= e <= 1.0 for e in etas):
            raise ValidationError(f"transmittances must lie in [0, 1], got {etas}")
        if self.parametrization not in PARAMETRIZATIONS:
            raise ValidationError(f"parametrization must be one of {PARAMETRIZATIONS}")

    @classmethod
    def from_phis(cls, phis, parametrization="phi"):
        phis = np.atleast_1d(np.asarray(phis, dtype=float))
        if np.any(phis < 0) or np.any(phis > math.pi / 2):
            raise ValidationError("angles must lie in [0, pi/2]")
        return cls(tuple(phi_to_eta(phis)), parametrization)

    @property
    def phis(self):
        return tuple(float(p) for p in eta_to_phi(np.array(self.etas)))

    @property
    def theta(self):
        return self.etas if self.parametrization == "eta" else self.phis

    def with_eta(self, k, eta):
        etas = list(self.etas)
        etas[k - 1] = eta
        return LossParams(tuple(etas), self.parametrization)

    def with_phi(self, k, phi):
        etas = list(self.etas)
        etas[k - 1] = float(phi_to_eta(phi))
        return LossParams(tuple(etas), self.parametrization)

    def to_dict(self):
        return {"etas": list(self.etas), "parametrization": self.parametrization}


def kraus_stack(eta, cutoff):
    """All ``cutoff+1`` Kraus matrices as an array indexed ``[l, out, in]``."""
    n = np.arange(cutoff + 1)
    ops = np.zeros((cutoff + 1, cutoff + 1, cutoff + 1))
    for l in range(cutoff + 1):
        src = n[l:]
        ops[l, src - l, src] = np.sqrt(comb(src, l) * eta ** (src - l) * (1.0 - eta) ** l)
    return ops


def kraus_derivative_stack(eta, cutoff, parametrization="phi"):
    """d/dtheta of ``kraus_stack`` in closed form.

    In the angle parametrization the elements are ``sqrt(C) cos^(n-l) sin^l``,
    which stays differentiable at the boundaries; the transmittance form is
    singular at eta in {0, 1}.
    """
    ops = np.zeros((cutoff + 1, cutoff + 1, cutoff + 1))
    if parametrization == "phi":
        phi = float(eta_to_phi(eta))
        c, s = math.cos(phi), math.sin(phi)
        for l in range(cutoff + 1):
            for src in range(l, cutoff + 1):
                a = src - l
                val = 0.0
                if a > 0:
                    val -= a * c ** (a - 1) * s ** (l + 1)
                if l > 0:
                    val += l * c ** (a + 1) * s ** (l - 1)
                ops[l, a, src] = math.sqrt(comb(src, l)) * val
    elif parametrization == "eta":
        if not 0.0 < eta < 1.0:
            raise ValidationError("transmittance derivative undefined at eta in {0, 1}")
        for l in range(cutoff + 1):
            for src in range(l, cutoff + 1):
                a = src - l
                amp = math.sqrt(comb(src, l) * eta ** a * (1.0 - eta) ** l)
                ops[l, a, src] = amp * 0.5 * (a / eta - l / (1.0 - eta))
    else:
        raise ValidationError(f"unknown parametrization {parametrization!r}")
    return ops


def kraus_ops(eta, cutoff):
    """Nonzero single-mode Kraus matrices of the loss channel."""
    if not 0.0 <= eta <= 1.0:
        raise ValidationError("eta must lie in [0, 1]")
    return [op for op in kraus_stack(eta, cutoff) if np.any(op)]


def _mode_etas(layout, params, assignment):
    """Map each signal mode to its transmittance."""
    if assignment is None:
        assignment = {m: layout.roles[m][1] for m in layout.signal_modes}
    missing = set(layout.signal_modes) - set(assignment)
    if missing:
        raise ValidationError(f"assignment misses signal modes {sorted(missing)}")
    out = {}
    for m, k in assignment.items():
        if not 1 <= k <= len(params.etas):
            raise ValidationError(f"mode {m} assigned to unknown element {k}")
        out[m] = params.etas[k - 1]
    return out, assignment


def _apply_on_axis(t, op, axis):
    return np.moveaxis(np.tensordot(op, t, axes=([1], [axis])), 0, axis)


def _coefficients(stack):
    """``coef[l, n] = <n-l| A_l |n>``; every loss Kraus matrix is a pure shift."""
    d = stack.shape[1]
    coef = np.zeros((d, d))
    for l in range(d):
        coef[l, l:] = stack[l, np.arange(d - l), np.arange(l, d)]
    return coef


def _shifted_sum(t, left, right, m, n):
    """sum_l L_l rho R_l^T on mode ``m`` of a (ket..., bra...) tensor, L/R given as shift coefficients."""
    u = np.moveaxis(t, (m, n + m), (0, 1))
    d = u.shape[0]
    out = np.zeros_like(u)
    for l in range(d):
        w = np.outer(left[l, l:], right[l, l:]).reshape((d - l, d - l) + (1,) * (u.ndim - 2))
        if np.any(w):
            out[: d - l, : d - l] += w * u[l:, l:]
    return np.moveaxis(out, (0, 1), (m, n + m))


def _channel_on_mode(t, ops, m, n):
    """sum_l A_l rho A_l^dag on mode ``m`` of a (ket..., bra...) tensor with ``n`` modes."""
    coef = _coefficients(ops)
    return _shifted_sum(t, coef, coef, m, n)


def _derivative_on_mode(t, ops, dops, m, n):
    coef, dcoef = _coefficients(ops), _coefficients(dops)
    return _shifted_sum(t, dcoef, coef, m, n) + _shifted_sum(t, coef, dcoef, m, n)


def apply_loss(rho, params, assignment=None):
    """Reduced output state after loss on every signal mode.

    The channel is a product over modes, so it is applied mode by mode.
    """
    rho = as_density(rho)
    layout = rho.layout
    etas, _ = _mode_etas(layout, params, assignment)
    n = layout.mode_count
    t = rho.matrix.reshape(layout.dims + layout.dims)
    for m in sorted(etas):
        if etas[m] == 1.0:
            continue
        t = _channel_on_mode(t, kraus_stack(etas[m], layout.cutoffs[m]), m, n)
    return DensityOperator(layout, hermitize(t.reshape(layout.dim, layout.dim)), rho.deficit)


def loss_derivative(rho, params, k, parametrization="phi", assignment=None):
    """Derivative of ``apply_loss(rho)`` with respect to element ``k``'s parameter."""
    rho = as_density(rho)
    layout = rho.layout
    etas, assignment = _mode_etas(layout, params, assignment)
    n = layout.mode_count
    mine = [m for m in sorted(etas) if assignment[m] == k]
    if not mine:
        raise ValidationError(f"no signal modes assigned to element {k}")
    t = rho.matrix.reshape(layout.dims + layout.dims)
    for m in sorted(etas):
        if m not in mine and etas[m] != 1.0:
            t = _channel_on_mode(t, kraus_stack(etas[m], layout.cutoffs[m]), m, n)
    total = np.zeros_like(t)
    for j in mine:
        u = t
        for m in mine:
            ops = kraus_stack(etas[m], layout.cutoffs[m])
            if m == j:
                u = _derivative_on_mode(u, ops, kraus_derivative_stack(etas[m], layout.cutoffs[m], parametrization), m, n)
            else:
                u = _channel_on_mode(u, ops, m, n)
        total += u
    return hermitize(total.reshape(layout.dim, layout.dim))


@dataclass(frozen=True)
class PurifiedOutput:
    """Environment-conditioned output vectors ``{l: psi_l}`` of the signal-ancilla system.

    Keys are environment photon-number patterns over the signal modes (in
    layout order). ``dropped`` is the norm^2 of discarded components.
    """

    layout: ModeLayout
    components: dict
    dropped: float = 0.0
    derivatives: dict | None = field(default=None, compare=False)

    @property
    def total_norm2(self):
        return float(sum(np.vdot(v, v).real for v in self.components.values()))

    def reduced(self):
        """``Tr_E`` of the purified state."""
        mat = np.zeros((self.layout.dim, self.layout.dim), dtype=np.complex128)
        for v in self.components.values():
            mat += np.outer(v, v.conj())
        return DensityOperator(self.layout, hermitize(mat))

    def factor(self, keys=None):
        """Matrix whose columns are the components; ``rho = B B^dag``."""
        keys = sorted(self.components) if keys is None else keys
        zero = np.zeros(self.layout.dim, dtype=np.complex128)
        return np.stack([self.components.get(l, zero) for l in keys], axis=1)

    def to_state(self):
        """Full signal-ancilla-environment state, environment modes appended."""
        sig = self.layout.signal_modes
        env = [(self.layout.roles[m][1], self.layout.cutoffs[m]) for m in sig]
        full = ModeLayout(self.layout.cutoffs + tuple(c for _, c in env),
                          self.layout.roles + tuple((ENV, k) for k, _ in env))
        env_dims = tuple(c + 1 for _, c in env)
        amps = np.zeros((self.layout.dim,) + env_dims, dtype=np.complex128)
        for l, v in self.components.items():
            amps[(slice(None),) + tuple(l)] = v
        return PureState(full, amps.reshape(-1))


def _purify(state, etas, parametrization=None, deriv_modes=()):
    """Enumerate ``psi_l`` (and optionally d psi_l) by sweeping over signal modes."""
    layout = state.layout
    entries = {(): (state.tensor, np.zeros_like(state.tensor) if deriv_modes else None)}
    for m in sorted(etas):
        ops = kraus_stack(etas[m], layout.cutoffs[m])
        dops = kraus_derivative_stack(etas[m], layout.cutoffs[m], parametrization) if m in deriv_modes else None
        nxt = {}
        for key, (t, dt) in entries.items():
            for l in range(layout.cutoffs[m] + 1):
                if not np.any(ops[l]) and (dops is None or not np.any(dops[l])):
                    continue
                nt = _apply_on_axis(t, ops[l], m)
                nd = None
                if dt is not None:
                    nd = _apply_on_axis(dt, ops[l], m)
                    if dops is not None:
                        nd = nd + _apply_on_axis(t, dops[l], m)
                nxt[key + (l,)] = (nt, nd)
        entries = nxt
    return {l: (t.reshape(-1), None if d is None else d.reshape(-1)) for l, (t, d) in entries.items()}


def purified_evolve(probe, params, assignment=None, component_tol=1e-14):
    """Explicit purification of the loss channel acting on a pure probe."""
    etas, _ = _mode_etas(probe.layout, params, assignment)
    comps, dropped = {}, 0.0
    for l, (v, _) in _purify(probe, etas).items():
        w = float(np.vdot(v, v).real)
        if w > component_tol:
            comps[l] = v
        else:
            dropped += w
    return PurifiedOutput(probe.layout, comps, dropped)


def purified_derivatives(probe, params, k, parametrization="phi", assignment=None):
    """``(psi_l, d psi_l / d theta_k)`` for every environment pattern, unfiltered."""
    etas, assignment = _mode_etas(probe.layout, params, assignment)
    mine = {m for m, kk in assignment.items() if kk == k}
    if not mine:
        raise ValidationError(f"no signal modes assigned to element {k}")
    return _purify(probe, etas, parametrization, mine)
