"""POVMs for loss sensing, outcome distributions and multinomial sampling."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from itertools import product

import numpy as np

from .errors import ValidationError
from .fock import DensityOperator, PureState

PROB_FLOOR = -1e-12


@dataclass(frozen=True)
class Povm:
    """POVM stored as factors: effect ``x`` is ``F_x F_x^dag``.

    Factored storage keeps projective measurements at O(dim^2) memory; every
    effect is PSD by construction.
    """

    factors: tuple
    labels: tuple

    def __post_init__(self):
        factors = tuple(np.asarray(f, dtype=np.complex128).reshape(f.shape[0], -1) for f in self.factors)
        object.__setattr__(self, "factors", factors)
        object.__setattr__(self, "labels", tuple(self.labels))
        if len(factors) != len(self.labels):
            raise ValidationError("one label per effect required")
        if not factors:
            raise ValidationError("empty POVM")
        dims = {f.shape[0] for f in factors}
        if len(dims) != 1:
            raise ValidationError("effects act on different dimensions")
        stacked = np.concatenate(factors, axis=1)
        resid = np.max(np.abs(stacked @ stacked.conj().T - np.eye(self.dim)))
        if resid > 1e-10:
            raise ValidationError(f"effects do not sum to identity (residual {resid:.3e})")

    @classmethod
    def from_effects(cls, effects, labels=None):
        factors = []
        for e in effects:
            e = np.asarray(e, dtype=np.complex128)
            vals, vecs = np.linalg.eigh(0.5 * (e + e.conj().T))
            if vals[0] < -1e-12:
                raise ValidationError(f"effect not PSD (eigenvalue {vals[0]:.3e})")
            keep = vals > 1e-14
            factors.append(vecs[:, keep] * np.sqrt(vals[keep]))
        labels = tuple(range(len(factors))) if labels is None else labels
        return cls(tuple(factors), tuple(labels))

    @property
    def dim(self):
        return self.factors[0].shape[0]

    def __len__(self):
        return len(self.factors)

    @property
    def effects(self):
        return [f @ f.conj().T for f in self.factors]

    def expectations(self, op):
        """``Re Tr(op E_x)`` for every outcome."""
        op = np.asarray(op)
        if op.shape != (self.dim, self.dim):
            raise ValidationError(f"operator shape {op.shape} does not match POVM dimension {self.dim}")
        g = self._stacked
        cols = np.einsum("ir,ir->r", g.conj(), op @ g).real
        owner = np.repeat(np.arange(len(self.factors)), [f.shape[1] for f in self.factors])
        return np.bincount(owner, weights=cols, minlength=len(self.factors))

    @property
    def _stacked(self):
        return np.concatenate(self.factors, axis=1)


def _label(pattern):
    return ",".join(str(int(v)) for v in pattern)


def schmidt_povm(probe, tol=1e-10):
    """Joint measurement of the probe's ancilla Schmidt basis and signal photon numbers.

    Ancilla vectors are read off per signal number pattern (``<n|_S psi``),
    which is the Schmidt basis for number-diagonal probes even when Schmidt
    weights are degenerate. A completion projector covers the ancilla
    complement when the vectors do not span it.
    """
    layout = probe.layout
    a_modes = layout.ancilla_modes
    s_modes = [m for m in range(layout.mode_count) if m not in a_modes]
    da = math.prod(layout.dims[m] for m in a_modes)
    ds = layout.dim // da
    psi = probe.amplitudes.reshape(da, ds)
    s_layout = layout.sub(s_modes)
    s_occ = s_layout.occupations()

    chis, chi_labels = [], []
    for q in range(ds):
        col = psi[:, q]
        nrm = np.linalg.norm(col)
        if nrm <= tol:
            continue
        v = col / nrm
        overlaps = [abs(np.vdot(c, v)) for c in chis]
        if any(o > 1 - 1e-9 for o in overlaps):
            continue
        if any(o > 1e-9 for o in overlaps):
            raise ValidationError("probe is not number-diagonal: ancilla states overlap")
        chis.append(v)
        chi_labels.append(_label(s_occ[q]))

    eye_s = np.eye(ds)
    factors, labels = [], []
    for chi, cl in zip(chis, chi_labels):
        block = np.kron(chi[:, None], eye_s)
        for q in range(ds):
            factors.append(block[:, q])
            labels.append((cl, _label(s_occ[q])))
    if len(chis) < da:
        basis = np.stack(chis, axis=1)
        u, _, _ = np.linalg.svd(basis, full_matrices=True)
        comp = u[:, len(chis):]
        factors.append(np.kron(comp, eye_s))
        labels.append(("completion", "*"))
    return Povm(tuple(f.reshape(layout.dim, -1) for f in factors), tuple(labels))


def _occupation_matrix(layout, modes):
    occ = np.indices(layout.dims).reshape(layout.mode_count, -1)
    return occ[list(modes)]


def on_off_povm(layout, modes=None):
    """Vacuum / at-least-one-photon detection on each listed mode (all modes by default)."""
    modes = list(range(layout.mode_count)) if modes is None else list(modes)
    if not modes:
        raise ValidationError("on-off detection needs at least one mode")
    clicks = _occupation_matrix(layout, modes) > 0
    eye = np.eye(layout.dim)
    factors, labels = [], []
    for pattern in product((False, True), repeat=len(modes)):
        mask = np.all(clicks == np.array(pattern)[:, None], axis=0)
        factors.append(eye[:, mask])
        labels.append("-".join("on" if p else "off" for p in pattern))
    return Povm(tuple(factors), tuple(labels))


def photon_counting_povm(layout, modes=None):
    """Number-resolving detection on each listed mode (all modes by default)."""
    modes = list(range(layout.mode_count)) if modes is None else list(modes)
    if not modes:
        raise ValidationError("photon counting needs at least one mode")
    occ = _occupation_matrix(layout, modes)
    eye = np.eye(layout.dim)
    factors, labels = [], []
    for pattern in product(*(range(layout.dims[m]) for m in modes)):
        mask = np.all(occ == np.array(pattern)[:, None], axis=0)
        factors.append(eye[:, mask])
        labels.append(_label(pattern))
    return Povm(tuple(factors), tuple(labels))


def outcome_distribution(rho, povm, eps_trunc=1e-8):
    """Outcome probabilities ``Tr(rho E_x)``, tiny negatives clipped to zero."""
    if isinstance(rho, PureState):
        rho = rho.density()
    mat = rho.matrix if isinstance(rho, DensityOperator) else np.asarray(rho)
    p = povm.expectations(mat)
    if p.min() < PROB_FLOOR:
        raise ValidationError(f"negative outcome probability {p.min():.3e}")
    p = np.clip(p, 0.0, None)
    total = p.sum()
    if not 1.0 - eps_trunc <= total <= 1.0 + 1e-10:
        raise ValidationError(f"outcome probabilities sum to {total}")
    return p


def rng_for(seed, *stream):
    """Counter-based generator for ``(seed, *stream)``; streams are independent of scheduling."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream))))


def sample(dist, shots, seed, stream=()):
    """Multinomial outcome counts for ``shots`` draws from ``dist``."""
    if shots < 1:
        raise ValidationError("shots must be at least 1")
    p = np.asarray(dist, dtype=float)
    p = p / p.sum()
    return rng_for(seed, *stream).multinomial(int(shots), p)


def write_outcome_csv(fh, labels, probabilities, counts=None):
    """Rows of ``label, probability, count``."""
    writer = csv.writer(fh)
    writer.writerow(["label", "probability", "count"])
    for i, (lab, p) in enumerate(zip(labels, probabilities)):
        lab = "/".join(lab) if isinstance(lab, tuple) else str(lab)
        writer.writerow([lab, repr(float(p)), "" if counts is None else int(counts[i])])
