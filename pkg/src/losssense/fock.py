"""Truncated multimode Fock space: layouts, states, partial traces and probes.

Basis ordering is lexicographic over mode occupations with mode 0 most
significant (numpy C order). Ancilla modes always come first, then signal
modes grouped by loss element, then environment modes. The binary and JSON
state formats depend on this ordering.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from itertools import product
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.stats import poisson

from .errors import CutoffError, ValidationError

ANCILLA = "ancilla"
SIGNAL = "signal"
ENV = "env"
_ROLE_RANK = {ANCILLA: 0, SIGNAL: 1, ENV: 2}

EPS_TRUNC = 1e-8

PROBE_KINDS = ("generic_nds", "tmsv", "coherent", "single_photon_eq16", "ecb_optimal", "custom")
ANCILLA_POLICIES = ("orthonormal_min", "none")


def _role_key(role):
    kind, k = role
    return (_ROLE_RANK[kind], k)


@dataclass(frozen=True)
class ModeLayout:
    """Per-mode cutoffs and roles.

    ``roles[m]`` is ``("ancilla", 0)``, ``("signal", k)`` or ``("env", k)``
    with ``k`` the 1-based loss element index.
    """

    cutoffs: tuple[int, ...]
    roles: tuple[tuple[str, int], ...]

    def __post_init__(self):
        cutoffs = tuple(int(c) for c in self.cutoffs)
        roles = tuple((str(r[0]), int(r[1])) for r in self.roles)
        object.__setattr__(self, "cutoffs", cutoffs)
        object.__setattr__(self, "roles", roles)
        if len(cutoffs) != len(roles):
            raise ValidationError("cutoffs and roles must have equal length")
        if any(c < 0 for c in cutoffs):
            raise ValidationError("cutoffs must be nonnegative")
        for kind, k in roles:
            if kind not in _ROLE_RANK:
                raise ValidationError(f"unknown mode role {kind!r}")
            if kind == ANCILLA and k != 0:
                raise ValidationError("ancilla modes carry element index 0")
            if kind != ANCILLA and k < 1:
                raise ValidationError("signal/env element indices start at 1")
        keys = [_role_key(r) for r in roles]
        if keys != sorted(keys):
            raise ValidationError("modes must be ordered ancilla, signal by element, env by element")

    @classmethod
    def build(cls, ancilla=(), signal=(), env=()):
        """Build from ``ancilla`` cutoffs and ``(k, cutoff)`` pairs for signal/env modes."""
        cutoffs = list(ancilla) + [c for _, c in signal] + [c for _, c in env]
        roles = [(ANCILLA, 0)] * len(ancilla) + [(SIGNAL, k) for k, _ in signal] + [(ENV, k) for k, _ in env]
        return cls(tuple(cutoffs), tuple(roles))

    @property
    def mode_count(self):
        return len(self.cutoffs)

    @property
    def dims(self):
        return tuple(c + 1 for c in self.cutoffs)

    @property
    def dim(self):
        return math.prod(self.dims)

    def modes_with(self, kind, k=None):
        return tuple(m for m, r in enumerate(self.roles) if r[0] == kind and (k is None or r[1] == k))

    @property
    def ancilla_modes(self):
        return self.modes_with(ANCILLA)

    @property
    def signal_modes(self):
        return self.modes_with(SIGNAL)

    @property
    def env_modes(self):
        return self.modes_with(ENV)

    @property
    def elements(self):
        return tuple(sorted({k for kind, k in self.roles if kind == SIGNAL}))

    def element_modes(self, k):
        modes = self.modes_with(SIGNAL, k)
        if not modes:
            raise ValidationError(f"no signal modes for element {k}")
        return modes

    def sub(self, modes):
        modes = sorted(modes)
        return ModeLayout(tuple(self.cutoffs[m] for m in modes), tuple(self.roles[m] for m in modes))

    def basis_index(self, occupation):
        return int(np.ravel_multi_index(tuple(occupation), self.dims))

    def occupations(self):
        """All occupation tuples in basis order."""
        return list(product(*(range(d) for d in self.dims)))

    def to_dict(self):
        return {"cutoffs": list(self.cutoffs), "roles": [list(r) for r in self.roles]}

    @classmethod
    def from_dict(cls, data):
        return cls(tuple(data["cutoffs"]), tuple(tuple(r) for r in data["roles"]))


def _readonly(arr):
    arr = np.array(arr, dtype=np.complex128, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PureState:
    """State vector on a truncated layout.

    ``deficit`` is the probability mass discarded by truncation before the
    amplitudes were renormalized.
    """

    layout: ModeLayout
    amplitudes: np.ndarray
    deficit: float = 0.0

    def __post_init__(self):
        amps = _readonly(self.amplitudes).reshape(-1)
        if amps.size != self.layout.dim:
            raise ValidationError(f"expected {self.layout.dim} amplitudes, got {amps.size}")
        norm2 = float(np.vdot(amps, amps).real)
        if not 0.0 < norm2 <= 1.0 + 1e-9:
            raise ValidationError(f"state norm^2 {norm2} outside (0, 1]")
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "deficit", float(self.deficit))

    @property
    def tensor(self):
        return self.amplitudes.reshape(self.layout.dims)

    @property
    def norm(self):
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self):
        return PureState(self.layout, self.amplitudes / self.norm, self.deficit)

    def density(self):
        return DensityOperator(self.layout, np.outer(self.amplitudes, self.amplitudes.conj()), self.deficit)


@dataclass(frozen=True)
class DensityOperator:
    layout: ModeLayout
    matrix: np.ndarray
    deficit: float = 0.0

    def __post_init__(self):
        mat = _readonly(self.matrix)
        d = self.layout.dim
        if mat.shape != (d, d):
            raise ValidationError(f"expected {d}x{d} matrix, got {mat.shape}")
        if np.max(np.abs(mat - mat.conj().T), initial=0.0) > 1e-12:
            raise ValidationError("density matrix is not Hermitian")
        object.__setattr__(self, "matrix", mat)
        object.__setattr__(self, "deficit", float(self.deficit))

    @property
    def trace(self):
        return float(np.trace(self.matrix).real)

    def check_psd(self, floor=-1e-10):
        lo = float(np.linalg.eigvalsh(self.matrix)[0])
        if lo < floor:
            raise ValidationError(f"density matrix has eigenvalue {lo:.3e} below {floor:g}")
        return lo


def hermitize(mat):
    return 0.5 * (mat + mat.conj().T)


def as_density(obj):
    if isinstance(obj, DensityOperator):
        return obj
    if isinstance(obj, PureState):
        return obj.density()
    raise TypeError(f"expected PureState or DensityOperator, got {type(obj).__name__}")


# --- structural operations -------------------------------------------------

def tensor(*states):
    """Tensor product of pure states, reordered into canonical mode order.

    Element labels are kept as given, so two factors both labelled element 1
    end up as extra signal modes of that element.
    """
    if not states:
        raise ValidationError("tensor of nothing")
    cutoffs, roles = [], []
    amps = np.ones(1, dtype=np.complex128)
    keep = 1.0
    for s in states:
        cutoffs += s.layout.cutoffs
        roles += s.layout.roles
        amps = np.multiply.outer(amps, s.amplitudes).reshape(-1)
        keep *= 1.0 - s.deficit
    dims = tuple(c + 1 for c in cutoffs)
    perm = sorted(range(len(roles)), key=lambda m: (_role_key(roles[m]), m))
    amps = amps.reshape(dims).transpose(perm).reshape(-1)
    layout = ModeLayout(tuple(cutoffs[m] for m in perm), tuple(roles[m] for m in perm))
    return PureState(layout, amps, 1.0 - keep)


def partial_trace(state, modes_to_drop):
    """Reduced density operator after tracing out ``modes_to_drop``."""
    layout = state.layout
    drop = sorted(set(modes_to_drop))
    if any(m < 0 or m >= layout.mode_count for m in drop):
        raise ValidationError(f"modes {drop} not in layout")
    keep = [m for m in range(layout.mode_count) if m not in drop]
    if not keep:
        raise ValidationError("partial trace would leave no modes")
    sub = layout.sub(keep)
    n = layout.mode_count
    if isinstance(state, PureState):
        t = state.tensor
        rho = np.tensordot(t, t.conj(), axes=(drop, drop))
    else:
        t = state.matrix.reshape(layout.dims + layout.dims)
        letters = [chr(ord("a") + i) for i in range(2 * n)] if 2 * n <= 26 else None
        if letters is None:
            raise ValidationError("too many modes for dense partial trace")
        ket = letters[:n]
        bra = [ket[m] if m in drop else letters[n + m] for m in range(n)]
        out = [ket[m] for m in keep] + [bra[m] for m in keep]
        rho = np.einsum("".join(ket + bra) + "->" + "".join(out), t)
    rho = rho.reshape(sub.dim, sub.dim)
    return DensityOperator(sub, hermitize(rho), state.deficit)


def apply_local_unitary(state, modes, unitary):
    """Apply ``unitary`` on the joint space of ``modes`` (listed in layout order)."""
    modes = list(modes)
    dims = state.layout.dims
    sub = [dims[m] for m in modes]
    u = np.asarray(unitary, dtype=np.complex128)
    d = math.prod(sub)
    if u.shape != (d, d):
        raise ValidationError(f"unitary must be {d}x{d}")
    t = np.moveaxis(state.tensor, modes, range(len(modes)))
    rest = t.shape[len(modes):]
    t = (u @ t.reshape(d, -1)).reshape(tuple(sub) + rest)
    t = np.moveaxis(t, range(len(modes)), modes)
    return PureState(state.layout, t.reshape(-1), state.deficit)


@dataclass(frozen=True)
class SchmidtDecomposition:
    weights: np.ndarray
    first_vectors: np.ndarray  # columns
    second_vectors: np.ndarray  # columns
    dropped: float

    @property
    def terms(self):
        return [(float(w), self.first_vectors[:, i], self.second_vectors[:, i]) for i, w in enumerate(self.weights)]

    def __len__(self):
        return len(self.weights)

    def reconstruct(self):
        return (self.first_vectors * np.sqrt(self.weights)) @ self.second_vectors.T


def _bipartite_matrix(state, first, second):
    layout = state.layout
    first, second = list(first), list(second)
    if sorted(first + second) != list(range(layout.mode_count)):
        raise ValidationError("bipartition must cover every mode exactly once")
    t = state.tensor.transpose(first + second)
    da = math.prod(layout.dims[m] for m in first)
    return t.reshape(da, -1)


def schmidt_decompose(state, bipartition=None, rank_tol=1e-14):
    """Schmidt decomposition across ``(first_modes, second_modes)``.

    Defaults to ancilla modes versus everything else. Terms with weight below
    ``rank_tol`` are dropped and their total weight reported in ``dropped``.
    ``reconstruct()`` returns the amplitude matrix with rows indexed by the
    first part.
    """
    layout = state.layout
    if bipartition is None:
        first = list(layout.ancilla_modes)
        bipartition = (first, [m for m in range(layout.mode_count) if m not in first])
    psi = _bipartite_matrix(state, *bipartition)
    u, s, vh = np.linalg.svd(psi, full_matrices=False)
    w = s ** 2
    keep = w > rank_tol
    return SchmidtDecomposition(w[keep], u[:, keep], vh[keep].T, float(w[~keep].sum()))


def number_distribution(state, k=None):
    """Distribution of total photon number in element ``k`` (all signal modes if None)."""
    layout = state.layout
    modes = layout.signal_modes if k is None else layout.element_modes(k)
    if isinstance(state, PureState):
        probs = np.abs(state.amplitudes) ** 2
    else:
        probs = np.real(np.diag(state.matrix))
    occ = np.indices(layout.dims).reshape(layout.mode_count, -1)
    totals = occ[list(modes)].sum(axis=0)
    return np.bincount(totals, weights=probs, minlength=sum(layout.cutoffs[m] for m in modes) + 1)


def energy(state, k=None):
    """Mean photon number in the signal modes of element ``k``."""
    p = number_distribution(state, k)
    return float(np.dot(np.arange(p.size), p))


def is_number_diagonal(state, tol=1e-12):
    """True when the signal reduced state is diagonal in the Fock basis."""
    layout = state.layout
    if not layout.ancilla_modes and isinstance(state, PureState):
        nz = np.count_nonzero(np.abs(state.amplitudes) > tol)
        return nz <= 1
    drop = [m for m in range(layout.mode_count) if layout.roles[m][0] != SIGNAL]
    rho = partial_trace(state, drop).matrix if drop else as_density(state).matrix
    off = rho - np.diag(np.diag(rho))
    return float(np.max(np.abs(off), initial=0.0)) < tol


# --- probes -----------------------------------------------------------------

def _frac(x):
    return x - math.floor(x)


def _parse_pattern(key, modes):
    if isinstance(key, str):
        parts = [int(p) for p in key.replace("(", "").replace(")", "").split(",") if p.strip()]
        key = parts[0] if len(parts) == 1 else tuple(parts)
    if isinstance(key, (int, np.integer)):
        return (int(key),) + (0,) * (modes - 1)
    pattern = tuple(int(v) for v in key)
    if len(pattern) != modes:
        raise ValidationError(f"pattern {pattern} does not match {modes} signal modes")
    return pattern


@dataclass(frozen=True)
class ProbeSpec:
    """Declarative signal-ancilla probe, one entry per loss element.

    ``distribution`` holds, per element, a mapping from photon number (int,
    placed in the first signal mode) or per-mode pattern (tuple) to
    probability. ``amplitudes`` optionally gives coherent amplitudes per
    element and mode. ``cutoff`` forces a uniform signal cutoff.
    """

    kind: str
    energies: tuple[float, ...] | None = None
    modes: tuple[int, ...] | None = None
    distribution: tuple[Mapping, ...] | None = None
    amplitudes: tuple[tuple[complex, ...], ...] | None = None
    cutoff: int | None = None

    def __post_init__(self):
        if self.kind not in PROBE_KINDS:
            raise ValidationError(f"unknown probe kind {self.kind!r}; expected one of {PROBE_KINDS}")
        if self.energies is not None:
            object.__setattr__(self, "energies", tuple(float(n) for n in self.energies))
            if any(n < 0 or not math.isfinite(n) for n in self.energies):
                raise ValidationError("energies must be finite and nonnegative")
        if self.modes is not None:
            object.__setattr__(self, "modes", tuple(int(m) for m in self.modes))
            if any(m < 1 for m in self.modes):
                raise ValidationError("each element needs at least one signal mode")
        if self.distribution is not None:
            object.__setattr__(self, "distribution", tuple(dict(d) for d in self.distribution))
        if self.amplitudes is not None:
            object.__setattr__(self, "amplitudes", tuple(tuple(complex(a) for a in row) for row in self.amplitudes))
        if self.cutoff is not None and int(self.cutoff) < 0:
            raise ValidationError("cutoff must be nonnegative")
        counts = {len(v) for v in (self.energies, self.modes, self.distribution, self.amplitudes) if v is not None}
        if len(counts) > 1:
            raise ValidationError("per-element fields disagree on the number of elements")
        if not counts:
            raise ValidationError("probe needs energies, distribution or amplitudes")

    @property
    def element_count(self):
        for v in (self.energies, self.distribution, self.amplitudes, self.modes):
            if v is not None:
                return len(v)

    def element(self, k):
        """Single-element spec for element ``k`` (1-based)."""
        pick = lambda v: None if v is None else (v[k - 1],)
        return ProbeSpec(self.kind, pick(self.energies), pick(self.modes), pick(self.distribution),
                         pick(self.amplitudes), self.cutoff)

    def to_dict(self):
        out = {"kind": self.kind}
        if self.energies is not None:
            out["energies"] = list(self.energies)
        if self.modes is not None:
            out["modes"] = list(self.modes)
        if self.distribution is not None:
            out["distribution"] = [
                {(str(n) if isinstance(n, (int, np.integer)) else ",".join(map(str, n))): float(p) for n, p in d.items()}
                for d in self.distribution
            ]
        if self.amplitudes is not None:
            out["amplitudes"] = [[[a.real, a.imag] for a in row] for row in self.amplitudes]
        if self.cutoff is not None:
            out["cutoff"] = int(self.cutoff)
        return out

    @classmethod
    def from_dict(cls, data):
        allowed = {"kind", "energies", "modes", "distribution", "amplitudes", "cutoff"}
        unknown = set(data) - allowed
        if unknown:
            raise ValidationError(f"unknown probe keys: {sorted(unknown)}")
        if "kind" not in data:
            raise ValidationError("probe.kind is required")
        dist = data.get("distribution")
        if dist is not None:
            if isinstance(dist, Mapping):
                dist = [dist]
            dist = [{_normalize_key(n): float(p) for n, p in d.items()} for d in dist]
        amps = data.get("amplitudes")
        if amps is not None:
            amps = [[complex(*a) if isinstance(a, (list, tuple)) else complex(a) for a in row] for row in amps]
        return cls(
            kind=data["kind"],
            energies=_as_tuple(data.get("energies")),
            modes=_as_tuple(data.get("modes")),
            distribution=dist,
            amplitudes=amps,
            cutoff=data.get("cutoff"),
        )


def _normalize_key(n):
    if isinstance(n, str):
        parts = [int(p) for p in n.replace("(", "").replace(")", "").split(",") if p.strip()]
        return parts[0] if len(parts) == 1 else tuple(parts)
    if isinstance(n, (list, tuple)):
        return tuple(int(v) for v in n)
    return int(n)


def _as_tuple(v):
    if v is None:
        return None
    if isinstance(v, (int, float)):
        return (v,)
    return tuple(v)


def _nds_element(k, patterns, weights, policy, cutoff, eps_trunc, force, required_modes):
    """|psi> = sum_j sqrt(w_j) |j>_A |pattern_j>_S for one element."""
    weights = np.asarray(weights, dtype=float)
    if np.any(weights < 0):
        raise ValidationError("probabilities must be nonnegative")
    total = float(weights.sum())
    deficit = 1.0 - total
    if deficit < -1e-12:
        raise ValidationError(f"probabilities sum to {total} > 1")
    if deficit > eps_trunc and not force:
        raise ValidationError(f"distribution deficit {deficit:.3e} exceeds eps_trunc {eps_trunc:g}")
    weights = weights / total
    need = [max(p[m] for p in patterns) for m in range(required_modes)]
    if cutoff is not None:
        if cutoff < max(need):
            raise CutoffError(f"cutoff {cutoff} cannot hold photon pattern support; need {max(need)}", max(need))
        cut = [cutoff] * required_modes
    else:
        cut = need
    signal = [(k, c) for c in cut]
    if policy == "orthonormal_min":
        layout = ModeLayout.build(ancilla=[len(patterns) - 1], signal=signal)
        amps = np.zeros(layout.dims, dtype=np.complex128)
        for j, (pat, w) in enumerate(zip(patterns, weights)):
            amps[(j,) + pat] = math.sqrt(w)
    else:
        layout = ModeLayout.build(signal=signal)
        amps = np.zeros(layout.dims, dtype=np.complex128)
        for pat, w in zip(patterns, weights):
            amps[pat] += math.sqrt(w)
    return PureState(layout, amps.reshape(-1), max(deficit, 0.0))


def _tmsv_copy(k, nbar, cutoff, eps_trunc, force):
    """Two-mode squeezed vacuum with signal energy exactly ``nbar`` at ``cutoff``.

    The thermal ratio is refitted so the truncated, renormalized spectrum has
    the requested mean; the deviation from the untruncated geometric spectrum
    is what gets checked against the tolerance.
    """
    n = np.arange(cutoff + 1)
    ideal = nbar ** n / (1.0 + nbar) ** (n + 1)
    if nbar == 0:
        p = np.zeros(cutoff + 1)
        p[0] = 1.0
    else:
        if nbar >= cutoff / 2:
            raise CutoffError(f"TMSV energy {nbar} not representable at cutoff {cutoff}", _tmsv_cutoff(nbar, eps_trunc))

        def mean_gap(x):
            w = x ** n
            return float(np.dot(n, w) / w.sum()) - nbar

        x = brentq(mean_gap, 1e-300, 1.0 - 1e-15, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
        p = x ** n
        p /= p.sum()
    if np.max(np.abs(p - ideal)) > 100 * eps_trunc and not force:
        raise CutoffError(
            f"TMSV energy {nbar} not representable within tolerance at cutoff {cutoff}",
            _tmsv_cutoff(nbar, eps_trunc),
        )
    layout = ModeLayout.build(ancilla=[cutoff], signal=[(k, cutoff)])
    amps = np.zeros(layout.dims, dtype=np.complex128)
    amps[n, n] = np.sqrt(p)
    return PureState(layout, amps.reshape(-1), float(1.0 - ideal.sum()))


def _tmsv_cutoff(nbar, eps_trunc):
    if nbar == 0:
        return 0
    x = nbar / (1.0 + nbar)
    # tail beyond c is x**(c+1); deviation test uses 100*eps_trunc
    return max(1, math.ceil(math.log(100 * eps_trunc) / math.log(x)))


def _coherent_mode(k, alpha, cutoff, eps_trunc, force):
    nbar = abs(alpha) ** 2
    if cutoff is None:
        cutoff = int(poisson.isf(1e-16, nbar)) + 2 if nbar > 0 else 0
    n = np.arange(cutoff + 1)
    logs = -0.5 * nbar + n * (math.log(abs(alpha)) if alpha != 0 else 0.0) - 0.5 * np.array([math.lgamma(i + 1) for i in n])
    amps = np.exp(logs) * np.exp(1j * np.angle(alpha) * n)
    if alpha == 0:
        amps = np.zeros(cutoff + 1, dtype=np.complex128)
        amps[0] = 1.0
    tail = float(poisson.sf(cutoff, nbar)) if nbar > 0 else 0.0
    if tail > eps_trunc and not force:
        need = int(poisson.isf(eps_trunc, nbar)) + 1
        raise CutoffError(f"coherent state |alpha|^2={nbar} loses {tail:.3e} at cutoff {cutoff}", need)
    amps = amps / np.linalg.norm(amps)
    return PureState(ModeLayout.build(signal=[(k, cutoff)]), amps, tail)


def _single_photon_element(k, n_energy, modes):
    if n_energy <= 0:
        raise ValidationError("single-photon probe needs positive energy")
    lo, f = math.floor(n_energy), _frac(n_energy)
    if f < 1e-12:
        f = 0.0
    m = lo + (1 if f > 0 else 0)
    if modes is not None and modes != m:
        raise ValidationError(f"single-photon probe with N={n_energy} uses {m} signal modes, got {modes}")
    layout = ModeLayout.build(ancilla=[1], signal=[(k, 1)] * m)
    amps = np.zeros(layout.dims, dtype=np.complex128)
    ones = (1,) * lo
    if f == 0:
        amps[(1,) + ones] = 1.0
    else:
        amps[(1,) + ones + (0,)] = math.sqrt(1.0 - f)
        amps[(0,) + ones + (1,)] = math.sqrt(f)
    return PureState(layout, amps.reshape(-1))


def build_probe(spec, ancilla_policy="orthonormal_min", eps_trunc=EPS_TRUNC, force=False):
    """Construct the probe state described by ``spec``.

    Multi-element specs give a product over elements. ``ancilla_policy``
    applies to distribution-based kinds: ``orthonormal_min`` attaches one
    ancilla basis vector per support point (an NDS probe), ``none`` builds a
    plain superposition on the signal modes.
    """
    if ancilla_policy not in ANCILLA_POLICIES:
        raise ValidationError(f"unknown ancilla policy {ancilla_policy!r}")
    factors = []
    for k in range(1, spec.element_count + 1):
        n_k = None if spec.energies is None else spec.energies[k - 1]
        m_k = None if spec.modes is None else spec.modes[k - 1]
        if spec.kind in ("generic_nds", "custom", "ecb_optimal"):
            if spec.kind == "ecb_optimal":
                if n_k is None:
                    raise ValidationError("ecb_optimal probe needs energies")
                m_k = m_k or 1
                lo, f = math.floor(n_k), _frac(n_k)
                dist = {lo: 1.0 - f, lo + 1: f} if f > 1e-12 else {int(round(n_k)): 1.0}
            else:
                if spec.distribution is None:
                    raise ValidationError(f"{spec.kind} probe needs a distribution")
                dist = spec.distribution[k - 1]
                if m_k is None:
                    keys = [key for key in dist if not isinstance(key, (int, np.integer))]
                    m_k = len(_normalize_key(keys[0])) if keys else 1
            items = sorted((_parse_pattern(key, m_k), float(p)) for key, p in dist.items() if float(p) > 0)
            if not items:
                raise ValidationError("distribution has no support")
            patterns = [pat for pat, _ in items]
            weights = [p for _, p in items]
            mean = sum(sum(pat) * p for pat, p in items) / sum(weights)
            if spec.kind == "generic_nds" and n_k is None:
                raise ValidationError("generic_nds probe needs declared energies")
            if n_k is not None and abs(mean - n_k) > 1e-9:
                raise ValidationError(f"distribution mean {mean} does not match energy {n_k} for element {k}")
            factors.append(_nds_element(k, patterns, weights, ancilla_policy, spec.cutoff, eps_trunc, force, m_k))
        elif spec.kind == "tmsv":
            if n_k is None:
                raise ValidationError("tmsv probe needs energies")
            m_k = m_k or 1
            nbar = n_k / m_k
            cutoff = spec.cutoff if spec.cutoff is not None else _tmsv_cutoff(nbar, eps_trunc)
            factors += [_tmsv_copy(k, nbar, cutoff, eps_trunc, force) for _ in range(m_k)]
        elif spec.kind == "coherent":
            if spec.amplitudes is not None:
                alphas = spec.amplitudes[k - 1]
                if m_k is not None and len(alphas) != m_k:
                    raise ValidationError("amplitude count does not match modes")
                if n_k is not None and abs(sum(abs(a) ** 2 for a in alphas) - n_k) > 1e-9:
                    raise ValidationError("coherent amplitudes do not match declared energy")
            else:
                if n_k is None:
                    raise ValidationError("coherent probe needs energies or amplitudes")
                m_k = m_k or 1
                alphas = [math.sqrt(n_k / m_k)] * m_k
            factors += [_coherent_mode(k, a, spec.cutoff, eps_trunc, force) for a in alphas]
        elif spec.kind == "single_photon_eq16":
            if n_k is None:
                raise ValidationError("single-photon probe needs energies")
            factors.append(_single_photon_element(k, n_k, m_k))
    return tensor(*factors)


def single_photon_probe(n_energy):
    """Single-photon/linear-optics probe with fractional energy split into one mode."""
    return build_probe(ProbeSpec("single_photon_eq16", energies=(n_energy,)))


def tmsv_probe(n_energy, cutoff, copies=1, eps_trunc=EPS_TRUNC, force=False):
    return build_probe(ProbeSpec("tmsv", energies=(n_energy,), modes=(copies,), cutoff=cutoff),
                       eps_trunc=eps_trunc, force=force)


def nds_probe(distribution, modes=1, cutoff=None):
    """NDS probe with a minimal orthonormal ancilla for ``{n: p_n}``."""
    dist = dict(distribution)
    mean = sum(sum(_parse_pattern(n, modes)) * p for n, p in dist.items()) / sum(dist.values())
    return build_probe(ProbeSpec("generic_nds", energies=(mean,), modes=(modes,), distribution=(dist,), cutoff=cutoff))


def coherent_probe(n_energy, cutoff=None, modes=1):
    return build_probe(ProbeSpec("coherent", energies=(n_energy,), modes=(modes,), cutoff=cutoff))


def random_state(layout, rng):
    """Haar-random pure state on ``layout``."""
    z = rng.standard_normal(layout.dim) + 1j * rng.standard_normal(layout.dim)
    return PureState(layout, z / np.linalg.norm(z))


def random_unitary(dim, rng):
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / math.sqrt(2)
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


# --- serialization ----------------------------------------------------------

_MAGIC = b"LSPS"
_VERSION = 1


def state_to_json(state):
    return json.dumps({
        "layout": state.layout.to_dict(),
        "deficit": state.deficit,
        "amplitudes": [[float(a.real), float(a.imag)] for a in state.amplitudes],
    })


def state_from_json(text):
    data = json.loads(text)
    amps = np.array([complex(re, im) for re, im in data["amplitudes"]], dtype=np.complex128)
    return PureState(ModeLayout.from_dict(data["layout"]), amps, data.get("deficit", 0.0))


def state_to_bytes(state):
    """``LSPS`` magic, u32 version, u32 header length, JSON header, little-endian complex128 data."""
    header = json.dumps({"layout": state.layout.to_dict(), "deficit": state.deficit}).encode()
    data = state.amplitudes.astype("<c16").tobytes()
    return _MAGIC + struct.pack("<II", _VERSION, len(header)) + header + data


def state_from_bytes(blob):
    if blob[:4] != _MAGIC:
        raise ValidationError("not a state file")
    version, hlen = struct.unpack("<II", blob[4:12])
    if version != _VERSION:
        raise ValidationError(f"unsupported state file version {version}")
    header = json.loads(blob[12:12 + hlen].decode())
    amps = np.frombuffer(blob[12 + hlen:], dtype="<c16").astype(np.complex128)
    return PureState(ModeLayout.from_dict(header["layout"]), amps, header.get("deficit", 0.0))


def dump_state(state, path, fmt="binary"):
    if fmt == "binary":
        with open(path, "wb") as fh:
            fh.write(state_to_bytes(state))
    elif fmt == "json":
        with open(path, "w") as fh:
            fh.write(state_to_json(state))
    else:
        raise ValidationError(f"unknown state format {fmt!r}")


def load_state(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] == _MAGIC:
        return state_from_bytes(blob)
    return state_from_json(blob.decode())
