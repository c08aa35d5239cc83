"""Energy-constrained Bures distance between M-mode pure-loss channels."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CutoffError, ValidationError
from .fock import ProbeSpec, build_probe


@dataclass(frozen=True)
class EcbQuery:
    eta: float
    eta_prime: float
    energy: float
    modes: int = 1
    n_max: int | None = None

    def __post_init__(self):
        for name in ("eta", "eta_prime"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1], got {v}")
        if self.energy < 0 or not math.isfinite(self.energy):
            raise ValidationError("energy must be finite and nonnegative")
        if self.modes < 1:
            raise ValidationError("need at least one signal mode")
        if self.n_max is None:
            object.__setattr__(self, "n_max", 10 * math.ceil(self.energy) + 10)
        if self.n_max < math.ceil(self.energy):
            raise ValidationError(f"n_max {self.n_max} below ceil(N) = {math.ceil(self.energy)}")

    @property
    def mu(self):
        return mu(self.eta, self.eta_prime)

    def to_dict(self):
        return {"eta": self.eta, "eta_prime": self.eta_prime, "energy": self.energy,
                "modes": self.modes, "n_max": self.n_max}


def mu(eta, eta_prime):
    """Pairwise overlap ``sqrt(eta eta') + sqrt((1-eta)(1-eta'))``, i.e. ``cos(phi' - phi)``."""
    if not (0.0 <= eta <= 1.0 and 0.0 <= eta_prime <= 1.0):
        raise ValidationError("transmittances must lie in [0, 1]")
    val = math.sqrt(eta * eta_prime) + math.sqrt((1.0 - eta) * (1.0 - eta_prime))
    return min(val, 1.0)


def _split(n):
    lo = math.floor(n)
    return lo, n - lo


def min_fidelity_closed(energy, mu_value):
    """Minimum output fidelity over probes of signal energy ``energy``.

    ``(1 - {N}) mu^floor(N) + {N} mu^ceil(N)``.
    """
    if energy < 0:
        raise ValidationError("energy must be nonnegative")
    if not 0.0 <= mu_value <= 1.0:
        raise ValidationError("mu must lie in [0, 1]")
    if mu_value == 1.0:
        return 1.0
    lo, f = _split(energy)
    if f == 0.0:
        return mu_value ** lo
    return (1.0 - f) * mu_value ** lo + f * mu_value ** (lo + 1)


@dataclass(frozen=True)
class BruteForceResult:
    value: float
    support: tuple[int, ...]
    weights: tuple[float, ...]

    @property
    def distribution(self):
        return dict(zip(self.support, self.weights))


def min_fidelity_bruteforce(query):
    """Minimize ``sum_n p_n mu^n`` subject to normalization and mean ``N``.

    With two equality constraints an optimal basic solution has at most two
    support points, so enumerating pairs ``n1 <= N <= n2`` up to ``n_max`` is
    exhaustive. Never looks at ``query.modes``.
    """
    n, m, n_max = query.energy, query.mu, query.n_max
    if n > n_max:
        raise ValidationError(f"infeasible: N = {n} exceeds n_max = {n_max}")
    powers = np.array([m ** k for k in range(n_max + 1)])
    best = None
    for n1 in range(0, math.floor(n) + 1):
        for n2 in range(max(n1, math.ceil(n)), n_max + 1):
            if n2 == n1:
                if n1 != n:
                    continue
                cand = (float(powers[n1]), (n1,), (1.0,))
            else:
                w2 = (n - n1) / (n2 - n1)
                if w2 <= 0.0:
                    cand = (float(powers[n1]), (n1,), (1.0,))
                else:
                    cand = ((1.0 - w2) * powers[n1] + w2 * powers[n2], (n1, n2), (1.0 - w2, w2))
            if best is None or cand[0] < best[0] - 1e-15:
                best = cand
    return BruteForceResult(float(best[0]), best[1], best[2])


def ecb_distance(query):
    """``sqrt(1 - F_min)``; independent of the number of signal modes."""
    return math.sqrt(max(0.0, 1.0 - min_fidelity_closed(query.energy, query.mu)))


def ecb_optimal_probe(query, cutoff=None):
    """Two-term NDS probe with all photons in the first of ``query.modes`` signal modes."""
    need = math.ceil(query.energy)
    if cutoff is not None and cutoff < need:
        raise CutoffError(f"cutoff {cutoff} below ceil(N) = {need}", need)
    spec = ProbeSpec("ecb_optimal", energies=(query.energy,), modes=(query.modes,), cutoff=cutoff)
    return build_probe(spec)
