"""Free and pair potentials, the drift field, Ruelle-class certificates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize_scalar

from hardball.errors import DomainError, InputError, PreconditionError
from hardball.geometry import BallConfiguration, minimum_image, pair_table, sqnorm

LJ = "lennard-jones-6-12"
RIESZ = "riesz"
CUSTOM = "truncated-custom"
NONE = "none"

_ALIASES = {"lj": LJ, LJ: LJ, "riesz": RIESZ, "custom": CUSTOM, CUSTOM: CUSTOM, "none": NONE, "zero": NONE}

DEFAULT_CUTOFF_FACTOR = 8.0


def _ipow(x, k: int):
    # repeated multiplication keeps results independent of array layout
    out = np.ones_like(x) if isinstance(x, np.ndarray) else 1.0
    for _ in range(k):
        out = out * x
    return out


@dataclass(frozen=True)
class RadialFunctions:
    """User-supplied radial potential ``psi(s)`` and its first two derivatives."""

    energy: Callable
    derivative: Callable
    second_derivative: Callable


@dataclass(frozen=True)
class PairPotential:
    """Smooth translation-invariant pair potential ``psi(|x - y|)`` with a hard core.

    The energy includes the inverse temperature: ``beta (s^-12 - s^-6)`` for
    Lennard-Jones and ``(beta / a) s^-a`` for Riesz.  ``cutoff=None`` means
    the sums run over all neighbors.
    """

    kind: str = NONE
    beta: float = 1.0
    cutoff: Optional[float] = None
    hardcore: float = 1.0
    a: Optional[int] = None
    custom: Optional[RadialFunctions] = field(default=None, compare=False)

    def __post_init__(self):
        kind = _ALIASES.get(self.kind)
        if kind is None:
            raise InputError(f"unknown potential kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if not self.beta > 0:
            raise InputError("beta must be positive")
        if not self.hardcore > 0:
            raise InputError("hardcore diameter must be positive")
        if self.cutoff is not None and not self.cutoff > 0:
            raise InputError("cutoff must be positive or None")
        if kind == RIESZ:
            if self.a is None or int(self.a) != self.a or self.a < 1:
                raise InputError("riesz potential needs a positive integer exponent a")
            object.__setattr__(self, "a", int(self.a))
        if kind == CUSTOM:
            if self.custom is None:
                raise InputError("truncated-custom potential needs radial functions")
            if self.cutoff is None:
                raise InputError("truncated-custom potential needs a finite cutoff")

    @classmethod
    def lennard_jones(cls, beta: float = 1.0, hardcore: float = 1.0, cutoff="default") -> "PairPotential":
        if cutoff == "default":
            cutoff = DEFAULT_CUTOFF_FACTOR * hardcore
        return cls(LJ, beta, cutoff, hardcore)

    @classmethod
    def riesz(cls, a: int, beta: float = 1.0, hardcore: float = 1.0, cutoff="default") -> "PairPotential":
        if cutoff == "default":
            cutoff = DEFAULT_CUTOFF_FACTOR * hardcore
        return cls(RIESZ, beta, cutoff, hardcore, a=a)

    @classmethod
    def hard_core_only(cls, hardcore: float = 1.0) -> "PairPotential":
        return cls(NONE, 1.0, None, hardcore)

    @property
    def is_zero(self) -> bool:
        return self.kind == NONE

    @property
    def reach(self) -> float:
        """Distance beyond which the smooth part exerts no force."""
        if self.is_zero:
            return 0.0
        return math.inf if self.cutoff is None else float(self.cutoff)

    def check_dimension(self, dim: int) -> None:
        if self.kind == RIESZ and not self.a > dim:
            raise PreconditionError(f"riesz exponent a={self.a} must exceed dimension {dim}")

    # radial functions -------------------------------------------------

    def energy(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == NONE:
            return np.zeros_like(s)
        if self.kind == LJ:
            inv6 = _ipow(1.0 / (s * s), 3)
            return self.beta * (inv6 * inv6 - inv6)
        if self.kind == RIESZ:
            return (self.beta / self.a) * _ipow(1.0 / s, self.a)
        return np.asarray(self.custom.energy(s), dtype=float)

    def derivative(self, s):
        """d psi / ds."""
        s = np.asarray(s, dtype=float)
        if self.kind == NONE:
            return np.zeros_like(s)
        if self.kind == LJ:
            return self.beta * (-12.0 * _ipow(1.0 / s, 13) + 6.0 * _ipow(1.0 / s, 7))
        if self.kind == RIESZ:
            return -self.beta * _ipow(1.0 / s, self.a + 1)
        return np.asarray(self.custom.derivative(s), dtype=float)

    def second_derivative(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == NONE:
            return np.zeros_like(s)
        if self.kind == LJ:
            return self.beta * (156.0 * _ipow(1.0 / s, 14) - 42.0 * _ipow(1.0 / s, 8))
        if self.kind == RIESZ:
            return self.beta * (self.a + 1) * _ipow(1.0 / s, self.a + 2)
        return np.asarray(self.custom.second_derivative(s), dtype=float)

    def force_factor(self, s2):
        """``-psi'(s) / (2 s)`` from squared distances, so that the drift on x
        from y is ``force_factor(|x-y|^2) * (x - y)``."""
        if self.kind == LJ:
            inv2 = 1.0 / s2
            inv6 = inv2 * inv2 * inv2
            inv8 = inv6 * inv2
            inv14 = inv8 * inv6
            return (0.5 * self.beta) * (12.0 * inv14 - 6.0 * inv8)
        if self.kind == RIESZ:
            if self.a % 2 == 0:
                return (0.5 * self.beta) * _ipow(1.0 / s2, (self.a + 2) // 2)
            return (0.5 * self.beta) * _ipow(1.0 / np.sqrt(s2), self.a + 2)
        if self.kind == CUSTOM:
            s = np.sqrt(s2)
            return -0.5 * np.asarray(self.custom.derivative(s), dtype=float) / s
        return np.zeros_like(s2)

    def tail_majorants(self):
        """Power-law majorants ``(c, p)`` with ``|f(s)| <= c s^-p`` for ``s >= hardcore``.

        Returned for ``|psi'|``, ``|psi''|`` and ``|psi'| / s``; ``None`` for
        potentials without a closed-form tail.
        """
        r = self.hardcore
        if self.kind == LJ:
            b = self.beta
            return {
                "grad": (b * (12.0 * r**-6 + 6.0), 7),
                "second": (b * (156.0 * r**-6 + 42.0), 8),
                "tangential": (b * (12.0 * r**-6 + 6.0), 8),
            }
        if self.kind == RIESZ:
            b, a = self.beta, self.a
            return {"grad": (b, a + 1), "second": (b * (a + 1), a + 2), "tangential": (b, a + 2)}
        return None


@dataclass(frozen=True)
class FreePotential:
    """Self potential ``Phi``; ``gradient`` maps an (m, d) array to (m, d)."""

    kind: str = "zero"
    energy: Optional[Callable] = field(default=None, compare=False)
    gradient: Optional[Callable] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in ("zero", "custom-smooth"):
            raise InputError(f"unknown free potential kind {self.kind!r}")
        if self.kind == "custom-smooth" and (self.energy is None or self.gradient is None):
            raise InputError("custom-smooth free potential needs energy and gradient")

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero"

    def value(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        if self.is_zero:
            return np.zeros(x.shape[0])
        return np.asarray(self.energy(x), dtype=float)

    def grad(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        if self.is_zero:
            return np.zeros_like(x)
        return np.asarray(self.gradient(x), dtype=float)


ZERO_FREE = FreePotential()


def evaluate_drift(
    x,
    neighbors,
    pair: PairPotential,
    free: FreePotential = ZERO_FREE,
    box: Optional[float] = None,
    tol_hc: Optional[float] = None,
) -> np.ndarray:
    """Drift ``-grad Phi(x)/2 - sum_y grad psi(x - y)/2`` at a single point."""
    x = np.asarray(x, dtype=float)
    out = -0.5 * free.grad(x[None, :])[0]
    nb = np.asarray(neighbors, dtype=float).reshape(-1, x.shape[0])
    if pair.is_zero or nb.shape[0] == 0:
        return out
    if tol_hc is None:
        tol_hc = 1e-9 * pair.hardcore
    diff = minimum_image(x[None, :] - nb, box)
    s2 = sqnorm(diff)
    if np.any(s2 < (pair.hardcore - tol_hc) ** 2):
        raise DomainError("neighbor inside the hard core")
    if pair.cutoff is not None:
        keep = s2 < pair.cutoff * pair.cutoff
        diff, s2 = diff[keep], s2[keep]
    f = pair.force_factor(s2)[:, None] * diff
    for row in f:
        out = out + row
    return out


def drift_field(
    positions: np.ndarray,
    pair: PairPotential,
    free: FreePotential = ZERO_FREE,
    box: Optional[float] = None,
    tol_hc: Optional[float] = None,
) -> np.ndarray:
    """Drift on every ball of a finite system.

    Pair contributions are accumulated in lexicographic pair order, so a
    subsystem whose balls keep their relative order sees bit-identical sums.
    """
    positions = np.asarray(positions, dtype=float)
    b = np.zeros_like(positions)
    if not free.is_zero:
        b -= 0.5 * free.grad(positions)
    if pair.is_zero or positions.shape[0] < 2:
        return b
    if tol_hc is None:
        tol_hc = 1e-9 * pair.hardcore
    I, J, diff, _ = pair_table(positions, box)
    s2 = sqnorm(diff)
    if np.any(s2 < (pair.hardcore - tol_hc) ** 2):
        p = int(np.argmin(s2))
        raise DomainError(f"balls {I[p]} and {J[p]} overlap (distance {math.sqrt(s2[p]):.6g})")
    if pair.cutoff is not None:
        keep = s2 < pair.cutoff * pair.cutoff
        I, J, diff, s2 = I[keep], J[keep], diff[keep], s2[keep]
    f = pair.force_factor(s2)[:, None] * diff
    np.add.at(b, I, f)
    np.add.at(b, J, -f)
    return b


def hamiltonian(
    config: BallConfiguration,
    ell: float,
    pair: PairPotential,
    free: FreePotential = ZERO_FREE,
    tol_hc: Optional[float] = None,
) -> float:
    """Energy of the balls in the closed ball ``{|x| <= ell}``.

    The pair sum runs over ordered pairs, i.e. every unordered pair counts
    twice.  Returns ``inf`` when two balls in the region overlap.
    """
    pos = config.positions
    inside = np.nonzero(sqnorm(pos) <= ell * ell)[0] if np.isfinite(ell) else np.arange(config.n)
    if inside.size == 0:
        return 0.0
    sub = pos[inside]
    total = float(np.sum(free.value(sub)))
    if inside.size < 2:
        return total
    if tol_hc is None:
        tol_hc = 1e-9 * config.radius
    _, _, _, dist = pair_table(sub, config.box)
    if np.any(dist < config.radius - tol_hc):
        return math.inf
    if pair.cutoff is not None:
        dist = dist[dist < pair.cutoff]
    return total + 2.0 * float(np.sum(pair.energy(dist)))


# --------------------------------------------------------------------------
# Ruelle-class certificates


@dataclass(frozen=True)
class RuelleCertificate:
    """Upper bounds on ``sup_xi sum_x |grad psi(x)|`` and the Hessian analogue.

    ``sum_hess_bound`` bounds sums of ``lambda(|x|)``, a non-increasing
    envelope dominating the Hessian operator norm (see ``hessian_envelope``).
    """

    finite: bool
    sum_grad_bound: float
    sum_hess_bound: float
    shells: int
    grad_tail: float = 0.0
    hess_tail: float = 0.0


def shell_count_bound(k, dim: int):
    """Most centers a hard-core configuration can place with ``|x|`` in ``[kr, (k+1)r)``.

    The disjoint balls of radius r/2 around them fit in the annulus
    ``[(k - 1/2) r, (k + 3/2) r]``; compare volumes.
    """
    k = np.asarray(k, dtype=float)
    return np.floor(((k + 1.5) ** dim - np.maximum(k - 0.5, 0.0) ** dim) / 0.5**dim)


def _shell_sup(fn: Callable, lo: float, hi: float, samples: int = 97) -> float:
    s = np.linspace(lo, hi, samples)
    vals = np.abs(fn(s))
    i = int(np.argmax(vals))
    best = float(vals[i])
    a, b = s[max(i - 1, 0)], s[min(i + 1, samples - 1)]
    if b > a:
        res = minimize_scalar(lambda t: -abs(float(fn(np.array([t]))[0])), bounds=(a, b), method="bounded",
                              options={"xatol": 1e-12 * hi})
        best = max(best, -float(res.fun))
    return best * (1.0 + 1e-9)


def _tail_sum(c: float, p: float, k_start: int, r: float, dim: int) -> float:
    """Bound on ``sum_{k >= k_start} count_k * c (k r)^-p``; inf when divergent."""
    q = dim - 1 - p
    if q >= -1:
        return math.inf
    K = k_start - 1
    # count_k <= 2^(d+1) d (k + 3/2)^(d-1) <= 2^(d+1) d (1 + 3/(2K))^(d-1) k^(d-1) for k > K
    pref = 2.0 ** (dim + 1) * dim * (1.0 + 1.5 / K) ** (dim - 1) * c * r ** (-p)
    return pref * K ** (q + 1) / (-(q + 1))


def hessian_envelope(pair: PairPotential, r: float, shells: int):
    """Per-shell values of ``lambda(kr) = hypot(A(kr), B(kr))``.

    ``A(s) = sup_{t>=s} |psi''(t)|`` and ``B(s) = sup_{t>=s} |psi'(t)|/t``; the
    pair force ``-grad psi / 2`` is Lipschitz with constant ``lambda(min(s, s'))/2``
    between separations of lengths ``s`` and ``s'`` (no convexity needed).
    """
    second = np.array([_shell_sup(pair.second_derivative, k * r, (k + 1) * r) for k in range(1, shells + 1)])
    tang = np.array([_shell_sup(lambda s: pair.derivative(s) / s, k * r, (k + 1) * r) for k in range(1, shells + 1)])
    maj = pair.tail_majorants()
    tail_a = tail_b = 0.0
    if maj is not None:
        s_end = (shells + 1) * r
        tail_a = maj["second"][0] * s_end ** -maj["second"][1]
        tail_b = maj["tangential"][0] * s_end ** -maj["tangential"][1]
    A = np.maximum.accumulate(np.append(second, tail_a)[::-1])[::-1][:-1]
    B = np.maximum.accumulate(np.append(tang, tail_b)[::-1])[::-1][:-1]
    return np.hypot(A, B)


def ruelle_check(pair: PairPotential, r: Optional[float] = None, dim: int = 3, shells: int = 200) -> RuelleCertificate:
    """Shell-decomposition bounds for the gradient and Hessian sums.

    The cutoff is ignored for potentials with a closed-form tail, so the
    certificate also covers the untruncated system.
    """
    if r is None:
        r = pair.hardcore
    if pair.is_zero:
        return RuelleCertificate(True, 0.0, 0.0, 0)
    maj = pair.tail_majorants()
    if maj is None:
        shells = int(math.ceil(pair.cutoff / r))
    else:
        grad_tail = _tail_sum(*maj["grad"], shells + 1, r, dim)
        lam_c = math.hypot(maj["second"][0], maj["tangential"][0])
        hess_tail = _tail_sum(lam_c, maj["second"][1], shells + 1, r, dim)
        if not (math.isfinite(grad_tail) and math.isfinite(hess_tail)):
            return RuelleCertificate(False, math.inf, math.inf, shells, grad_tail, hess_tail)
    counts = shell_count_bound(np.arange(1, shells + 1), dim)
    grad = np.array([_shell_sup(pair.derivative, k * r, (k + 1) * r) for k in range(1, shells + 1)])
    lam = hessian_envelope(pair, r, shells)
    if maj is None:
        grad_tail = hess_tail = 0.0
    return RuelleCertificate(
        True,
        float(np.sum(counts * grad) + grad_tail),
        float(np.sum(counts * lam) + hess_tail),
        shells,
        float(grad_tail),
        float(hess_tail),
    )


def drift_tail_bound(pair: PairPotential, cutoff: float, dim: int, r: Optional[float] = None, shells: int = 200) -> float:
    """Bound on the drift dropped by truncating pair sums at ``cutoff``."""
    if r is None:
        r = pair.hardcore
    if pair.is_zero:
        return 0.0
    maj = pair.tail_majorants()
    if maj is None:
        raise InputError("tail bound needs a potential with a closed-form tail")
    k0 = max(int(math.floor(cutoff / r)), 1)
    last = max(shells, k0)
    ks = np.arange(k0, last + 1)
    grad = np.array([_shell_sup(pair.derivative, k * r, (k + 1) * r) for k in ks])
    total = float(np.sum(shell_count_bound(ks, dim) * grad)) + _tail_sum(*maj["grad"], last + 1, r, dim)
    return 0.5 * total


def lipschitz_bound(pair: PairPotential, r: Optional[float] = None, dim: int = 3) -> float:
    """Global Lipschitz constant of the drift over hard-core configurations.

    With ``lambda`` the Hessian envelope and ``S`` its certified shell sum, the
    drift difference on ball j is at most ``sum_k lambda_jk (|e_j| + |e_k|) / 2``
    where ``lambda_jk`` is taken at the smaller of the two separations, so
    ``sum_k lambda_jk <= 2 S``.  The resulting non-negative symmetric matrix
    has row sums at most ``S`` (local part) plus ``S`` (coupling part).
    """
    cert = ruelle_check(pair, r, dim)
    if not cert.finite:
        raise PreconditionError("pair potential is not of Ruelle class in this dimension")
    local = cert.sum_hess_bound
    coupling = cert.sum_hess_bound
    return local + coupling
