"""Induced system norms for the three disturbance/error regimes, matrix
induced norms, and truncated signal norms.

The three regimes pair an input norm p with an output norm q:

* (2, 2)   -- energy to energy, the peak-gain (H-infinity) norm,
* (2, inf) -- energy to peak, computed with the impulse-energy (H2) trace
  formula, which upper-bounds the exact induced norm for multi-output
  systems,
* (inf, inf) -- peak to peak, the impulse-response absolute-sum norm.

All system norms require a strictly stable state matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import UnstableError
from .lti import LtiSystem, is_strictly_stable, solve_discrete_lyapunov, spectral_radius

INF = math.inf

HINF_DEFAULT_RTOL = 1e-8
L1_DEFAULT_ATOL = 1e-9


@dataclass(frozen=True)
class NormPair:
    """One of the three admissible (p, q) norm regimes."""

    p: float
    q: float

    _ALLOWED = ((2, 2), (2, INF), (INF, INF))

    def __post_init__(self):
        if (self.p, self.q) not in self._ALLOWED:
            raise ValueError(
                f"unsupported regime ({self.p}, {self.q}); "
                f"allowed: (2,2), (2,inf), (inf,inf)"
            )

    def label(self):
        fmt = lambda v: "inf" if v == INF else str(int(v))
        return f"{fmt(self.p)},{fmt(self.q)}"

    @classmethod
    def from_label(cls, text):
        parts = [p.strip().lower() for p in text.split(",")]
        if len(parts) != 2:
            raise ValueError(f"bad norm-pair label {text!r}")
        conv = {"2": 2, "inf": INF}
        try:
            return cls(conv[parts[0]], conv[parts[1]])
        except KeyError:
            raise ValueError(f"bad norm-pair label {text!r}")

    def __str__(self):
        return f"({self.label()})"


PAIR_22 = NormPair(2, 2)
PAIR_2INF = NormPair(2, INF)
PAIR_INFINF = NormPair(INF, INF)
ALL_PAIRS = (PAIR_22, PAIR_2INF, PAIR_INFINF)


class SignalAccumulator:
    """Streaming truncated q-norm of a vector sequence.

    Feed samples one at a time; ``value()`` returns the q-norm of everything
    fed so far.  Exact for q=inf; standard float accumulation for q=2.
    """

    def __init__(self, q):
        if q not in (2, INF):
            raise ValueError(f"q must be 2 or inf, got {q}")
        self.q = q
        self.count = 0
        self._sumsq = 0.0
        self._maxabs = 0.0

    def feed(self, sample):
        sample = np.asarray(sample, dtype=float).ravel()
        if self.q == 2:
            self._sumsq += float(sample @ sample)
        else:
            if sample.size:
                self._maxabs = max(self._maxabs, float(np.max(np.abs(sample))))
        self.count += 1

    def value(self):
        return math.sqrt(self._sumsq) if self.q == 2 else self._maxabs


def signal_norm(samples, q):
    """Truncated q-norm of a finite sequence of vectors (or scalars)."""
    acc = SignalAccumulator(q)
    for s in samples:
        acc.feed(np.atleast_1d(s))
    return acc.value()


def matrix_induced_norm(M, p):
    """Induced p-norm of a matrix: largest singular value (p=2) or maximum
    absolute row sum (p=inf)."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0.0
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix contains non-finite entries")
    if p == 2:
        return float(np.linalg.norm(M, 2))
    if p == INF:
        return float(np.max(np.sum(np.abs(M), axis=1)))
    raise ValueError(f"p must be 2 or inf, got {p}")


def _require_stable(sys):
    if not is_strictly_stable(sys.A):
        raise UnstableError(
            f"system norms need a strictly stable A "
            f"(spectral radius {spectral_radius(sys.A):.6f})"
        )


def h2_norm(sys: LtiSystem):
    """Impulse-response energy norm sqrt(trace(C X C^T + D D^T)) with
    X the reachability Gramian."""
    _require_stable(sys)
    if sys.m == 0:
        return 0.0
    X = solve_discrete_lyapunov(sys.A, sys.B @ sys.B.T)
    val = float(np.trace(sys.C @ X @ sys.C.T) + np.trace(sys.D @ sys.D.T))
    return math.sqrt(max(val, 0.0))


def frequency_response(sys: LtiSystem, thetas):
    """Transfer matrices C (e^{i theta} I - A)^{-1} B + D stacked along the
    first axis."""
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    n = sys.n
    out = np.empty((thetas.size, sys.m, sys.l), dtype=complex)
    eye = np.eye(n)
    for k, th in enumerate(thetas):
        z = complex(math.cos(th), math.sin(th))
        if n:
            out[k] = sys.C @ np.linalg.solve(z * eye - sys.A, sys.B) + sys.D
        else:
            out[k] = sys.D
    return out


def gain_at(sys: LtiSystem, thetas):
    """sigma_max of the transfer matrix at each frequency."""
    G = frequency_response(sys, thetas)
    if G.shape[1] == 0 or G.shape[2] == 0:
        return np.zeros(G.shape[0])
    return np.linalg.svd(G, compute_uv=False)[:, 0]


def _bilinear_to_continuous(sys):
    """Tustin map z = (1+s)/(1-s); preserves the peak gain and sends the
    open unit disk to the open left half plane."""
    n = sys.n
    M = np.linalg.inv(sys.A + np.eye(n))
    Ac = M @ (sys.A - np.eye(n))
    Bc = math.sqrt(2.0) * (M @ sys.B)
    Cc = math.sqrt(2.0) * (sys.C @ M)
    Dc = sys.D - sys.C @ M @ sys.B
    return Ac, Bc, Cc, Dc


def _gamma_exceeds_peak(Ac, Bc, Cc, Dc, gamma):
    """Bounded-real test: gamma is a strict upper bound on the peak gain iff
    the associated Hamiltonian has no imaginary-axis eigenvalues."""
    l = Bc.shape[1]
    R = gamma * gamma * np.eye(l) - Dc.T @ Dc
    try:
        Ri = np.linalg.inv(R)
    except np.linalg.LinAlgError:
        return False
    if np.linalg.cond(R) > 1e13:
        return False
    Abar = Ac + Bc @ Ri @ Dc.T @ Cc
    H = np.block([
        [Abar, Bc @ Ri @ Bc.T],
        [-Cc.T @ (np.eye(Cc.shape[0]) + Dc @ Ri @ Dc.T) @ Cc, -Abar.T],
    ])
    eig = np.linalg.eigvals(H)
    scale = max(1.0, float(np.max(np.abs(eig))) if eig.size else 1.0)
    return not np.any(np.abs(eig.real) <= 1e-10 * scale)


def hinf_norm(sys: LtiSystem, tol=HINF_DEFAULT_RTOL):
    """Peak gain sup_theta sigma_max(G(e^{i theta})).

    A frequency grid seeds the lower bound; bisection with the bounded-real
    Hamiltonian test certifies the upper bound.  The result is within ``tol``
    relative of the true value.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    _require_stable(sys)
    if sys.m == 0 or sys.l == 0:
        return 0.0
    if sys.n == 0 or not (np.any(sys.B) and np.any(sys.C)):
        return matrix_induced_norm(sys.D, 2)

    thetas = np.linspace(0.0, math.pi, 257)
    lo = float(np.max(gain_at(sys, thetas)))
    # Refine around the coarse peak; keeps the lower bound honest on sharp
    # resonances.
    k = int(np.argmax(gain_at(sys, thetas)))
    a = thetas[max(0, k - 1)]
    b = thetas[min(len(thetas) - 1, k + 1)]
    lo = max(lo, float(np.max(gain_at(sys, np.linspace(a, b, 65)))))

    Ac, Bc, Cc, Dc = _bilinear_to_continuous(sys)
    d_gain = matrix_induced_norm(Dc, 2)
    lo = max(lo, d_gain, 1e-300)

    hi = 2.0 * lo + 1e-12
    for _ in range(200):
        if _gamma_exceeds_peak(Ac, Bc, Cc, Dc, hi):
            break
        hi *= 2.0
    else:
        raise UnstableError("failed to bracket the peak gain from above")

    while hi - lo > 0.5 * tol * lo:
        mid = 0.5 * (lo + hi)
        if _gamma_exceeds_peak(Ac, Bc, Cc, Dc, mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class _CertifiedValue:
    value: float
    radius: float
    horizon: int


def _l1_norm_certified(sys: LtiSystem, tol):
    """Impulse-response absolute row sums with a geometric tail certificate.

    Returns the midpoint of the certified interval, its radius, and the
    truncation horizon.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    _require_stable(sys)
    if sys.m == 0:
        return _CertifiedValue(0.0, 0.0, 0)
    rows = np.sum(np.abs(sys.D), axis=1)
    if sys.l == 0 or sys.n == 0 or not (np.any(sys.B) and np.any(sys.C)):
        return _CertifiedValue(float(rows.max()), 0.0, 0)

    normC = matrix_induced_norm(sys.C, INF)
    normB = matrix_induced_norm(sys.B, INF)

    # sum_{u>=0} ||A^u|| <= (sum_{u<k} ||A^u||) / (1 - ||A^k||) once some
    # power contracts below 1/2 in the induced inf-norm.
    geo_sum = None
    acc_norm = 0.0
    W = sys.B.copy()          # A^{t-1} B
    Apow = np.eye(sys.n)      # A^t after the update below
    t = 0
    max_steps = 2_000_000
    while True:
        t += 1
        rows += np.sum(np.abs(sys.C @ W), axis=1)
        W = sys.A @ W
        if geo_sum is None:
            acc_norm += matrix_induced_norm(Apow, INF)
            Apow = sys.A @ Apow
            eta = matrix_induced_norm(Apow, INF)
            if eta < 0.5:
                geo_sum = acc_norm / (1.0 - eta)
        else:
            Apow = sys.A @ Apow
        if geo_sum is not None:
            tail = normC * matrix_induced_norm(Apow, INF) * normB * geo_sum
            if tail < tol:
                return _CertifiedValue(
                    float(rows.max()) + 0.5 * tail, 0.5 * tail, t
                )
        if t >= max_steps:
            raise UnstableError(
                f"impulse-response tail failed to certify within {max_steps} steps"
            )


def l1_norm(sys: LtiSystem, tol=L1_DEFAULT_ATOL):
    """Peak-to-peak norm: max over output rows of the summed absolute impulse
    response, certified to absolute error ``tol``."""
    return _l1_norm_certified(sys, tol).value


def induced_norm(sys: LtiSystem, pair: NormPair, tol=None):
    """Dispatch to the regime-appropriate system norm."""
    if (pair.p, pair.q) == (2, 2):
        return hinf_norm(sys, tol if tol is not None else HINF_DEFAULT_RTOL)
    if (pair.p, pair.q) == (2, INF):
        return h2_norm(sys)
    return l1_norm(sys, tol if tol is not None else L1_DEFAULT_ATOL)
