"""Discrete-time LTI plumbing: systems, sensor subsets, detectability tests,
and the Riccati/Lyapunov solvers used for observer gain design.

Conventions
-----------
Plants follow the quadruple form

    x(t+1) = A x(t) + B w(t)
    y(t)   = C x(t) + D w(t)

with x(0) = 0.  Sensors are numbered 1..m; :class:`SensorSet` keeps that
external 1-based convention and converts to 0-based row indices only when a
matrix is actually sliced.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NoConvergenceError, NotDetectableError, UnstableError

# Eigenvalues within this margin of the unit circle count as unstable so that
# numerically perturbed marginal modes (e.g. an exact eigenvalue 1) are never
# misclassified as stable.
STABILITY_MARGIN = 1e-9

# Singular values below RANK_RTOL * sigma_max count as zero in rank tests.
RANK_RTOL = 1e-8

DARE_REL_TOL = 1e-9
DARE_MAX_ITER = 10_000
LYAPUNOV_REL_TOL = 1e-10


def _as_matrix(M, name="matrix"):
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M.reshape(1, -1)
    if M.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {M.shape}")
    if M.size and not np.all(np.isfinite(M)):
        raise ValueError(f"{name} contains non-finite entries")
    return M


class LtiSystem:
    """State-space quadruple (A, B, C, D) with consistent dimensions.

    Parameters
    ----------
    A : (n, n) array_like
        State transition matrix.
    B : (n, l) array_like
        Disturbance input matrix.  Must have full row rank n; plants that do
        not satisfy this should be reduced before construction.
    C : (m, n) array_like
        Measurement matrix.  m may be 0.
    D : (m, l) array_like
        Measurement feedthrough.
    require_full_row_rank : bool
        Set False for derived systems (error/residual dynamics) whose input
        matrix is not a disturbance model.
    """

    def __init__(self, A, B, C, D, require_full_row_rank=True):
        self.A = _as_matrix(A, "A")
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ValueError(f"A must be square, got {self.A.shape}")
        self.B = _as_matrix(B, "B")
        if self.B.shape[0] != n:
            raise ValueError(f"B must have {n} rows, got {self.B.shape}")
        self.C = np.asarray(C, dtype=float)
        if self.C.ndim == 1:
            self.C = self.C.reshape(1, -1) if self.C.size else self.C.reshape(0, n)
        if self.C.ndim != 2 or self.C.shape[1] != n:
            raise ValueError(f"C must have {n} columns, got {self.C.shape}")
        if self.C.size and not np.all(np.isfinite(self.C)):
            raise ValueError("C contains non-finite entries")
        self.D = np.asarray(D, dtype=float)
        if self.D.ndim == 1:
            self.D = self.D.reshape(1, -1) if self.D.size else self.D.reshape(0, self.B.shape[1])
        if self.D.shape != (self.C.shape[0], self.B.shape[1]):
            raise ValueError(
                f"D must be {(self.C.shape[0], self.B.shape[1])}, got {self.D.shape}"
            )
        if self.D.size and not np.all(np.isfinite(self.D)):
            raise ValueError("D contains non-finite entries")
        if require_full_row_rank and n > 0:
            if np.linalg.matrix_rank(self.B) < n:
                raise ValueError("B must have full row rank")

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def l(self):
        return self.B.shape[1]

    @property
    def m(self):
        return self.C.shape[0]

    def __repr__(self):
        return f"LtiSystem(n={self.n}, l={self.l}, m={self.m})"


@dataclass(frozen=True)
class SensorSet:
    """Strictly increasing tuple of 1-based sensor indices."""

    indices: tuple

    def __init__(self, indices):
        idx = tuple(sorted(int(i) for i in indices))
        if any(i < 1 for i in idx):
            raise ValueError(f"sensor indices must be >= 1, got {idx}")
        if len(set(idx)) != len(idx):
            raise ValueError(f"duplicate sensor indices in {idx}")
        object.__setattr__(self, "indices", idx)

    def __len__(self):
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def __contains__(self, i):
        return i in self.indices

    def issubset(self, other):
        return set(self.indices) <= set(SensorSet(other).indices)

    def intersection(self, other):
        return SensorSet(set(self.indices) & set(SensorSet(other).indices))

    def difference(self, other):
        return SensorSet(set(self.indices) - set(SensorSet(other).indices))

    def label(self):
        """Comma-joined 1-based indices, e.g. ``"1,3"``."""
        return ",".join(str(i) for i in self.indices)

    def __str__(self):
        return "{" + self.label() + "}"


def full_sensor_set(m):
    return SensorSet(range(1, m + 1))


@dataclass(frozen=True)
class ProjectionMap:
    """Row-selection map picking the coordinates in ``sensors`` out of R^m."""

    sensors: SensorSet
    m: int

    @property
    def matrix(self):
        P = np.zeros((len(self.sensors), self.m))
        for row, i in enumerate(self.sensors):
            P[row, i - 1] = 1.0
        return P

    def apply(self, v):
        v = np.asarray(v, dtype=float)
        rows = [i - 1 for i in self.sensors]
        return v[rows] if v.ndim == 1 else v[rows, :]


def projection(sensors, m) -> ProjectionMap:
    """Selection map onto the given 1-based sensor coordinates of R^m."""
    sensors = SensorSet(sensors)
    if sensors.indices and sensors.indices[-1] > m:
        raise ValueError(f"sensor index {sensors.indices[-1]} out of range 1..{m}")
    return ProjectionMap(sensors, m)


def partial_projection(inner, outer, m=None):
    """Selection matrix P such that selecting ``inner`` out of R^m equals
    first selecting ``outer`` and then applying P.

    Requires inner to be a subset of outer.  Shape is |inner| x |outer|.
    """
    inner, outer = SensorSet(inner), SensorSet(outer)
    if not inner.issubset(outer):
        raise ValueError(f"{inner} is not a subset of {outer}")
    pos = {i: row for row, i in enumerate(outer)}
    P = np.zeros((len(inner), len(outer)))
    for row, i in enumerate(inner):
        P[row, pos[i]] = 1.0
    return P


def restrict_sensors(sys: LtiSystem, sensors) -> LtiSystem:
    """Same dynamics, measurement rows restricted to the given sensors."""
    pmap = projection(sensors, sys.m)
    return LtiSystem(sys.A, sys.B, pmap.apply(sys.C), pmap.apply(sys.D),
                     require_full_row_rank=False)


def spectral_radius(M):
    """max |eigenvalue| of a square matrix."""
    M = _as_matrix(M, "M")
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"matrix must be square, got {M.shape}")
    if M.shape[0] == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def is_strictly_stable(M):
    """True iff every eigenvalue is inside the unit circle by at least
    STABILITY_MARGIN."""
    return spectral_radius(M) < 1.0 - STABILITY_MARGIN


def _unstable_eigenpairs(A):
    """Eigenvalues of A on or outside the unit circle (within margin),
    sorted by decreasing modulus, with their right eigenvectors."""
    vals, vecs = np.linalg.eig(A)
    keep = np.abs(vals) >= 1.0 - STABILITY_MARGIN
    order = np.argsort(-np.abs(vals[keep]))
    return vals[keep][order], vecs[:, keep][:, order]


def is_detectable(A, C):
    """PBH detectability test.

    Returns ``(flag, witness)`` where ``witness`` is a violating eigenvalue
    (unstable and unobservable through C) when the pair fails, else None.
    An empty C (zero rows) is detectable iff A is strictly stable.
    """
    A = _as_matrix(A, "A")
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("A must be square")
    C = np.asarray(C, dtype=float)
    if C.ndim == 1:
        C = C.reshape(1, -1) if C.size else C.reshape(0, n)
    if C.shape[1] != n and C.shape[0] != 0:
        raise ValueError(f"C must have {n} columns, got {C.shape}")
    vals, _ = _unstable_eigenpairs(A)
    for lam in vals:
        stack = np.vstack([A - lam * np.eye(n), C])
        sv = np.linalg.svd(stack, compute_uv=False)
        if sv.size == 0 or sv[0] == 0.0 or sv[-1] < RANK_RTOL * sv[0]:
            return False, complex(lam)
    return True, None


def detectable_after_removal(sys: LtiSystem, count):
    """Check that (A, C_K) stays detectable for every subset K obtained by
    removing ``count`` sensors.

    Returns ``(flag, witness_subset)`` with the first violating kept-subset
    when the check fails.  ``count == m`` reduces to strict stability of A.
    """
    from itertools import combinations

    count = int(count)
    if count < 0 or count > sys.m:
        raise ValueError(f"removal count must be in 0..{sys.m}, got {count}")
    keep = sys.m - count
    # Eigen-data is shared across subsets; only the SVD stack varies.
    vals, _ = _unstable_eigenpairs(sys.A)
    if vals.size == 0:
        return True, None
    n = sys.n
    for combo in combinations(range(1, sys.m + 1), keep):
        K = SensorSet(combo)
        CK = sys.C[[i - 1 for i in combo], :] if combo else np.zeros((0, n))
        for lam in vals:
            stack = np.vstack([sys.A - lam * np.eye(n), CK])
            sv = np.linalg.svd(stack, compute_uv=False)
            if sv[-1] < RANK_RTOL * sv[0]:
                return False, K
    return True, None


@dataclass(frozen=True)
class DareSolution:
    """Stabilizing Riccati solution with the induced observer gain.

    ``closed_loop`` is A - gain @ C and is strictly stable; ``residual`` is
    the relative Frobenius defect of the fixed-point equation.
    """

    P: np.ndarray
    gain: np.ndarray
    closed_loop: np.ndarray
    residual: float
    iterations: int


def _riccati_step(P, A, C, Q, R):
    """One application of the filter Riccati map."""
    S = C @ P @ C.T + R
    G = np.linalg.solve(S, C @ P @ A.T).T  # A P C^T S^-1
    return A @ P @ A.T - G @ (C @ P @ A.T) + Q


def _riccati_residual(P, A, C, Q, R):
    F = _riccati_step(P, A, C, Q, R)
    denom = max(1.0, float(np.linalg.norm(P, "fro")))
    return float(np.linalg.norm(F - P, "fro")) / denom


def solve_dare(sys: LtiSystem) -> DareSolution:
    """Stabilizing solution of the filter-form Riccati equation

        P = A (P - P C^T (C P C^T + D D^T)^-1 C P) A^T + B B^T

    for the system's (possibly restricted) C and D.  Uses a structured
    doubling iteration when D D^T is invertible and falls back to plain
    fixed-point iteration otherwise.

    Raises
    ------
    NotDetectableError
        When (A, C) fails the PBH test (carries the witness eigenvalue).
    NoConvergenceError
        When the iteration cap is reached or the innovation covariance turns
        singular along the fixed-point path.
    """
    flag, witness = is_detectable(sys.A, sys.C)
    if not flag:
        raise NotDetectableError(
            f"(A, C) not detectable; witness eigenvalue {witness}",
            eigenvalue=witness,
        )
    A, C = sys.A, sys.C
    n = sys.n
    Q = sys.B @ sys.B.T
    R = sys.D @ sys.D.T

    if sys.m == 0:
        # No measurements: gain is empty, P solves a Lyapunov equation.
        if not is_strictly_stable(A):
            raise NotDetectableError(
                "empty sensor set with unstable dynamics", eigenvalue=None
            )
        P = solve_discrete_lyapunov(A, Q)
        return DareSolution(P, np.zeros((n, 0)), A.copy(), 0.0, 0)

    P = None
    iters = 0
    r_singular = False
    try:
        Rinv = np.linalg.inv(R)
        if np.linalg.cond(R) > 1e12:
            r_singular = True
    except np.linalg.LinAlgError:
        r_singular = True

    if not r_singular:
        # Structured doubling on the control-form equivalent (A^T, C^T).
        Ak = A.T.copy()
        Gk = C.T @ Rinv @ C
        Hk = Q.copy()
        for iters in range(1, DARE_MAX_ITER + 1):
            W = np.eye(n) + Gk @ Hk
            try:
                WiA = np.linalg.solve(W, Ak)
                WiG = np.linalg.solve(W, Gk)
            except np.linalg.LinAlgError as exc:
                raise NoConvergenceError(f"doubling step became singular: {exc}")
            Anew = Ak @ WiA
            Gnew = Gk + Ak @ WiG @ Ak.T
            Hnew = Hk + Ak.T @ Hk @ WiA
            Hnew = 0.5 * (Hnew + Hnew.T)
            delta = np.linalg.norm(Hnew - Hk, "fro")
            Ak, Gk, Hk = Anew, 0.5 * (Gnew + Gnew.T), Hnew
            if delta <= 1e-14 * max(1.0, np.linalg.norm(Hk, "fro")):
                break
        P = Hk
    else:
        P = Q.copy()
        for iters in range(1, DARE_MAX_ITER + 1):
            try:
                Pn = _riccati_step(P, A, C, Q, R)
            except np.linalg.LinAlgError:
                raise NoConvergenceError(
                    "innovation covariance C P C^T + D D^T is singular"
                )
            Pn = 0.5 * (Pn + Pn.T)
            delta = np.linalg.norm(Pn - P, "fro")
            P = Pn
            if delta <= 1e-13 * max(1.0, np.linalg.norm(P, "fro")):
                break

    residual = _riccati_residual(P, A, C, Q, R)
    if residual > DARE_REL_TOL:
        raise NoConvergenceError(
            f"Riccati iteration stalled at relative residual {residual:.3e}"
        )
    S = C @ P @ C.T + R
    L = np.linalg.solve(S, C @ P @ A.T).T
    closed = A - L @ C
    if not is_strictly_stable(closed):
        raise NoConvergenceError(
            f"Riccati gain failed to stabilize (spectral radius "
            f"{spectral_radius(closed):.6f})"
        )
    return DareSolution(0.5 * (P + P.T), L, closed, residual, iters)


def stabilizing_gain(sys: LtiSystem, sensors=None):
    """Output-injection gain K with A + K C_I strictly stable.

    The gain is the negated Riccati gain, shaped n x |I|.  ``sensors=None``
    uses all rows of C.
    """
    sub = sys if sensors is None else restrict_sensors(sys, sensors)
    if sub.m == 0:
        if not is_strictly_stable(sub.A):
            raise NotDetectableError("empty sensor set with unstable dynamics")
        return np.zeros((sub.n, 0))
    return -solve_dare(sub).gain


def solve_discrete_lyapunov(A, Q):
    """Solve X = A X A^T + Q for strictly stable A by doubling.

    Q must be symmetric; the result is symmetrized and meets a relative
    residual of LYAPUNOV_REL_TOL.
    """
    A = _as_matrix(A, "A")
    Q = _as_matrix(Q, "Q")
    if A.shape[0] != A.shape[1] or Q.shape != A.shape:
        raise ValueError("A and Q must be square with equal shapes")
    if not np.allclose(Q, Q.T, atol=1e-12 * max(1.0, np.abs(Q).max())):
        raise ValueError("Q must be symmetric")
    if not is_strictly_stable(A):
        raise UnstableError(
            f"A must be strictly stable (spectral radius {spectral_radius(A):.6f})"
        )
    X = Q.copy()
    M = A.copy()
    # X_k = sum_{j<2^k} A^j Q A^T^j; quadratic convergence.
    for _ in range(200):
        X_next = X + M @ X @ M.T
        M_next = M @ M
        delta = np.linalg.norm(X_next - X, "fro")
        X, M = 0.5 * (X_next + X_next.T), M_next
        if delta <= 1e-16 * max(1.0, np.linalg.norm(X, "fro")):
            break
    resid = np.linalg.norm(A @ X @ A.T + Q - X, "fro") / max(1.0, np.linalg.norm(X, "fro"))
    if resid > LYAPUNOV_REL_TOL:
        raise NoConvergenceError(f"Lyapunov doubling residual {resid:.3e}")
    return X


def simulate_response(sys: LtiSystem, w, x0=None):
    """Drive the system with the input sequence w (T x l).

    Returns ``(x, y)`` with shapes (T, n) and (T, m); x[t] is the state the
    output y[t] was produced from.
    """
    w = np.atleast_2d(np.asarray(w, dtype=float))
    if w.shape[1] != sys.l:
        raise ValueError(f"input width {w.shape[1]} != l={sys.l}")
    T = w.shape[0]
    x = np.zeros((T, sys.n))
    y = np.zeros((T, sys.m))
    state = np.zeros(sys.n) if x0 is None else np.asarray(x0, dtype=float).copy()
    for t in range(T):
        x[t] = state
        y[t] = sys.C @ state + sys.D @ w[t]
        state = sys.A @ state + sys.B @ w[t]
    return x, y


def save_matrix(path, M):
    """Write a matrix as `rows cols` followed by row-major entries at 17
    significant digits (lossless float64 round-trip)."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    with open(path, "w") as fh:
        fh.write(f"{M.shape[0]} {M.shape[1]}\n")
        for row in M:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def load_matrix(path):
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ValueError(f"bad matrix header in {path}: {header}")
        rows, cols = int(header[0]), int(header[1])
        data = fh.read().split()
    if len(data) != rows * cols:
        raise ValueError(
            f"expected {rows * cols} entries in {path}, found {len(data)}"
        )
    return np.array([float(v) for v in data]).reshape(rows, cols)
