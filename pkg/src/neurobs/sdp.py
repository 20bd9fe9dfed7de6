"""Dense semidefinite feasibility solver and independent certificate checks.

The solver is a phase-I interior-point method on min t subject to
G_j(y) <= t*I for the sign-normalized constraints of an instance; a log-det
barrier is minimized with damped Newton steps.  Verification deliberately
avoids the solver's machinery: constraints are re-assembled from the raw
affine data and checked with a cyclic-Jacobi symmetric eigensolver.

The Lyapunov equation is solved through the Kronecker-vectorized linear
system, which is exact and dependency-free at the matrix sizes used here,
and doubles as the Hurwitz test (the equation with Q = I has a positive
definite solution precisely for Hurwitz matrices).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lmi import LmiInstance

__all__ = [
    "eig_sym",
    "lyapunov_solve",
    "hurwitz_check",
    "Certificate",
    "VerifyReport",
    "solve_feasibility",
    "verify_certificate",
]


def eig_sym(M, tol: float = 1e-12, vectors: bool = False):
    """Eigenvalues (ascending) of a symmetric matrix by cyclic Jacobi rotations.

    Parameters
    ----------
    M : array_like
        Symmetric matrix; symmetry residual above 1e-10 * ||M|| is rejected.
    tol : float
        Off-diagonal reduction target relative to ||M||_F.
    vectors : bool
        If True also return the orthogonal eigenvector matrix, columns
        ordered to match the eigenvalues.
    """
    A = np.atleast_2d(np.asarray(M, float)).copy()
    m = A.shape[0]
    if A.shape != (m, m):
        raise ValueError("matrix must be square")
    norm = np.max(np.abs(A)) if m else 0.0
    if norm and np.max(np.abs(A - A.T)) > 1e-10 * norm:
        raise ValueError("matrix is not symmetric")
    A = 0.5 * (A + A.T)
    V = np.eye(m)
    if m <= 1:
        w = np.diag(A).copy()
        return (w, V) if vectors else w

    norm_f = max(np.linalg.norm(A, "fro"), 1e-300)
    for _ in range(60):
        off = np.linalg.norm(A - np.diag(np.diag(A)), "fro")
        if off <= tol * norm_f:
            break
        thresh = off / (m * m)
        for p in range(m - 1):
            for q in range(p + 1, m):
                apq = A[p, q]
                if abs(apq) <= thresh:
                    continue
                theta = 0.5 * (A[q, q] - A[p, p]) / apq
                t = np.sign(theta) / (abs(theta) + np.hypot(theta, 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot = np.array([[c, s], [-s, c]])
                A[[p, q], :] = rot.T @ A[[p, q], :]
                A[:, [p, q]] = A[:, [p, q]] @ rot
                V[:, [p, q]] = V[:, [p, q]] @ rot
    w = np.diag(A).copy()
    order = np.argsort(w, kind="stable")
    w = w[order]
    if vectors:
        return w, V[:, order]
    return w


def _lyap_kron(A, Q):
    """Raw Kronecker solve of A^T P + P A = -Q; no stability check."""
    m = A.shape[0]
    eye = np.eye(m)
    K = np.kron(eye, A.T) + np.kron(A.T, eye)
    p = np.linalg.solve(K, -Q.reshape(-1))
    P = p.reshape(m, m)
    return 0.5 * (P + P.T)


def hurwitz_check(A, tol: float = 0.0) -> bool:
    """True iff every eigenvalue of A has real part below -tol.

    Uses the Lyapunov criterion instead of a nonsymmetric eigensolver: the
    shifted matrix A + tol*I is Hurwitz exactly when A^T P + P A = -I has a
    unique positive definite solution.  A singular or ill-conditioned
    Kronecker system (eigenvalue pair straddling the boundary) is reported
    as not Hurwitz at this tolerance.
    """
    A = np.atleast_2d(np.asarray(A, float))
    m = A.shape[0]
    if A.shape != (m, m):
        raise ValueError("A must be square")
    As = A + tol * np.eye(m)
    Q = np.eye(m)
    try:
        P = _lyap_kron(As, Q)
    except np.linalg.LinAlgError:
        return False
    if not np.all(np.isfinite(P)):
        return False
    resid = np.max(np.abs(As.T @ P + P @ As + Q))
    if resid > 1e-8 * max(1.0, np.max(np.abs(P))):
        return False
    return bool(eig_sym(P)[0] > 0.0)


def lyapunov_solve(A, Q) -> np.ndarray:
    """Solve A^T P + P A = -Q for Hurwitz A and symmetric Q.

    Raises if A fails the Hurwitz check (solution would not be the positive
    one needed downstream) or if the residual exceeds 1e-9 * ||Q||.
    """
    A = np.atleast_2d(np.asarray(A, float))
    Q = np.atleast_2d(np.asarray(Q, float))
    if Q.shape != A.shape:
        raise ValueError("Q must match A in shape")
    if np.max(np.abs(Q - Q.T)) > 1e-10 * max(1.0, np.max(np.abs(Q))):
        raise ValueError("Q must be symmetric")
    if not hurwitz_check(A):
        raise ValueError("A is not Hurwitz; refusing Lyapunov solve")
    P = _lyap_kron(A, Q)
    qn = max(np.max(np.abs(Q)), 1e-300)
    resid = np.max(np.abs(A.T @ P + P @ A + Q))
    if resid > 1e-9 * qn:
        raise ArithmeticError(f"Lyapunov residual {resid:.3e} exceeds 1e-9 * ||Q||")
    return P


# ---------------------------------------------------------------------------
# Phase-I interior point


@dataclass
class Certificate:
    """Result of a feasibility solve.

    margins holds, per constraint, the worst signed slack after independent
    re-evaluation (nonnegative for every constraint iff status is feasible).
    final_t is the phase-I gauge: negative values certify strict feasibility
    of the normalized constraints.
    """

    y: np.ndarray
    status: str
    margins: np.ndarray
    iterations: int
    final_t: float

    def to_json(self) -> dict:
        return {
            "status": self.status,
            "y": self.y.tolist(),
            "margins": self.margins.tolist(),
            "iterations": self.iterations,
            "final_t": self.final_t,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Certificate":
        return cls(
            np.asarray(d["y"], float),
            d["status"],
            np.asarray(d["margins"], float),
            int(d["iterations"]),
            float(d["final_t"]),
        )


@dataclass
class VerifyReport:
    """Independent re-check of a certificate against an instance."""

    passed: bool
    slacks: list            # per constraint: signed slack of every eigenvalue
    worst: np.ndarray       # per constraint: minimum slack
    extremes: np.ndarray    # per constraint: the extreme eigenvalue checked

    @property
    def margins(self) -> np.ndarray:
        """All eigenvalue slacks flattened in constraint order."""
        return np.concatenate(self.slacks) if self.slacks else np.zeros(0)

    def to_json(self) -> dict:
        return {
            "passed": self.passed,
            "slacks": [s.tolist() for s in self.slacks],
            "worst": self.worst.tolist(),
            "extremes": self.extremes.tolist(),
        }


def _normalized(inst: LmiInstance):
    """Per-constraint (G0, basis, scale) with requirement G(y) <= 0.

    Sign-definite constraints are folded to the negative side and each block
    is scaled by its largest coefficient so the phase-I gauge t is comparable
    across constraints.
    """
    normed = []
    for c in inst.constraints:
        sgn = -1.0 if c.sign == "pos" else 1.0
        eye = np.eye(c.dim)
        G0 = sgn * c.F0 + c.margin * eye
        basis = [sgn * Fi for Fi in c.basis]
        s = max(
            float(np.max(np.abs(G0))),
            max((float(np.max(np.abs(F))) for F in basis), default=0.0),
            1e-300,
        )
        normed.append((G0 / s, [F / s for F in basis], s))
    return normed


def solve_feasibility(inst: LmiInstance, max_iter: int = 2000, tol: float = 1e-9,
                      mu_decrease: float = 0.5, newton_tol: float = 1e-10) -> Certificate:
    """Phase-I interior-point search for a strictly feasible decision vector.

    Minimizes t subject to G_j(y) <= t*I over the normalized constraints,
    descending a log-det barrier with damped Newton steps and backtracking.
    Returns status "feasible" once t is driven strictly negative (then every
    constraint holds with its margin), "infeasible_suspected" when the
    barrier schedule finishes with t still nonnegative, and "max_iter" when
    the iteration budget runs out first.  Deterministic for fixed inputs.
    """
    normed = _normalized(inst)
    p = inst.n_vars
    dims = [G0.shape[0] for G0, _, _ in normed]
    total_dim = sum(dims)

    def g_values(y):
        return [G0 + _combine(basis, y) for G0, basis, _ in normed]

    y = np.zeros(p)
    g0 = g_values(y)
    top = max(float(eig_sym(G)[-1]) for G in g0)
    if top > 0.0:
        t = 2.0 * top
    elif top < 0.0:
        t = 0.5 * top
    else:
        t = 1.0

    t_target = -0.5  # strict feasibility of normalized blocks with real slack
    barrier = 1.0
    barrier_min = tol / max(total_dim, 1)
    iters = 0
    best_t = t
    best_y = y.copy()
    stalled = False

    while iters < max_iter and not stalled:
        # Newton loop at the current barrier weight.
        for _ in range(80):
            if iters >= max_iter:
                break
            iters += 1
            gs = g_values(y)
            chols = []
            ok = True
            for G in gs:
                S = t * np.eye(G.shape[0]) - G
                try:
                    Lc = np.linalg.cholesky(S)
                except np.linalg.LinAlgError:
                    ok = False
                    break
                chols.append(Lc)
            if not ok:
                # Lost strict feasibility to round-off: push t outwards.
                t = t + max(1e-12, 0.1 * abs(t))
                continue

            grad = np.zeros(p + 1)
            hess = np.zeros((p + 1, p + 1))
            grad[p] = 1.0 / barrier
            for (G0, basis, _), Lc in zip(normed, chols):
                m = G0.shape[0]
                Linv = np.linalg.solve(Lc, np.eye(m))
                # Whitened derivative blocks W_k = Linv (dS/dz_k) Linv^T give
                # grad_k(-log det S) = -tr(W_k), hess_kl = tr(W_k W_l).
                whitened = [Linv @ (-Fi) @ Linv.T for Fi in basis]
                whitened.append(Linv @ Linv.T)  # dS/dt = I
                for k, Wk in enumerate(whitened):
                    grad[min(k, p)] += -np.trace(Wk)
                flat = np.array([Wk.reshape(-1) for Wk in whitened])
                hess += flat @ flat.T

            try:
                step = -np.linalg.solve(hess + 1e-12 * np.eye(p + 1), grad)
            except np.linalg.LinAlgError:
                step = -grad
            decrement = -float(grad @ step)
            if decrement < 0.0:
                step = -grad
                decrement = float(grad @ grad)

            # Backtracking line search on the barrier objective.
            phi0 = _barrier_value(g_values, y, t, barrier)
            alpha = 1.0
            accepted = False
            for _ in range(60):
                yn = y + alpha * step[:p]
                tn = t + alpha * step[p]
                phin = _barrier_value(g_values, yn, tn, barrier)
                if phin is not None and phin <= phi0 - 0.01 * alpha * decrement:
                    y, t = yn, tn
                    accepted = True
                    break
                alpha *= 0.5
            if t < best_t:
                best_t, best_y = t, y.copy()
            if t <= t_target:
                break
            if not accepted or 0.5 * decrement < newton_tol:
                break
        if t <= t_target:
            break
        if barrier <= barrier_min:
            stalled = True
        barrier *= mu_decrease

    if best_t < t:
        y, t = best_y, best_t
    report = verify_certificate(inst, Certificate(y, "candidate", np.zeros(0), iters, t))
    if t <= -tol and report.passed:
        status = "feasible"
    elif t <= -tol:
        status = "max_iter"  # gauge negative but re-check failed: no certificate
    elif iters >= max_iter and t < 0.0:
        status = "max_iter"
    else:
        status = "infeasible_suspected"
    return Certificate(y, status, report.worst, iters, float(t))


def _combine(basis, y):
    G = np.zeros_like(basis[0]) if basis else np.zeros((0, 0))
    for yi, Fi in zip(y, basis):
        if yi != 0.0:
            G = G + yi * Fi
    return G


def _barrier_value(g_values, y, t, barrier):
    """Barrier objective, or None when (y, t) is not strictly feasible."""
    total = t / barrier
    for G in g_values(y):
        S = t * np.eye(G.shape[0]) - G
        try:
            Lc = np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            return None
        total -= 2.0 * float(np.sum(np.log(np.diag(Lc))))
    return total


def verify_certificate(inst: LmiInstance, cert: Certificate) -> VerifyReport:
    """Re-assemble every constraint at cert.y and check signs by eigenvalues.

    Independent of the solver: uses the instance's raw affine data and the
    Jacobi eigensolver only.  A constraint passes when every eigenvalue
    satisfies the required sign with at least the stored margin.
    """
    y = np.asarray(cert.y, float)
    slacks = []
    worst = []
    extremes = []
    for c in inst.constraints:
        w = eig_sym(c.value(y))
        if c.sign == "neg":
            s = -w - c.margin
            extremes.append(w[-1])
        else:
            s = w - c.margin
            extremes.append(w[0])
        s = np.sort(s)
        slacks.append(s)
        worst.append(s[0])
    worst = np.asarray(worst)
    return VerifyReport(bool(np.all(worst >= 0.0)), slacks, worst, np.asarray(extremes))
