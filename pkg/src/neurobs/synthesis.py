"""Rank tests, stabilizing gains and constructive certificate synthesis.

Everything here reduces to rank computations and Lyapunov solves: gains come
from the Bass construction (a Lyapunov-equation route to pole assignment
that needs no nonsymmetric eigensolver), existence checks evaluate the
diagonal-dominance conditions under which the certificate inequalities hold
at an explicitly constructed (P, lambda), and network synthesis draws inner
weights at a shrinking scale until those conditions pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lmi import (
    assemble_theorem1,
    assemble_theorem2,
    assemble_theorem3,
    assemble_theorem4,
    shift_matrix,
    unit_output_row,
)
from .nn import Activation, NeuralNet, ShapedNN, isolate, isolate_vector
from .sdp import eig_sym, hurwitz_check, lyapunov_solve

__all__ = [
    "rank_matrix",
    "observability_matrix",
    "controllability_matrix",
    "observable",
    "controllable",
    "extended_pair",
    "extended_pair_eps",
    "extending_observable",
    "stabilizing_state_feedback",
    "stabilizing_output_injection",
    "PropCheckReport",
    "prop2_check",
    "prop3_check",
    "synthesize_observer_nn",
    "synthesize_feedback_pair",
    "synthesize_chain_nets",
    "synthesize_corollary2",
    "synthesize_uncertainty_nets",
    "cheap_feedback_gain",
    "gentle_output_injection",
    "riccati_gain",
    "random_inner_weights",
]


def rank_matrix(M, tol: float = 1e-9) -> int:
    """Numerical rank by Gaussian elimination with complete pivoting."""
    M = np.atleast_2d(np.asarray(M, float)).copy()
    if M.size == 0:
        return 0
    thresh = tol * max(np.max(np.abs(M)), 1e-300)
    rank = 0
    rows = list(range(M.shape[0]))
    cols = list(range(M.shape[1]))
    while rows and cols:
        sub = M[np.ix_(rows, cols)]
        i, j = np.unravel_index(np.argmax(np.abs(sub)), sub.shape)
        piv = sub[i, j]
        if abs(piv) <= thresh:
            break
        rank += 1
        r, c = rows.pop(i), cols.pop(j)
        for rr in rows:
            M[rr, :] -= (M[rr, c] / piv) * M[r, :]
    return rank


def observability_matrix(C, A) -> np.ndarray:
    C = np.atleast_2d(np.asarray(C, float))
    A = np.atleast_2d(np.asarray(A, float))
    n = A.shape[0]
    blocks = [C]
    for _ in range(n - 1):
        blocks.append(blocks[-1] @ A)
    return np.vstack(blocks)


def controllability_matrix(A, B) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, float))
    B = np.atleast_2d(np.asarray(B, float))
    blocks = [B]
    for _ in range(A.shape[0] - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def observable(C, A, tol: float = 1e-9) -> bool:
    A = np.atleast_2d(np.asarray(A, float))
    return rank_matrix(observability_matrix(C, A), tol) == A.shape[0]


def controllable(A, B, tol: float = 1e-9) -> bool:
    return observable(np.atleast_2d(np.asarray(B, float)).T,
                      np.atleast_2d(np.asarray(A, float)).T, tol)


def extended_pair(A, B_w, C):
    """Augmented pair ([C, 0], [[A, B_w], [0, 0]]) carrying the uncertainty state."""
    A = np.atleast_2d(np.asarray(A, float))
    B_w = np.atleast_2d(np.asarray(B_w, float))
    C = np.atleast_2d(np.asarray(C, float))
    n_s, n_q = B_w.shape
    bigC = np.hstack([C, np.zeros((C.shape[0], n_q))])
    bigA = np.block(
        [[A, B_w], [np.zeros((n_q, n_s)), np.zeros((n_q, n_q))]]
    )
    return bigC, bigA


def extended_pair_eps(A, B_w, C, eps: float):
    """Gain-scaled augmented pair ([C, 0], [[eps*A, B_w], [0, 0]])."""
    bigC, bigA = extended_pair(A, B_w, C)
    n_s = np.atleast_2d(np.asarray(A, float)).shape[0]
    bigA = bigA.copy()
    bigA[:n_s, :n_s] *= eps
    return bigC, bigA


def extending_observable(A, C, B_w, tol: float = 1e-9) -> bool:
    """Observability of the augmented pair; invariant under the eps scaling."""
    bigC, bigA = extended_pair(A, B_w, C)
    return observable(bigC, bigA, tol)


def _bass_feedback(A, B, tol: float = 1e-9) -> np.ndarray:
    """Gain K with A + B K Hurwitz via one Lyapunov solve.

    Solves (A + beta*I) S + S (A + beta*I)^T = 2 B B^T with beta above the
    largest eigenvalue magnitude; S is invertible exactly when (A, B) is
    controllable, and K = -B^T S^{-1} shifts the closed-loop spectrum into
    the open left half plane.  beta = ||A||_inf + 1 keeps the Gramian as
    well conditioned as the construction allows.
    """
    n = A.shape[0]
    beta = np.linalg.norm(A, np.inf) + 1.0
    M = -(A + beta * np.eye(n))
    S = lyapunov_solve(M.T, 2.0 * B @ B.T)
    w = eig_sym(S)
    if w[0] <= 1e-13 * max(w[-1], 1e-300):
        raise ValueError("pair is not controllable: Bass Gramian is singular")
    K = -np.linalg.solve(S.T, B).T
    return K


def stabilizing_state_feedback(A, B, decay: float = 0.0, tol: float = 1e-9) -> np.ndarray:
    """Gain K such that A + B K is Hurwitz with spectral abscissa < -decay.

    Returns the zero gain when A already meets the decay target.
    """
    A = np.atleast_2d(np.asarray(A, float))
    B = np.atleast_2d(np.asarray(B, float))
    if B.shape[0] != A.shape[0]:
        raise ValueError("B must have as many rows as A")
    if hurwitz_check(A, tol=decay):
        return np.zeros((B.shape[1], A.shape[0]))
    if not controllable(A, B, tol):
        raise ValueError("(A, B) is not controllable")
    K = _bass_feedback(A + decay * np.eye(A.shape[0]), B, tol)
    if not hurwitz_check(A + B @ K, tol=decay * (1 - 1e-9)):
        raise ArithmeticError("Bass feedback failed the closed-loop check")
    return K


def stabilizing_output_injection(A, C, decay: float = 0.0, tol: float = 1e-9) -> np.ndarray:
    """Gain W such that A + W C is Hurwitz with spectral abscissa < -decay."""
    A = np.atleast_2d(np.asarray(A, float))
    C = np.atleast_2d(np.asarray(C, float))
    if C.shape[1] != A.shape[0]:
        raise ValueError("C must have as many columns as A")
    if hurwitz_check(A, tol=decay):
        return np.zeros((A.shape[0], C.shape[0]))
    if not observable(C, A, tol):
        raise ValueError("(C, A) is not observable")
    K = stabilizing_state_feedback(A.T, C.T, decay, tol)
    return K.T


# ---------------------------------------------------------------------------
# Existence conditions at the constructed (P, lambda)


@dataclass
class PropCheckReport:
    """Diagonal-dominance conditions evaluated at the Lyapunov-constructed point."""

    M1: np.ndarray
    M2: np.ndarray
    M3: np.ndarray | None
    norms: dict
    thresholds: dict
    cond_i: bool
    cond_ii: bool
    P: np.ndarray
    lam: np.ndarray

    @property
    def passed(self) -> bool:
        return self.cond_i and self.cond_ii

    def to_json(self) -> dict:
        return {
            "norms": self.norms,
            "thresholds": self.thresholds,
            "cond_i": self.cond_i,
            "cond_ii": self.cond_ii,
            "passed": self.passed,
        }


def _inf_norm(M) -> float:
    return float(np.linalg.norm(M, np.inf)) if M.size else 0.0


def prop2_check(A, C, net: NeuralNet, Q=None, lam=None) -> PropCheckReport:
    """Existence conditions for the single-observer certificate.

    Requires the zero lower sector; builds P from the Lyapunov equation for
    A + W[L+2] C and checks (i) the coupling block is dominated by Q and
    (ii) the multiplier block dominates its off-diagonal mass.  When both
    hold, the assembled certificate constraint at (P, lambda) is negative
    definite by strict diagonal dominance.
    """
    A = np.atleast_2d(np.asarray(A, float))
    C = np.atleast_2d(np.asarray(C, float))
    if np.any(net.alpha != 0.0):
        raise ValueError("existence conditions require zero lower sectors")
    n_s = A.shape[0]
    Q = np.eye(n_s) if Q is None else np.atleast_2d(np.asarray(Q, float))
    if np.any(Q != np.diag(np.diag(Q))) or np.any(np.diag(Q) <= 0):
        raise ValueError("Q must be diagonal with positive entries")
    lam = np.ones(net.n_sigma) if lam is None else np.atleast_1d(np.asarray(lam, float))
    Atil = A + net.weights[-1] @ C
    if not hurwitz_check(Atil):
        raise ValueError("A + W[L+2] C must be Hurwitz")
    P = lyapunov_solve(Atil, Q)
    iso = isolate(ShapedNN(net, C, np.eye(n_s)))
    R1 = np.diag(lam * iso.beta)
    M1 = -P @ iso.out_from_w - iso.pre_from_x.T @ R1
    M2 = R1 @ iso.pre_from_w + iso.pre_from_w.T @ R1
    norms = {
        "M1_inf": _inf_norm(M1),
        "M1_T_inf": _inf_norm(M1.T),
        "M2_inf": _inf_norm(M2),
    }
    thresholds = {"min_q": float(np.min(np.diag(Q))), "two_min_lam": 2.0 * float(np.min(lam))}
    cond_i = norms["M1_inf"] <= thresholds["min_q"]
    cond_ii = norms["M1_T_inf"] + norms["M2_inf"] <= thresholds["two_min_lam"]
    return PropCheckReport(M1, M2, None, norms, thresholds, cond_i, cond_ii, P, lam)


def prop3_check(A, B, C, net1: NeuralNet, net2: NeuralNet,
                Q1=None, Q2=None, lam=None) -> PropCheckReport:
    """Existence conditions for the joint feedback + observer certificate.

    P is block diagonal from two Lyapunov solves (closed loop A + B W1 and
    injection A + W2 C); the extra coupling block M3 = P1 B W1 must also be
    dominated by Q.
    """
    A = np.atleast_2d(np.asarray(A, float))
    B = np.atleast_2d(np.asarray(B, float))
    C = np.atleast_2d(np.asarray(C, float))
    if np.any(net1.alpha != 0.0) or np.any(net2.alpha != 0.0):
        raise ValueError("existence conditions require zero lower sectors")
    n_s = A.shape[0]
    Q1 = np.eye(n_s) if Q1 is None else np.atleast_2d(np.asarray(Q1, float))
    Q2 = np.eye(n_s) if Q2 is None else np.atleast_2d(np.asarray(Q2, float))
    n_lam = net1.n_sigma + net2.n_sigma
    lam = np.ones(n_lam) if lam is None else np.atleast_1d(np.asarray(lam, float))
    A1 = A + B @ net1.weights[-1]
    A2 = A + net2.weights[-1] @ C
    for M, what in ((A1, "A + B W1"), (A2, "A + W2 C")):
        if not hurwitz_check(M):
            raise ValueError(f"{what} must be Hurwitz")
    P1 = lyapunov_solve(A1, Q1)
    P2 = lyapunov_solve(A2, Q2)
    Phat = np.block(
        [[P1, np.zeros((n_s, n_s))], [np.zeros((n_s, n_s)), P2]]
    )
    eye = np.eye(n_s)
    zero = np.zeros((C.shape[0], n_s))
    iso = isolate_vector(
        [ShapedNN(net1, np.hstack([eye, eye]), B), ShapedNN(net2, np.hstack([zero, C]), eye)]
    )
    R1 = np.diag(lam * iso.beta)
    M1 = -Phat @ iso.out_from_w - iso.pre_from_x.T @ R1
    M2 = R1 @ iso.pre_from_w + iso.pre_from_w.T @ R1
    cpl = P1 @ B @ net1.weights[-1]
    M3 = np.block([[np.zeros((n_s, n_s)), cpl], [cpl.T, np.zeros((n_s, n_s))]])
    norms = {
        "M1_inf": _inf_norm(M1),
        "M1_T_inf": _inf_norm(M1.T),
        "M2_inf": _inf_norm(M2),
        "M3_inf": _inf_norm(M3),
    }
    thresholds = {
        "min_q": float(min(np.min(np.diag(Q1)), np.min(np.diag(Q2)))),
        "two_min_lam": 2.0 * float(np.min(lam)),
    }
    cond_i = norms["M1_inf"] + norms["M3_inf"] <= thresholds["min_q"]
    cond_ii = norms["M1_T_inf"] + norms["M2_inf"] <= thresholds["two_min_lam"]
    return PropCheckReport(M1, M2, M3, norms, thresholds, cond_i, cond_ii, Phat, lam)


# ---------------------------------------------------------------------------
# Constructive synthesis


def random_inner_weights(rng, in_dim, hidden, out_dim, scale=1.0):
    """Inner weight stack (W1 .. W[L+1]) drawn uniform(-1, 1) then scaled."""
    widths = [in_dim] + list(hidden) + [out_dim]
    return [scale * rng.uniform(-1, 1, size=(widths[l + 1], widths[l]))
            for l in range(len(widths) - 1)]


def _arch_tuple(arch):
    L, hidden, act = arch
    hidden = list(hidden)
    if len(hidden) != L:
        raise ValueError(f"architecture lists {len(hidden)} widths for L={L}")
    if isinstance(act, str):
        act = Activation.from_json({"kind": act})
    return L, hidden, act


def _zero_lower_sector(net: NeuralNet) -> NeuralNet:
    """Widen the lower sector to zero (valid for every supported activation)."""
    return NeuralNet(net.weights, net.activation,
                     np.zeros(net.n_sigma), net.beta.copy())


def synthesize_observer_nn(A, C, arch, seed: int = 0, decay: float = 0.0,
                           dominance: float = 0.5) -> NeuralNet:
    """Observer network certified through the single-observer conditions.

    The shortcut carries a stabilizing output injection for (C, A); inner
    weights are drawn from a seeded uniform(-1, 1) and halved in scale until
    the dominance conditions hold with slack factor `dominance`.  Shrinking
    always terminates because both coupling norms vanish with the scale.
    """
    A = np.atleast_2d(np.asarray(A, float))
    C = np.atleast_2d(np.asarray(C, float))
    L, hidden, act = _arch_tuple(arch)
    W = stabilizing_output_injection(A, C, decay)
    rng = np.random.default_rng(seed)
    inner = random_inner_weights(rng, C.shape[0], hidden, A.shape[0])

    def build(scale):
        ws = tuple(scale * w for w in inner) + (W,)
        return _zero_lower_sector(NeuralNet(ws, act))

    lam0 = None
    scale = 1.0
    for _ in range(80):
        net = build(scale)
        if lam0 is None:
            probe = prop2_check(A, C, net, lam=np.ones(net.n_sigma))
            lam0 = max(1.0, probe.norms["M1_T_inf"] + probe.norms["M2_inf"])
        lam = np.full(net.n_sigma, lam0)
        rep = prop2_check(A, C, net, lam=lam)
        if (rep.norms["M1_inf"] <= dominance * rep.thresholds["min_q"]
                and rep.norms["M1_T_inf"] + rep.norms["M2_inf"]
                <= dominance * rep.thresholds["two_min_lam"]):
            return net
        scale *= 0.5
    raise ArithmeticError("inner-weight shrinking failed to reach dominance")


def cheap_feedback_gain(A, B, decay: float = 0.0, q: float = 1.0) -> np.ndarray:
    """Moderate stabilizing gain from a cheap-control Riccati solve.

    Solves the control Riccati equation on the shifted plant so the closed
    loop has spectral abscissa below -decay; the gains are far gentler than
    the Bass mirror, which matters when the certificate couples P1 B K.
    """
    A = np.atleast_2d(np.asarray(A, float))
    B = np.atleast_2d(np.asarray(B, float))
    n = A.shape[0]
    if hurwitz_check(A, tol=decay):
        return np.zeros((B.shape[1], n))
    As = A + decay * np.eye(n)
    Kf, _ = riccati_gain(As.T, B.T, q * np.eye(n), np.eye(B.shape[1]))
    K = -Kf.T
    if not hurwitz_check(A + B @ K, tol=decay * (1 - 1e-9)):
        raise ArithmeticError("Riccati feedback failed the closed-loop check")
    return K


def synthesize_feedback_pair(A, B, C, arch1, arch2, seed: int = 0,
                             decay: float = 0.0, dominance: float = 0.5,
                             max_iter: int = 2000):
    """Feedback network and observer network certified jointly.

    The dominance construction is tried first at each inner scale; it can
    only succeed when the fixed coupling block P1 B W1 is small enough
    (automatic for a plant that is already stable, where the feedback
    shortcut is zero).  When the construction never applies, small-scale
    candidates are certified directly through the feasibility solver.
    """
    from .sdp import solve_feasibility, verify_certificate

    A = np.atleast_2d(np.asarray(A, float))
    B = np.atleast_2d(np.asarray(B, float))
    C = np.atleast_2d(np.asarray(C, float))
    n_s = A.shape[0]
    L1, hidden1, act1 = _arch_tuple(arch1)
    L2, hidden2, act2 = _arch_tuple(arch2)
    K = cheap_feedback_gain(A, B, decay)
    W2 = stabilizing_output_injection(A, C, decay)
    rng = np.random.default_rng(seed)
    inner1 = random_inner_weights(rng, n_s, hidden1, B.shape[1])
    inner2 = random_inner_weights(rng, C.shape[0], hidden2, n_s)

    def build(scale):
        n1 = _zero_lower_sector(
            NeuralNet(tuple(scale * w for w in inner1) + (K,), act1)
        )
        n2 = _zero_lower_sector(
            NeuralNet(tuple(scale * w for w in inner2) + (W2,), act2)
        )
        return n1, n2

    lam0 = None
    scale = 1.0
    for halvings in range(40):
        net1, net2 = build(scale)
        n_lam = net1.n_sigma + net2.n_sigma
        if lam0 is None:
            probe = prop3_check(A, B, C, net1, net2, lam=np.ones(n_lam))
            lam0 = max(1.0, probe.norms["M1_T_inf"] + probe.norms["M2_inf"]
                       + probe.norms["M3_inf"])
        rep = prop3_check(A, B, C, net1, net2, lam=np.full(n_lam, lam0))
        if (rep.norms["M1_inf"] + rep.norms["M3_inf"]
                <= dominance * rep.thresholds["min_q"]
                and rep.norms["M1_T_inf"] + rep.norms["M2_inf"]
                <= dominance * rep.thresholds["two_min_lam"]):
            return net1, net2
        if halvings >= 4 and halvings % 3 == 1:
            inst = assemble_theorem2(A, B, C, net1, net2)
            cert = solve_feasibility(inst, max_iter=max_iter)
            if cert.status == "feasible" and verify_certificate(inst, cert).passed:
                return net1, net2
        scale *= 0.5
    raise ArithmeticError("no inner-weight scale yielded a certificate")


def _strictly_dominant_negative(F, slack: float) -> bool:
    """True when -F is strictly diagonally dominant with the given slack."""
    d = -np.diag(F)
    off = np.sum(np.abs(F), axis=1) - np.abs(np.diag(F))
    return bool(np.all(d - off >= slack * np.maximum(d, 1e-300)) and np.all(d > 0))


def _shrink_until_dominant(build_nets, assemble, construct_P, slack=0.25):
    """Shared shrink loop for the chain and uncertainty synthesizers."""
    lam0 = None
    scale = 1.0
    for _ in range(80):
        nets = build_nets(scale)
        inst = assemble(nets)
        P = construct_P()
        if lam0 is None:
            F = inst.constraint_value(0, inst.pack(P, np.ones(inst.n_lambda)))
            off = np.sum(np.abs(F), axis=1) - np.abs(np.diag(F))
            lam0 = max(1.0, float(np.max(off)))
        lam = np.full(inst.n_lambda, lam0)
        F = inst.constraint_value(0, inst.pack(P, lam))
        if _strictly_dominant_negative(F, slack):
            return nets, P, lam
        scale *= 0.5
    raise ArithmeticError("inner-weight shrinking failed to reach dominance")


def synthesize_chain_nets(n: int, arch, seed: int = 0, decay: float = 0.0,
                          slack: float = 0.25):
    """n+1 scalar networks certified for the integrator-chain observer.

    The shortcut column is a stabilizing injection for the shift pair; the
    error flow subtracts the network output, so the gains are negated
    relative to the raw injection.
    """
    L, hidden, act = _arch_tuple(arch)
    m = n + 1
    Atil = shift_matrix(m)
    ctil = unit_output_row(m)
    Wcol = -stabilizing_output_injection(Atil, ctil, decay)
    rng = np.random.default_rng(seed)
    inners = [random_inner_weights(rng, 1, hidden, 1) for _ in range(m)]

    def build(scale):
        return [
            _zero_lower_sector(
                NeuralNet(tuple(scale * w for w in inner) + (Wcol[i:i + 1, :],), act)
            )
            for i, inner in enumerate(inners)
        ]

    Acl = Atil - Wcol @ ctil
    P = lyapunov_solve(Acl, np.eye(m))
    nets, _, _ = _shrink_until_dominant(
        build, lambda nets: assemble_theorem3(n, nets), lambda: P, slack
    )
    return nets


def gentle_output_injection(A, C, q=1.0) -> np.ndarray:
    """Moderate-bandwidth injection W with A + W C Hurwitz via a Riccati solve.

    The Bass route mirrors the spectrum beyond ||A||, which can be far
    faster than wanted; the filter-Riccati gain trades bandwidth explicitly
    (gains grow roughly with sqrt(q)).  q may be a scalar or a per-state
    diagonal to weight channels asymmetrically.
    """
    A = np.atleast_2d(np.asarray(A, float))
    C = np.atleast_2d(np.asarray(C, float))
    q = np.atleast_1d(np.asarray(q, float))
    Wn = q[0] * np.eye(A.shape[0]) if q.size == 1 else np.diag(q)
    Kf, _ = riccati_gain(A, C, Wn, np.eye(C.shape[0]))
    W = -Kf
    if not hurwitz_check(A + W @ C):
        raise ArithmeticError("Riccati injection failed the closed-loop check")
    return W


def synthesize_corollary2(n: int, arch, seed: int = 0, slack: float = 0.25):
    """One shared scalar network certified for the reduced chain certificate.

    Uses unit per-state gains (b = 1), so the same network can drive every
    row of the deployed observer; the scalar shortcut w0 is scanned until
    the chain minus the rank-one injection is Hurwitz.  Returns (net, b).
    """
    from .lmi import assemble_corollary2

    L, hidden, act = _arch_tuple(arch)
    m = n + 1
    Atil = shift_matrix(m)
    ctil = unit_output_row(m)
    ones = np.ones((m, 1))
    w0 = None
    for cand in (1.5, 2.0, 3.0, 4.0, 6.0, 8.0, 12.0, 16.0, 24.0, 32.0):
        if hurwitz_check(Atil - cand * ones @ ctil):
            w0 = cand
            break
    if w0 is None:
        raise ArithmeticError(
            "no scalar shortcut stabilizes the unit-gain chain at this order"
        )
    rng = np.random.default_rng(seed)
    inner = random_inner_weights(rng, 1, hidden, 1)

    def build(scale):
        net = _zero_lower_sector(
            NeuralNet(tuple(scale * w for w in inner) + (np.array([[w0]]),), act)
        )
        return [net]

    P = lyapunov_solve(Atil - w0 * ones @ ctil, np.eye(m))
    nets, _, _ = _shrink_until_dominant(
        build,
        lambda nets: assemble_corollary2(n, nets[0], np.ones(m)),
        lambda: P,
        slack,
    )
    return nets[0], np.ones(m)


def synthesize_uncertainty_nets(A, B_w, C, eps: float, arch, seed: int = 0,
                                decay: float = 0.0, slack: float = 0.25,
                                injection_q=None):
    """State and uncertainty networks certified for the scaled augmented pair.

    injection_q selects the gentle Riccati injection instead of the default
    Bass construction; a (q_state, q_uncertainty) pair weights the two
    channels separately (the uncertainty channel sets how fast the lumped
    disturbance is tracked).
    """
    A = np.atleast_2d(np.asarray(A, float))
    B_w = np.atleast_2d(np.asarray(B_w, float))
    C = np.atleast_2d(np.asarray(C, float))
    n_s, n_q = B_w.shape
    L, hidden, act = _arch_tuple(arch)
    bigC, bigA = extended_pair_eps(A, B_w, C, eps)
    if injection_q is None:
        What = -stabilizing_output_injection(bigA, bigC, decay)
    else:
        qv = np.atleast_1d(np.asarray(injection_q, float))
        if qv.size == 2:
            qv = np.concatenate([np.full(n_s, qv[0]), np.full(n_q, qv[1])])
        What = -gentle_output_injection(bigA, bigC, qv)
    rng = np.random.default_rng(seed)
    inner1 = random_inner_weights(rng, C.shape[0], hidden, n_s)
    inner2 = random_inner_weights(rng, C.shape[0], hidden, n_q)

    def build(scale):
        n1 = _zero_lower_sector(
            NeuralNet(tuple(scale * w for w in inner1) + (What[:n_s, :],), act)
        )
        n2 = _zero_lower_sector(
            NeuralNet(tuple(scale * w for w in inner2) + (What[n_s:, :],), act)
        )
        return n1, n2

    Acl = bigA - What @ bigC
    P = lyapunov_solve(Acl, np.eye(n_s + n_q))
    nets, _, _ = _shrink_until_dominant(
        build,
        lambda nets: assemble_theorem4(A, B_w, C, eps, nets[0], nets[1]),
        lambda: P,
        slack,
    )
    return nets


def riccati_gain(A, C, W_n, V_n, tol: float = 1e-12, max_iter: int = 60):
    """Steady-state filter gain via Kleinman iterations on the filter Riccati equation.

    Each step is one Lyapunov solve; the iteration starts from the Bass
    stabilized injection and converges monotonically.  Returns (K_f, Sigma)
    with Sigma the stabilizing solution of
    A S + S A^T - S C^T V^{-1} C S + W = 0 and K_f = S C^T V^{-1}.
    """
    A = np.atleast_2d(np.asarray(A, float))
    C = np.atleast_2d(np.asarray(C, float))
    n = A.shape[0]
    W_n = np.atleast_2d(np.asarray(W_n, float))
    V_n = np.atleast_2d(np.asarray(V_n, float))
    if eig_sym(V_n)[0] <= 0:
        raise ValueError("measurement covariance must be positive definite")
    if not observable(C, A):
        raise ValueError("(C, A) must be observable")
    Vinv = np.linalg.inv(V_n)
    L = -stabilizing_output_injection(A, C)

    Sigma = np.zeros_like(A)
    wn = max(np.max(np.abs(W_n)), 1.0)
    for _ in range(max_iter):
        Ak = A - L @ C
        Sigma = lyapunov_solve(Ak.T, W_n + L @ V_n @ L.T)
        L_next = Sigma @ C.T @ Vinv
        if np.max(np.abs(L_next - L)) <= tol * max(1.0, np.max(np.abs(L))):
            L = L_next
            break
        L = L_next
    resid = np.max(np.abs(A @ Sigma + Sigma @ A.T
                          - Sigma @ C.T @ Vinv @ C @ Sigma + W_n))
    if resid > 1e-8 * wn:
        raise ArithmeticError(f"Riccati residual {resid:.3e} exceeds 1e-8 * ||W||")
    return Sigma @ C.T @ Vinv, Sigma
