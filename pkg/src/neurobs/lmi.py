"""Sector quadratic constraints and affine semidefinite feasibility instances.

The certificates all have the same shape: find a symmetric positive definite
P and nonnegative multipliers lambda such that an affine symmetric-matrix map
built from the plant matrices and a network isolation form is negative
definite.  This module builds those maps explicitly as dense basis matrices
over a packed decision vector (upper triangle of P, then lambda), so that an
instance can be solved, independently re-verified and exported.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import IsolationForm, NeuralNet, ShapedNN, SignalStack, isolate, isolate_vector

__all__ = [
    "QCData",
    "qc_matrices",
    "qc_value",
    "Constraint",
    "LmiInstance",
    "assemble_theorem1",
    "assemble_theorem2",
    "assemble_theorem3",
    "assemble_corollary2",
    "assemble_theorem4",
    "shift_matrix",
    "unit_output_row",
]

DEFAULT_MARGIN_FACTOR = 1e-6


@dataclass(frozen=True)
class QCData:
    """Sector constraint in matrix form.

    selector is the fixed 2n x 2n map [[diag(beta), -I], [-diag(alpha), I]];
    multiplier(lam) = [[0, diag(lam)], [diag(lam), 0]].  For genuine signals
    w_i = sigma(xi_i) the quadratic form

        [xi; w]^T selector^T multiplier(lam) selector [xi; w]
            = 2 * sum_i lam_i (w_i - alpha_i xi_i)(beta_i xi_i - w_i)

    is nonnegative whenever lam >= 0.
    """

    alpha: np.ndarray
    beta: np.ndarray
    selector: np.ndarray

    @property
    def n(self) -> int:
        return self.alpha.size

    def multiplier(self, lam) -> np.ndarray:
        lam = _check_lambda(lam, self.n)
        d = np.diag(lam)
        z = np.zeros((self.n, self.n))
        return np.block([[z, d], [d, z]])

    def form_matrix(self, lam) -> np.ndarray:
        return self.selector.T @ self.multiplier(lam) @ self.selector

    def value(self, xi, w, lam) -> float:
        z = np.concatenate([np.atleast_1d(xi), np.atleast_1d(w)])
        return float(z @ self.form_matrix(lam) @ z)


def qc_matrices(alpha, beta) -> QCData:
    """Sector QC matrices for per-neuron sectors [alpha_i, beta_i]."""
    alpha = np.atleast_1d(np.asarray(alpha, float))
    beta = np.atleast_1d(np.asarray(beta, float))
    if alpha.shape != beta.shape:
        raise ValueError("alpha and beta must have equal length")
    if np.any(alpha > beta):
        raise ValueError("sector requires alpha <= beta componentwise")
    n = alpha.size
    eye = np.eye(n)
    selector = np.block([[np.diag(beta), -eye], [-np.diag(alpha), eye]])
    return QCData(alpha, beta, selector)


def qc_value(iso: IsolationForm, stack: SignalStack, lam) -> float:
    """Quadratic-constraint value for a signal stack under multipliers lam."""
    if stack.xi.size != iso.n_sigma or stack.w.size != iso.n_sigma:
        raise ValueError(
            f"signal stack length {stack.xi.size} != isolation n_sigma {iso.n_sigma}"
        )
    return qc_matrices(iso.alpha, iso.beta).value(stack.xi, stack.w, lam)


def _check_lambda(lam, n: int) -> np.ndarray:
    lam = np.atleast_1d(np.asarray(lam, float))
    if lam.size == 1 and n > 1:
        lam = np.full(n, lam[0])
    if lam.shape != (n,):
        raise ValueError(f"lambda must have length {n}")
    if np.any(lam < 0):
        raise ValueError("lambda must be nonnegative")
    return lam


# ---------------------------------------------------------------------------
# Feasibility instances


@dataclass
class Constraint:
    """Affine symmetric constraint F(y) = F0 + sum_i y_i Fi, required sign-definite.

    sign "neg" means F(y) + margin*I <= 0; sign "pos" means F(y) - margin*I >= 0.
    """

    name: str
    sign: str
    margin: float
    F0: np.ndarray
    basis: list

    def value(self, y) -> np.ndarray:
        F = self.F0.copy()
        for yi, Fi in zip(y, self.basis):
            if yi != 0.0:
                F += yi * Fi
        return F

    @property
    def dim(self) -> int:
        return self.F0.shape[0]


@dataclass
class LmiInstance:
    """Feasibility problem over y = [vech(P); lambda].

    The first dim_p*(dim_p+1)//2 entries of y are the upper triangle of P in
    row-major order; the remaining n_lambda entries are the QC multipliers.
    """

    dim_p: int
    n_lambda: int
    constraints: list
    provenance: dict = field(default_factory=dict)
    scale: float = 1.0

    @property
    def n_vars(self) -> int:
        return self.dim_p * (self.dim_p + 1) // 2 + self.n_lambda

    def pack(self, P, lam) -> np.ndarray:
        P = np.asarray(P, float)
        lam = np.atleast_1d(np.asarray(lam, float))
        if P.shape != (self.dim_p, self.dim_p):
            raise ValueError(f"P must be {self.dim_p} x {self.dim_p}")
        if lam.size == 1 and self.n_lambda > 1:
            lam = np.full(self.n_lambda, lam[0])
        if lam.shape != (self.n_lambda,):
            raise ValueError(f"lambda must have length {self.n_lambda}")
        iu = np.triu_indices(self.dim_p)
        return np.concatenate([P[iu], lam])

    def unpack(self, y):
        y = np.asarray(y, float)
        m = self.dim_p
        P = np.zeros((m, m))
        iu = np.triu_indices(m)
        P[iu] = y[: iu[0].size]
        P = P + np.triu(P, 1).T
        return P, y[iu[0].size:]

    def constraint_value(self, j: int, y) -> np.ndarray:
        return self.constraints[j].value(np.asarray(y, float))

    def to_json(self) -> dict:
        return {
            "m_P": self.dim_p,
            "n_lambda": self.n_lambda,
            "constraints": [
                {
                    "name": c.name,
                    "sign": c.sign,
                    "margin": c.margin,
                    "F0": c.F0.tolist(),
                    "Fi": [F.tolist() for F in c.basis],
                }
                for c in self.constraints
            ],
            "provenance": self.provenance,
            "scale": self.scale,
        }

    @classmethod
    def from_json(cls, d: dict) -> "LmiInstance":
        cons = [
            Constraint(
                c.get("name", f"c{j}"),
                c["sign"],
                float(c["margin"]),
                np.asarray(c["F0"], float),
                [np.asarray(F, float) for F in c["Fi"]],
            )
            for j, c in enumerate(d["constraints"])
        ]
        return cls(
            int(d["m_P"]),
            int(d["n_lambda"]),
            cons,
            d.get("provenance", {}),
            float(d.get("scale", 1.0)),
        )


def _affine_constraint(name, sign, margin, fn, n_vars) -> Constraint:
    """Sample an affine matrix map at unit decisions to recover F0 and the basis."""
    F0 = fn(np.zeros(n_vars))
    basis = []
    for k in range(n_vars):
        e = np.zeros(n_vars)
        e[k] = 1.0
        basis.append(fn(e) - F0)
    return Constraint(name, sign, margin, F0, basis)


def _build_instance(main_fn, dim_p, n_lambda, provenance, margin=None) -> LmiInstance:
    """Assemble main / positivity / multiplier constraints for one certificate.

    main_fn(P, lam) must return the symmetric matrix required negative
    definite.  Strictness is enforced through a margin proportional to the
    largest coefficient magnitude in the main constraint.
    """
    n_vars = dim_p * (dim_p + 1) // 2 + n_lambda
    packer = LmiInstance(dim_p, n_lambda, [])

    def main_of_y(y):
        P, lam = packer.unpack(y)
        F = main_fn(P, lam)
        return 0.5 * (F + F.T)

    main = _affine_constraint("main", "neg", 0.0, main_of_y, n_vars)
    scale = max(
        float(np.max(np.abs(main.F0))) if main.F0.size else 0.0,
        max((float(np.max(np.abs(F))) for F in main.basis), default=0.0),
        1e-300,
    )
    mu = DEFAULT_MARGIN_FACTOR * scale if margin is None else float(margin)
    main.margin = mu

    def p_of_y(y):
        P, _ = packer.unpack(y)
        return P

    def lam_of_y(y):
        _, lam = packer.unpack(y)
        return np.diag(lam)

    cons = [main, _affine_constraint("P_pos", "pos", mu, p_of_y, n_vars)]
    if n_lambda:
        cons.append(_affine_constraint("lambda_pos", "pos", mu, lam_of_y, n_vars))
    return LmiInstance(dim_p, n_lambda, cons, provenance, scale)


def _lyap_outer(io_map, mid):
    return io_map.T @ mid @ io_map


def _qc_outer(loop_map, qc: QCData, lam):
    return loop_map.T @ qc.form_matrix(lam) @ loop_map


def _main_map(iso: IsolationForm, lyap_mid_fn):
    """Common main-constraint map: Lyapunov part plus sector QC part."""
    qc = qc_matrices(iso.alpha, iso.beta)

    def fn(P, lam):
        return _lyap_outer(iso.io_map, lyap_mid_fn(P)) + _qc_outer(iso.loop_map, qc, lam)

    return fn


def shift_matrix(m: int) -> np.ndarray:
    """m x m upper shift (ones on the first superdiagonal)."""
    return np.diag(np.ones(m - 1), 1) if m > 1 else np.zeros((1, 1))


def unit_output_row(m: int) -> np.ndarray:
    """Row vector [1, 0, ..., 0] of length m."""
    c = np.zeros((1, m))
    c[0, 0] = 1.0
    return c


def assemble_theorem1(A, C, net: NeuralNet, margin=None) -> LmiInstance:
    """Observer certificate for an LTI plant: error flow e' = A e + pi(C e)."""
    A = np.atleast_2d(np.asarray(A, float))
    C = np.atleast_2d(np.asarray(C, float))
    n_s = A.shape[0]
    if A.shape != (n_s, n_s):
        raise ValueError("A must be square")
    if C.shape[1] != n_s:
        raise ValueError(f"C must have {n_s} columns")
    if net.input_dim != C.shape[0] or net.output_dim != n_s:
        raise ValueError(
            f"network must map {C.shape[0]} -> {n_s}, "
            f"got {net.input_dim} -> {net.output_dim}"
        )
    iso = isolate(ShapedNN(net, C, np.eye(n_s)))

    def mid(P):
        top = A.T @ P + P @ A
        return np.block([[top, P], [P, np.zeros((n_s, n_s))]])

    fn = _main_map(iso, mid)
    prov = {"theorem": "1", "n_s": n_s, "n_o": C.shape[0], "n_sigma": iso.n_sigma}
    return _build_instance(fn, n_s, iso.n_sigma, prov, margin)


def assemble_theorem2(A, B, C, net1: NeuralNet, net2: NeuralNet, margin=None) -> LmiInstance:
    """Joint observer + feedback certificate for an LTI plant.

    net1 is the feedback network (reads the estimate, output shaped by B);
    net2 is the observer injection network (reads the output error).
    """
    A = np.atleast_2d(np.asarray(A, float))
    B = np.atleast_2d(np.asarray(B, float))
    C = np.atleast_2d(np.asarray(C, float))
    n_s = A.shape[0]
    if B.shape[0] != n_s or C.shape[1] != n_s:
        raise ValueError("B / C dimensions do not match A")
    if net1.input_dim != n_s or net1.output_dim != B.shape[1]:
        raise ValueError(f"net1 must map {n_s} -> {B.shape[1]}")
    if net2.input_dim != C.shape[0] or net2.output_dim != n_s:
        raise ValueError(f"net2 must map {C.shape[0]} -> {n_s}")
    eye = np.eye(n_s)
    zero = np.zeros((C.shape[0], n_s))
    iso = isolate_vector(
        [
            ShapedNN(net1, np.hstack([eye, eye]), B),
            ShapedNN(net2, np.hstack([zero, C]), eye),
        ]
    )
    Ahat = np.block([[A, np.zeros((n_s, n_s))], [np.zeros((n_s, n_s)), A]])
    m = 2 * n_s

    def mid(P):
        top = Ahat.T @ P + P @ Ahat
        return np.block([[top, P], [P, np.zeros((m, m))]])

    fn = _main_map(iso, mid)
    prov = {"theorem": "2", "n_s": n_s, "n_sigma": iso.n_sigma}
    return _build_instance(fn, m, iso.n_sigma, prov, margin)


def assemble_theorem3(n: int, nets: list, margin=None) -> LmiInstance:
    """Extended-state observer certificate for an integrator chain of order n.

    Takes n+1 scalar-in / scalar-out networks; the error flow subtracts the
    stacked network output, hence the -P off-diagonal blocks.
    """
    if len(nets) != n + 1:
        raise ValueError(f"need {n + 1} networks, got {len(nets)}")
    for k, net in enumerate(nets):
        if net.input_dim != 1 or net.output_dim != 1:
            raise ValueError(f"network {k} must be scalar-in scalar-out")
    m = n + 1
    ctil = unit_output_row(m)
    iso = isolate_vector([ShapedNN(net, ctil, np.eye(1)) for net in nets])
    Atil = shift_matrix(m)

    def mid(P):
        top = Atil.T @ P + P @ Atil
        return np.block([[top, -P], [-P, np.zeros((m, m))]])

    fn = _main_map(iso, mid)
    prov = {"theorem": "3", "n": n, "n_sigma": iso.n_sigma}
    return _build_instance(fn, m, iso.n_sigma, prov, margin)


def assemble_corollary2(n: int, net: NeuralNet, b_gains, margin=None) -> LmiInstance:
    """Shared-network variant of the chain certificate with per-state gains b."""
    if net.input_dim != 1 or net.output_dim != 1:
        raise ValueError("network must be scalar-in scalar-out")
    b = np.atleast_1d(np.asarray(b_gains, float))
    if b.shape != (n + 1,):
        raise ValueError(f"b_gains must have length {n + 1}")
    m = n + 1
    ctil = unit_output_row(m)
    iso = isolate(ShapedNN(net, ctil, np.eye(1)))
    Atil = shift_matrix(m)
    bcol = b.reshape(-1, 1)

    def mid(P):
        top = Atil.T @ P + P @ Atil
        off = -P @ bcol
        return np.block([[top, off], [off.T, np.zeros((1, 1))]])

    fn = _main_map(iso, mid)
    prov = {"theorem": "3c", "n": n, "n_sigma": iso.n_sigma, "b": b.tolist()}
    return _build_instance(fn, m, iso.n_sigma, prov, margin)


def assemble_theorem4(A, B_w, C, eps: float, net1: NeuralNet, net2: NeuralNet,
                      margin=None) -> LmiInstance:
    """Extended-state observer certificate for a linear plant with matched uncertainty.

    net1 estimates the plant-state injection (output dim n_s), net2 the
    uncertainty channel (output dim n_q); both read the scaled output error.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    A = np.atleast_2d(np.asarray(A, float))
    B_w = np.atleast_2d(np.asarray(B_w, float))
    C = np.atleast_2d(np.asarray(C, float))
    n_s, n_q = B_w.shape
    n_o = C.shape[0]
    if A.shape != (n_s, n_s) or C.shape[1] != n_s:
        raise ValueError("A / C dimensions do not match B_w")
    if net1.input_dim != n_o or net1.output_dim != n_s:
        raise ValueError(f"net1 must map {n_o} -> {n_s}")
    if net2.input_dim != n_o or net2.output_dim != n_q:
        raise ValueError(f"net2 must map {n_o} -> {n_q}")
    m = n_s + n_q
    bigC = np.hstack([C, np.zeros((n_o, n_q))])
    Aeps = np.block(
        [[eps * A, B_w], [np.zeros((n_q, n_s)), np.zeros((n_q, n_q))]]
    )
    iso = isolate_vector(
        [ShapedNN(net1, bigC, np.eye(n_s)), ShapedNN(net2, bigC, np.eye(n_q))]
    )

    def mid(P):
        top = Aeps.T @ P + P @ Aeps
        return np.block([[top, -P], [-P, np.zeros((m, m))]])

    fn = _main_map(iso, mid)
    prov = {
        "theorem": "4",
        "n_s": n_s,
        "n_q": n_q,
        "eps": eps,
        "n_sigma": iso.n_sigma,
    }
    return _build_instance(fn, m, iso.n_sigma, prov, margin)
