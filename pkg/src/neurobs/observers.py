"""Plant models, observer right-hand sides, controllers and baselines.

Sign convention for the network injection: a certificate analyzes the error
flow e' = A e + pi(C e) with e = estimate - state, while the observer feeds
the innovation y - C xhat = -C e into its network.  The two agree when the
deployed network is the input negation of the certified one (first layer
and shortcut negated), which `NeuralNet.negate_input` provides.  The
integrator-chain and uncertainty observers subtract the network in their
error flow, so their certified networks deploy unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import NeuralNet
from .sdp import hurwitz_check
from .synthesis import (
    rank_matrix,
    stabilizing_output_injection,
)

__all__ = [
    "LtiPlant",
    "ChainPlant",
    "MimoPlant",
    "sat",
    "NnFeedback",
    "SatAdrc",
    "OutputFeedback",
    "OpenLoop",
    "control_eval",
    "neural_lti_rhs",
    "neural_chain_rhs",
    "neural_mimo_rhs",
    "kalman_rhs",
    "NeuralLtiObserver",
    "NeuralChainObserver",
    "NeuralMimoObserver",
    "KalmanObserver",
    "GsloObserver",
    "gslo_build",
    "UioRealization",
    "uio_build",
    "UioObserver",
]


# ---------------------------------------------------------------------------
# Plants


@dataclass
class LtiPlant:
    """x' = A x + B u (+ process noise), y = C x (+ measurement noise)."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, float))
        self.B = np.atleast_2d(np.asarray(self.B, float))
        self.C = np.atleast_2d(np.asarray(self.C, float))

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.C.shape[0]

    def rhs(self, t, x, u, w):
        dx = self.A @ x + self.B @ u
        if w is not None:
            dx = dx + w
        return dx

    def output(self, x):
        return self.C @ x


@dataclass
class ChainPlant:
    """Integrator chain x_i' = x_{i+1}, x_n' = f(t, x, w) + b u, y = x_1.

    f is the true lumped dynamics of the top derivative (unknown to the
    observer); b is the true input gain, which may differ from the nominal
    gain the observer was designed with.
    """

    n: int
    b: float
    f: object  # callable (t, x, w) -> float

    @property
    def n_states(self) -> int:
        return self.n

    @property
    def n_outputs(self) -> int:
        return 1

    def rhs(self, t, x, u, w):
        dx = np.empty(self.n)
        dx[:-1] = x[1:]
        dx[-1] = self.f(t, x, w) + self.b * float(u[0])
        return dx

    def output(self, x):
        return x[:1]

    def extended_truth(self, t, x, u, w, nominal_b: float):
        """Total uncertainty seen by a nominal-gain observer: x_n' - b0 u."""
        return np.array([self.f(t, x, w) + (self.b - nominal_b) * float(u[0])])


@dataclass
class MimoPlant:
    """x' = A x + B u + B_w k(x, w, t), y = C x."""

    A: np.ndarray
    B: np.ndarray
    B_w: np.ndarray
    C: np.ndarray
    k: object  # callable (x, w, t) -> vector

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, float))
        self.B = np.atleast_2d(np.asarray(self.B, float))
        self.B_w = np.atleast_2d(np.asarray(self.B_w, float))
        self.C = np.atleast_2d(np.asarray(self.C, float))

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.C.shape[0]

    @property
    def n_uncertain(self) -> int:
        return self.B_w.shape[1]

    def rhs(self, t, x, u, w):
        return self.A @ x + self.B @ u + self.B_w @ self.k(x, w, t)

    def output(self, x):
        return self.C @ x

    def extended_truth(self, t, x, u, w, nominal_b=None):
        return np.asarray(self.k(x, w, t), float)


# ---------------------------------------------------------------------------
# Controllers


def sat(bound: float, v):
    """Clamp v to [-bound, bound] componentwise."""
    return np.clip(v, -bound, bound)


@dataclass
class NnFeedback:
    """u = net(xhat); reads the first observer's estimate."""

    net: NeuralNet


@dataclass
class SatAdrc:
    """Saturated linear feedback with uncertainty cancellation.

    u = (rho * sum_i k_i sat_{M_i}(rho^{n-i} xhat_i) - sat_{M_{n+1}}(xhat_{n+1})) / b
    for a chain estimate xhat of length n+1.
    """

    rho: float
    k: np.ndarray
    M: np.ndarray
    b: float = 1.0

    def __post_init__(self):
        self.k = np.atleast_1d(np.asarray(self.k, float))
        self.M = np.atleast_1d(np.asarray(self.M, float))
        if self.M.size != self.k.size + 1:
            raise ValueError("need one saturation bound per state plus the extended state")
        if np.any(self.M <= 0):
            raise ValueError("saturation bounds must be positive")

    def bound(self) -> float:
        """Hard output bound (rho * sum |k_i| M_i + M_{n+1}) / |b|."""
        return float(
            (self.rho * np.sum(np.abs(self.k) * self.M[:-1]) + self.M[-1]) / abs(self.b)
        )


@dataclass
class OutputFeedback:
    """u = G y."""

    G: np.ndarray

    def __post_init__(self):
        self.G = np.atleast_2d(np.asarray(self.G, float))


@dataclass
class OpenLoop:
    """u = profile(t); defaults to zero input."""

    profile: object = None
    n_inputs: int = 1

    def u_of_t(self, t):
        if self.profile is None:
            return np.zeros(self.n_inputs)
        return np.atleast_1d(np.asarray(self.profile(t), float))


def control_eval(ctrl, t, xhat, y):
    """Control input for the given controller and signals."""
    if isinstance(ctrl, NnFeedback):
        return ctrl.net.forward(xhat)
    if isinstance(ctrl, SatAdrc):
        n = ctrl.k.size
        acc = 0.0
        for i in range(n):
            acc += ctrl.k[i] * sat(ctrl.M[i], ctrl.rho ** (n - 1 - i) * xhat[i])
        u = (ctrl.rho * acc - sat(ctrl.M[n], xhat[n])) / ctrl.b
        return np.array([u])
    if isinstance(ctrl, OutputFeedback):
        return ctrl.G @ y
    if isinstance(ctrl, OpenLoop):
        return ctrl.u_of_t(t)
    raise TypeError(f"unknown controller {type(ctrl).__name__}")


# ---------------------------------------------------------------------------
# Observer right-hand sides


def neural_lti_rhs(A, B, C, net: NeuralNet, xhat, u, y):
    """xhat' = A xhat + B u + net(y - C xhat)."""
    return A @ xhat + B @ u + net.forward(y - C @ xhat)


def neural_chain_rhs(n: int, b: float, eps: float, nets, xhat, u, y):
    """Extended-state observer flow for an order-n chain.

    xhat has length n+1; the networks read the scaled innovation
    eps^{-n} (y - xhat_1) and enter with gains eps^{n-i} (eps^{-1} for the
    extended state).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    innov = np.array([(float(y[0]) - xhat[0]) * eps ** (-n)])
    dx = np.empty(n + 1)
    for i in range(n - 1):
        dx[i] = xhat[i + 1] + eps ** (n - 1 - i) * float(nets[i].forward(innov)[0])
    dx[n - 1] = xhat[n] + float(nets[n - 1].forward(innov)[0]) + b * float(u[0])
    dx[n] = float(nets[n].forward(innov)[0]) / eps
    return dx


def neural_mimo_rhs(A, B, B_w, C, eps: float, nets, x1hat, x2hat, u, y):
    """Extended-state observer flow for a linear plant with matched uncertainty.

    Returns (dx1, dx2); the output estimate uses [C, 0], so the uncertainty
    estimate never enters yhat.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    innov = (y - C @ x1hat) / eps
    dx1 = B_w @ x2hat + A @ x1hat + B @ u + nets[0].forward(innov)
    dx2 = nets[1].forward(innov) / eps
    return dx1, dx2


def kalman_rhs(A, B, C, K_f, xhat, u, y):
    """Steady-state filter flow xhat' = A xhat + B u + K_f (y - C xhat)."""
    return A @ xhat + B @ u + K_f @ (y - C @ xhat)


# ---------------------------------------------------------------------------
# Observer state wrappers used by the simulator


@dataclass
class NeuralLtiObserver:
    """Luenberger-form observer with a network injection (deployed form)."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    net: NeuralNet
    xhat0: np.ndarray = None

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, float))
        self.B = np.atleast_2d(np.asarray(self.B, float))
        self.C = np.atleast_2d(np.asarray(self.C, float))
        if self.xhat0 is None:
            self.xhat0 = np.zeros(self.A.shape[0])
        self.xhat0 = np.asarray(self.xhat0, float)

    @property
    def state_dim(self) -> int:
        return self.A.shape[0]

    def init(self):
        return self.xhat0.copy()

    def rhs(self, t, state, u, y):
        return neural_lti_rhs(self.A, self.B, self.C, self.net, state, u, y)

    def estimate(self, state, y):
        return state

    def extended_estimate(self, state):
        return None


@dataclass
class NeuralChainObserver:
    """Extended-state observer for an integrator chain (nominal gain b)."""

    n: int
    b: float
    eps: float
    nets: list
    xhat0: np.ndarray = None

    def __post_init__(self):
        if len(self.nets) not in (1, self.n + 1):
            raise ValueError(f"need 1 shared or {self.n + 1} networks")
        if len(self.nets) == 1:
            self.nets = list(self.nets) * (self.n + 1)
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.xhat0 is None:
            self.xhat0 = np.zeros(self.n + 1)
        self.xhat0 = np.asarray(self.xhat0, float)

    @property
    def state_dim(self) -> int:
        return self.n + 1

    def init(self):
        return self.xhat0.copy()

    def rhs(self, t, state, u, y):
        return neural_chain_rhs(self.n, self.b, self.eps, self.nets, state, u, y)

    def estimate(self, state, y):
        return state[: self.n]

    def extended_estimate(self, state):
        return state[self.n:]


@dataclass
class NeuralMimoObserver:
    """Extended-state observer for a linear plant with matched uncertainty."""

    A: np.ndarray
    B: np.ndarray
    B_w: np.ndarray
    C: np.ndarray
    eps: float
    nets: list
    x1hat0: np.ndarray = None
    x2hat0: np.ndarray = None

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, float))
        self.B = np.atleast_2d(np.asarray(self.B, float))
        self.B_w = np.atleast_2d(np.asarray(self.B_w, float))
        self.C = np.atleast_2d(np.asarray(self.C, float))
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        n_s, n_q = self.B_w.shape
        if self.x1hat0 is None:
            self.x1hat0 = np.zeros(n_s)
        if self.x2hat0 is None:
            self.x2hat0 = np.zeros(n_q)
        self.x1hat0 = np.asarray(self.x1hat0, float)
        self.x2hat0 = np.asarray(self.x2hat0, float)

    @property
    def state_dim(self) -> int:
        return self.B_w.shape[0] + self.B_w.shape[1]

    def init(self):
        return np.concatenate([self.x1hat0, self.x2hat0])

    def rhs(self, t, state, u, y):
        n_s = self.B_w.shape[0]
        dx1, dx2 = neural_mimo_rhs(
            self.A, self.B, self.B_w, self.C, self.eps, self.nets,
            state[:n_s], state[n_s:], u, y,
        )
        return np.concatenate([dx1, dx2])

    def estimate(self, state, y):
        return state[: self.B_w.shape[0]]

    def extended_estimate(self, state):
        return state[self.B_w.shape[0]:]


@dataclass
class KalmanObserver:
    """Steady-state Kalman-Bucy filter with a constant gain."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    K_f: np.ndarray
    xhat0: np.ndarray = None

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, float))
        self.B = np.atleast_2d(np.asarray(self.B, float))
        self.C = np.atleast_2d(np.asarray(self.C, float))
        self.K_f = np.atleast_2d(np.asarray(self.K_f, float))
        if self.xhat0 is None:
            self.xhat0 = np.zeros(self.A.shape[0])
        self.xhat0 = np.asarray(self.xhat0, float)

    @property
    def state_dim(self) -> int:
        return self.A.shape[0]

    def init(self):
        return self.xhat0.copy()

    def rhs(self, t, state, u, y):
        return kalman_rhs(self.A, self.B, self.C, self.K_f, state, u, y)

    def estimate(self, state, y):
        return state

    def extended_estimate(self, state):
        return None


@dataclass
class GsloObserver:
    """Fixed-gain Luenberger observer on a perturbed pendulum linearization."""

    A_design: np.ndarray
    b_design: float
    L: np.ndarray
    xhat0: np.ndarray = None

    def __post_init__(self):
        if self.xhat0 is None:
            self.xhat0 = np.zeros(2)
        self.xhat0 = np.asarray(self.xhat0, float)

    @property
    def state_dim(self) -> int:
        return 2

    def init(self):
        return self.xhat0.copy()

    def rhs(self, t, state, u, y):
        dx = self.A_design @ state + self.L @ (y - state[:1])
        dx[1] += self.b_design * float(u[0])
        return dx

    def estimate(self, state, y):
        return state

    def extended_estimate(self, state):
        return None


def gslo_build(m0: float, l0: float, sigma0: float, delta_m: float = 0.1,
               delta_l: float = 0.1, g: float = 9.8, decay: float = 2.0) -> GsloObserver:
    """Luenberger observer for the pendulum linearized at the upright point.

    The design deliberately uses the perturbed parameters (1 + delta) m0 and
    (1 + delta) l0, matching how the baseline is described: a fixed-gain
    stand-in, not a replication of the cited scheduled design.
    """
    m = m0 * (1.0 + delta_m)
    l = l0 * (1.0 + delta_l)
    A = np.array([[0.0, 1.0], [g / l, -sigma0 / (m * l * l)]])
    C = np.array([[1.0, 0.0]])
    W = stabilizing_output_injection(A, C, decay)
    if not hurwitz_check(A + W @ C):
        raise ArithmeticError("observer design failed the stability check")
    return GsloObserver(A, 1.0 / (m * l * l), -W)


# ---------------------------------------------------------------------------
# Unknown-input observer


@dataclass
class UioRealization:
    """Disturbance-decoupled observer z' = N z + L y + G u, xhat = z - E y."""

    N: np.ndarray
    L: np.ndarray
    G: np.ndarray
    E: np.ndarray
    z0: np.ndarray = None

    def __post_init__(self):
        if self.z0 is None:
            self.z0 = np.zeros(self.N.shape[0])
        self.z0 = np.asarray(self.z0, float)


def uio_build(A, B, B_w, C, decay: float = 2.0) -> UioRealization:
    """Unknown-input observer decoupled from the B_w channel.

    Requires rank(C B_w) = rank(B_w).  Sets E = -B_w (C B_w)^+ so that
    T = I + E C annihilates B_w exactly, picks K making N = T A - K C
    Hurwitz, and completes the gain as L = K (I + C E) - T A E, which makes
    the estimation error flow e' = N e independently of the unknown input.
    """
    A = np.atleast_2d(np.asarray(A, float))
    B = np.atleast_2d(np.asarray(B, float))
    B_w = np.atleast_2d(np.asarray(B_w, float))
    C = np.atleast_2d(np.asarray(C, float))
    CBw = C @ B_w
    if rank_matrix(CBw) != rank_matrix(B_w):
        raise ValueError("rank(C B_w) != rank(B_w): decoupling not possible")
    # Moore-Penrose inverse of the full-column-rank product via normal equations
    pinv = np.linalg.solve(CBw.T @ CBw, CBw.T)
    E = -B_w @ pinv
    T = np.eye(A.shape[0]) + E @ C
    resid = np.max(np.abs(T @ B_w))
    if resid > 1e-10 * max(1.0, np.max(np.abs(B_w))):
        raise ArithmeticError(f"decoupling residual {resid:.3e} too large")
    W = stabilizing_output_injection(T @ A, C, decay)
    K = -W
    N = T @ A - K @ C
    L = K @ (np.eye(C.shape[0]) + C @ E) - T @ A @ E
    G = T @ B
    return UioRealization(N, L, G, E)


@dataclass
class UioObserver:
    """Simulator wrapper around a UioRealization."""

    uio: UioRealization

    @property
    def state_dim(self) -> int:
        return self.uio.N.shape[0]

    def init(self):
        return self.uio.z0.copy()

    def rhs(self, t, state, u, y):
        return self.uio.N @ state + self.uio.L @ y + self.uio.G @ u

    def estimate(self, state, y):
        return state - self.uio.E @ y

    def extended_estimate(self, state):
        return None
