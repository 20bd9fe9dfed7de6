"""Fixed-step simulation of plant + observer + controller loops.

Runs are deterministic for a given (scenario, seed): Gaussian noises are
drawn once per step from a seeded generator and held across the four
Runge-Kutta stages, while deterministic disturbance terms are evaluated at
the stage times as part of the flow.
"""

from __future__ import annotations

import csv
import dataclasses
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .observers import (
    ChainPlant,
    LtiPlant,
    MimoPlant,
    NeuralChainObserver,
    NeuralMimoObserver,
    OpenLoop,
    control_eval,
)

__all__ = [
    "Sinusoid",
    "disturbance_eval",
    "rk4_step",
    "Scenario",
    "Trace",
    "simulate",
    "Metrics",
    "metrics",
    "SweepResult",
    "epsilon_sweep",
]

BLOWUP_NORM = 1e9


@dataclass(frozen=True)
class Sinusoid:
    """One disturbance term a*sin(b*t + phi), or the cosine when flagged."""

    a: float
    b: float
    phi: float = 0.0
    cosine: bool = False

    def __call__(self, t):
        arg = self.b * t + self.phi
        return self.a * (math.cos(arg) if self.cosine else math.sin(arg))

    def to_json(self) -> dict:
        return {"a": self.a, "b": self.b, "phi": self.phi, "cos": self.cosine}

    @classmethod
    def from_json(cls, d: dict) -> "Sinusoid":
        return cls(float(d["a"]), float(d["b"]), float(d.get("phi", 0.0)),
                   bool(d.get("cos", False)))


def disturbance_eval(terms, t: float) -> float:
    """Exact sum of the disturbance terms at time t."""
    return sum(term(t) for term in terms)


def rk4_step(f, t: float, state: np.ndarray, dt: float) -> np.ndarray:
    """Classical fourth-order Runge-Kutta update."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    k1 = f(t, state)
    k2 = f(t + 0.5 * dt, state + 0.5 * dt * k1)
    k3 = f(t + 0.5 * dt, state + 0.5 * dt * k2)
    k4 = f(t + dt, state + dt * k3)
    out = state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise ArithmeticError(f"non-finite state after step at t = {t:.6g}")
    return out


@dataclass
class Scenario:
    """Closed-loop setup: plant, observers, controller, noises and numerics."""

    name: str
    plant: object
    observers: list           # [(name, observer), ...]
    controller: object
    disturbance: list = field(default_factory=list)
    process_noise_cov: np.ndarray = None
    meas_noise_cov: np.ndarray = None
    t_span: tuple = (0.0, 10.0)
    dt: float = 1e-3
    seed: int = 0
    x0: np.ndarray = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.t_span[1] <= self.t_span[0]:
            raise ValueError("t_span must be increasing")
        if self.x0 is None:
            self.x0 = np.zeros(self.plant.n_states)
        self.x0 = np.asarray(self.x0, float)
        for name, cov in (("process", self.process_noise_cov),
                          ("measurement", self.meas_noise_cov)):
            if cov is not None:
                cov = np.atleast_2d(np.asarray(cov, float))
                if np.max(np.abs(cov - cov.T)) > 1e-12 * max(1.0, np.max(np.abs(cov))):
                    raise ValueError(f"{name} covariance must be symmetric")
                if np.min(np.linalg.eigvalsh(cov)) < -1e-12:
                    raise ValueError(f"{name} covariance must be PSD")
        if not self.observers:
            raise ValueError("need at least one observer")


@dataclass
class Trace:
    """Time-gridded record of one closed-loop run."""

    t: np.ndarray
    x: np.ndarray
    xhat: dict
    u: np.ndarray
    y: np.ndarray
    ext_truth: np.ndarray = None
    ext_hat: dict = field(default_factory=dict)
    failed: bool = False
    blow_up_time: float = None

    def error(self, observer: str = None) -> np.ndarray:
        """Plant-state estimation error x - xhat for one observer."""
        name = observer if observer is not None else next(iter(self.xhat))
        est = self.xhat[name]
        return self.x - est[:, : self.x.shape[1]]

    def to_csv(self, path: str):
        names = list(self.xhat)
        multi = len(names) > 1

        def cols(prefix, arr, obs=None):
            tag = f"{prefix}_{obs}" if obs and multi else prefix
            return [f"{tag}_{i + 1}" for i in range(arr.shape[1])]

        header = ["t"]
        blocks = [self.t.reshape(-1, 1)]
        header += cols("x", self.x)
        blocks.append(self.x)
        for name in names:
            header += cols("xhat", self.xhat[name], name)
            blocks.append(self.xhat[name])
        header += cols("u", self.u)
        blocks.append(self.u)
        header += cols("y", self.y)
        blocks.append(self.y)
        if self.ext_truth is not None:
            header += cols("ext_truth", self.ext_truth)
            blocks.append(self.ext_truth)
            for name in names:
                if self.ext_hat.get(name) is not None:
                    header += cols("ext_hat", self.ext_hat[name], name)
                    blocks.append(self.ext_hat[name])
        data = np.hstack(blocks)
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(header)
            wr.writerows(data.tolist())

    @classmethod
    def from_csv(cls, path: str) -> "Trace":
        with open(path, newline="") as fh:
            rd = csv.reader(fh)
            header = next(rd)
            rows = np.array([[float(v) for v in row] for row in rd])

        def group(prefix):
            out = {}
            for j, h in enumerate(header):
                if h.startswith(prefix + "_"):
                    rest = h[len(prefix) + 1:]
                    parts = rest.rsplit("_", 1)
                    obs = parts[0] if len(parts) == 2 and not parts[0].isdigit() else ""
                    out.setdefault(obs, []).append(j)
            return {k: rows[:, idx] for k, idx in out.items()}

        x = group("x").get("", np.zeros((rows.shape[0], 0)))
        xh = group("xhat")
        eh = group("ext_hat")
        et = group("ext_truth").get("")
        xhat = {k if k else "observer": v for k, v in xh.items()}
        ext_hat = {k if k else "observer": v for k, v in eh.items()}
        return cls(
            rows[:, 0], x, xhat,
            group("u").get("", np.zeros((rows.shape[0], 0))),
            group("y").get("", np.zeros((rows.shape[0], 0))),
            et, ext_hat,
        )


def _control_view(obs, state, y):
    """Signals the controller reads from the first observer."""
    if isinstance(obs, NeuralChainObserver):
        return state  # full chain estimate including the extended state
    return obs.estimate(state, y)


def simulate(sc: Scenario) -> Trace:
    """Integrate the coupled plant / observer / controller system.

    Blow-up (state norm above 1e9 or a non-finite step) truncates the trace
    and sets the failure flag instead of raising.
    """
    plant = sc.plant
    n_p = plant.n_states
    obs_names = [name for name, _ in sc.observers]
    obs_list = [obs for _, obs in sc.observers]
    dims = [n_p] + [obs.state_dim for obs in obs_list]
    offsets = np.concatenate([[0], np.cumsum(dims)])
    rng = np.random.default_rng(sc.seed)

    n_steps = int(round((sc.t_span[1] - sc.t_span[0]) / sc.dt))
    t0 = sc.t_span[0]
    tgrid = t0 + sc.dt * np.arange(n_steps + 1)

    state = np.concatenate([sc.x0] + [obs.init() for obs in obs_list])
    has_ext = isinstance(plant, (ChainPlant, MimoPlant))
    nominal_b = None
    if isinstance(plant, ChainPlant):
        nominal_b = plant.b
        for obs in obs_list:
            if isinstance(obs, NeuralChainObserver):
                nominal_b = obs.b
                break

    # preallocate records
    u_probe = _step_u(sc, plant, obs_list, state, t0, None)
    n_u = u_probe.size
    n_o = plant.n_outputs
    X = np.empty((n_steps + 1, n_p))
    U = np.empty((n_steps + 1, n_u))
    Y = np.empty((n_steps + 1, n_o))
    XH = {name: np.empty((n_steps + 1, obs.estimate(obs.init(), np.zeros(n_o)).size))
          for name, obs in sc.observers}
    ET = None
    EH = {}
    if has_ext:
        n_q = 1 if isinstance(plant, ChainPlant) else plant.n_uncertain
        ET = np.empty((n_steps + 1, n_q))
        for name, obs in sc.observers:
            ext0 = obs.extended_estimate(obs.init())
            EH[name] = np.empty((n_steps + 1, ext0.size)) if ext0 is not None else None

    def flow(t, s, w_proc, v_meas):
        x = s[offsets[0]:offsets[1]]
        if isinstance(plant, LtiPlant):
            w = w_proc
        else:
            w = disturbance_eval(sc.disturbance, t)
        y = plant.output(x)
        if v_meas is not None:
            y = y + v_meas
        first = obs_list[0]
        s1 = s[offsets[1]:offsets[2]]
        u = control_eval(sc.controller, t, _control_view(first, s1, y), y)
        ds = np.empty_like(s)
        ds[offsets[0]:offsets[1]] = plant.rhs(t, x, u, w)
        for i, obs in enumerate(obs_list):
            seg = slice(offsets[i + 1], offsets[i + 2])
            ds[seg] = obs.rhs(t, s[seg], u, y)
        return ds

    failed = False
    blow_t = None
    k_end = n_steps
    for k in range(n_steps + 1):
        t = tgrid[k]
        w_proc = _draw(rng, sc.process_noise_cov)
        v_meas = _draw(rng, sc.meas_noise_cov)
        x = state[offsets[0]:offsets[1]]
        if isinstance(plant, LtiPlant):
            w_now = w_proc
        else:
            w_now = disturbance_eval(sc.disturbance, t)
        y = plant.output(x)
        if v_meas is not None:
            y = y + v_meas
        first = obs_list[0]
        s1 = state[offsets[1]:offsets[2]]
        u = control_eval(sc.controller, t, _control_view(first, s1, y), y)

        X[k] = x
        U[k] = u
        Y[k] = y
        for i, (name, obs) in enumerate(sc.observers):
            seg = state[offsets[i + 1]:offsets[i + 2]]
            XH[name][k] = obs.estimate(seg, y)
            if has_ext and EH.get(name) is not None:
                EH[name][k] = obs.extended_estimate(seg)
        if has_ext:
            ET[k] = plant.extended_truth(t, x, u, w_now, nominal_b)

        if k == n_steps:
            break
        try:
            state = rk4_step(lambda tt, ss: flow(tt, ss, w_proc, v_meas),
                             t, state, sc.dt)
        except ArithmeticError:
            failed, blow_t, k_end = True, float(t), k
            break
        if np.linalg.norm(state) > BLOWUP_NORM:
            failed, blow_t, k_end = True, float(t), k
            break

    sl = slice(0, k_end + 1)
    return Trace(
        tgrid[sl], X[sl], {n: v[sl] for n, v in XH.items()},
        U[sl], Y[sl],
        ET[sl] if ET is not None else None,
        {n: (v[sl] if v is not None else None) for n, v in EH.items()},
        failed, blow_t,
    )


def _step_u(sc, plant, obs_list, state, t, v):
    n_p = plant.n_states
    y = plant.output(state[:n_p])
    first = obs_list[0]
    s1 = state[n_p:n_p + first.state_dim]
    return np.atleast_1d(
        control_eval(sc.controller, t, _control_view(first, s1, y), y)
    )


def _draw(rng, cov):
    if cov is None:
        return None
    cov = np.atleast_2d(np.asarray(cov, float))
    return rng.multivariate_normal(np.zeros(cov.shape[0]), cov, method="cholesky")


# ---------------------------------------------------------------------------
# Metrics


@dataclass
class Metrics:
    """Error summaries over a time window for one observer."""

    observer: str
    window: tuple
    rmse: np.ndarray
    peak_error: np.ndarray
    convergence_time: float
    kappa_hat: float
    m_hat: float
    r_squared: float
    failed: bool = False

    def to_json(self) -> dict:
        return {
            "observer": self.observer,
            "window": list(self.window),
            "rmse": self.rmse.tolist(),
            "peak_error": self.peak_error.tolist(),
            "convergence_time": self.convergence_time,
            "kappa_hat": self.kappa_hat,
            "M_hat": self.m_hat,
            "r_squared": self.r_squared,
            "failed": self.failed,
        }


def fit_decay_rate(t, enorm):
    """Least-squares fit of log ||e|| = log M - kappa t; returns (kappa, M, R^2)."""
    keep = enorm > 1e-300
    t, z = t[keep], np.log(enorm[keep])
    if t.size < 3:
        return 0.0, 0.0, 0.0
    A = np.vstack([np.ones_like(t), -t]).T
    coef, *_ = np.linalg.lstsq(A, z, rcond=None)
    fit = A @ coef
    ss_res = float(np.sum((z - fit) ** 2))
    ss_tot = float(np.sum((z - np.mean(z)) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(coef[1]), float(np.exp(coef[0])), r2


def metrics(trace: Trace, window: tuple, observer: str = None,
            band: float = None) -> Metrics:
    """Per-state RMSE, peak error, convergence time and fitted decay rate."""
    name = observer if observer is not None else next(iter(trace.xhat))
    t = trace.t
    if not (window[0] >= t[0] - 1e-12 and window[1] <= t[-1] + 1e-12
            and window[1] > window[0]):
        raise ValueError(f"window {window} not contained in [{t[0]}, {t[-1]}]")
    e = trace.error(name)
    mask = (t >= window[0]) & (t <= window[1])
    if not np.any(mask):
        raise ValueError("window contains no samples")
    ew = e[mask]
    rmse = np.sqrt(np.mean(ew ** 2, axis=0))
    peak = np.max(np.abs(ew), axis=0)
    enorm = np.linalg.norm(e, axis=1)
    if band is None:
        band = 0.02 * max(np.max(enorm), 1e-300)
    conv = t[-1]
    below = enorm <= band
    for i in range(len(t)):
        if np.all(below[i:]):
            conv = float(t[i])
            break
    kappa, m_hat, r2 = fit_decay_rate(t[mask], enorm[mask])
    return Metrics(name, tuple(window), rmse, peak, conv, kappa, m_hat, r2,
                   trace.failed)


# ---------------------------------------------------------------------------
# Gain sweeps


@dataclass
class SweepResult:
    """Steady-state sup-errors per plant state across observer gains."""

    eps: list
    sup_errors: np.ndarray      # len(eps) x n_states
    ext_sup: np.ndarray         # len(eps), sup over uncertainty components
    ratios: np.ndarray          # consecutive-eps ratios per state
    failed: list

    def to_csv(self, path: str):
        n = self.sup_errors.shape[1]
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["eps"] + [f"sup_e_{i + 1}" for i in range(n)]
                        + ["sup_ext", "failed"])
            for i, e in enumerate(self.eps):
                wr.writerow([e] + list(self.sup_errors[i]) + [self.ext_sup[i],
                                                              int(self.failed[i])])
            wr.writerow([])
            wr.writerow(["ratio_pair"] + [f"ratio_e_{i + 1}" for i in range(n)])
            for i in range(len(self.eps) - 1):
                wr.writerow([f"{self.eps[i]}/{self.eps[i + 1]}"] + list(self.ratios[i]))

    def to_json(self) -> dict:
        return {
            "eps": list(self.eps),
            "sup_errors": self.sup_errors.tolist(),
            "ext_sup": self.ext_sup.tolist(),
            "ratios": self.ratios.tolist(),
            "failed": list(self.failed),
        }


def _with_eps(sc: Scenario, eps: float) -> Scenario:
    obs = []
    for name, o in sc.observers:
        if isinstance(o, (NeuralChainObserver, NeuralMimoObserver)):
            o = dataclasses.replace(o, eps=eps)
        obs.append((name, o))
    return dataclasses.replace(sc, observers=obs)


def epsilon_sweep(sc: Scenario, eps_list, observer: str = None,
                  steady_frac: float = 0.2) -> SweepResult:
    """Rerun the scenario across observer gains and record steady sup-errors.

    The steady-state window is the final `steady_frac` of the time span.
    Runs are independent; NEUROBS_THREADS > 1 executes them in a thread pool
    without affecting determinism.
    """
    if not any(isinstance(o, (NeuralChainObserver, NeuralMimoObserver))
               for _, o in sc.observers):
        raise ValueError("sweep needs a gain-scaled observer in the scenario")
    name = observer if observer is not None else sc.observers[0][0]
    workers = int(os.environ.get("NEUROBS_THREADS", "1"))

    def run(eps):
        return simulate(_with_eps(sc, eps))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(run, eps_list))
    else:
        traces = [run(e) for e in eps_list]

    sups, exts, failed = [], [], []
    for tr in traces:
        n = len(tr.t)
        start = max(0, int(math.floor(n * (1.0 - steady_frac))))
        e = np.abs(tr.error(name))[start:]
        sups.append(np.max(e, axis=0))
        if tr.ext_truth is not None and tr.ext_hat.get(name) is not None:
            d = np.abs(tr.ext_truth - tr.ext_hat[name])[start:]
            exts.append(float(np.max(d)))
        else:
            exts.append(float("nan"))
        failed.append(tr.failed)
    sups = np.asarray(sups)
    ratios = sups[:-1] / np.maximum(sups[1:], 1e-300)
    return SweepResult(list(eps_list), sups, np.asarray(exts), ratios, failed)
