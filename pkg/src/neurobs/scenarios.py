"""Ready-made closed-loop scenarios and their JSON schema.

Three families are provided: an aircraft-style LTI loop with a network
feedback controller and a Kalman baseline, a nonlinear pendulum driven
through an extended-state chain observer with a saturated controller, and a
steering-vehicle model with matched uncertainty, compared against an
unknown-input observer.

Aircraft and vehicle numbers are not published with the method; the sample
configurations shipped here are representative values, clearly labeled as
such, and can be replaced through the config files.
"""

from __future__ import annotations

import importlib.resources
import json
import math
from dataclasses import dataclass

import numpy as np

from .nn import Activation, NeuralNet
from .observers import (
    ChainPlant,
    GsloObserver,
    KalmanObserver,
    LtiPlant,
    MimoPlant,
    NeuralChainObserver,
    NeuralLtiObserver,
    NeuralMimoObserver,
    NnFeedback,
    OpenLoop,
    OutputFeedback,
    SatAdrc,
    UioObserver,
    UioRealization,
    gslo_build,
    uio_build,
)
from .sim import Scenario, Sinusoid
from .synthesis import (
    controllable,
    extending_observable,
    observable,
    riccati_gain,
    stabilizing_state_feedback,
    synthesize_chain_nets,
    synthesize_feedback_pair,
    synthesize_uncertainty_nets,
)

__all__ = [
    "ScenarioError",
    "scenario_pendulum",
    "scenario_x29",
    "scenario_vehicle",
    "pendulum_disturbance",
    "pendulum_plant",
    "vehicle_matrices",
    "vehicle_uncertainty",
    "sample_config",
    "scenario_to_json",
    "scenario_from_json",
]

GRAVITY = 9.8
PENDULUM_DECAY = 8.0
VEHICLE_INJECTION_Q = (0.1, 6.0)


class ScenarioError(ValueError):
    """Configuration rejected before simulation."""


def sample_config(name: str) -> dict:
    """Bundled sample configuration ('x29' or 'vehicle'); representative values."""
    fname = {"x29": "x29_sample.json", "vehicle": "vehicle_sample.json"}.get(name)
    if fname is None:
        raise ScenarioError(f"no sample config named {name!r}")
    text = importlib.resources.files("neurobs.data").joinpath(fname).read_text()
    return json.loads(text)


# ---------------------------------------------------------------------------
# Pendulum


def pendulum_disturbance() -> list:
    """0.1 sin(4 pi t) + 0.2 cos(2 pi t) + 0.2 sin(3 pi t - pi/7)."""
    return [
        Sinusoid(0.1, 4.0 * math.pi),
        Sinusoid(0.2, 2.0 * math.pi, cosine=True),
        Sinusoid(0.2, 3.0 * math.pi, -math.pi / 7.0),
    ]


def pendulum_plant(m0=1.0, l0=1.0, sigma0=0.5, delta_m=0.0, delta_l=0.0,
                   g=GRAVITY) -> ChainPlant:
    """Inverted pendulum as an order-2 chain with possibly perturbed mass/length."""
    m = m0 * (1.0 + delta_m)
    l = l0 * (1.0 + delta_l)
    ml2 = m * l * l

    def f(t, x, w):
        return (m * g * l * math.sin(x[0]) - sigma0 * x[1] + w) / ml2

    return ChainPlant(2, 1.0 / ml2, f)


def scenario_pendulum(delta_m=0.0, delta_l=0.0, eps=0.1, seed=0,
                      t_span=(0.0, 10.0), dt=1e-3, x0=(0.5, 0.0),
                      m0=1.0, l0=1.0, sigma0=0.5, with_gslo=False,
                      nets=None, decay=PENDULUM_DECAY) -> Scenario:
    """Pendulum under the chain observer and the saturated controller.

    The observer and controller use the nominal input gain b0 = 1 and never
    see the perturbed parameters; the plant integrates the true dynamics.
    """
    plant = pendulum_plant(m0, l0, sigma0, delta_m, delta_l)
    b0 = 1.0 / (m0 * l0 * l0)
    if nets is None:
        nets = synthesize_chain_nets(2, (2, [3, 2], "tanh"), seed=seed, decay=decay)
    observers = [("neural", NeuralChainObserver(2, b0, eps, list(nets)))]
    if with_gslo:
        observers.append(
            ("gslo", gslo_build(m0, l0, sigma0, delta_m=0.1, delta_l=0.1))
        )
    controller = SatAdrc(rho=1.0, k=[-25.0, -10.0], M=[10.0, 10.0, 10.0], b=b0)
    return Scenario(
        name="pendulum",
        plant=plant,
        observers=observers,
        controller=controller,
        disturbance=pendulum_disturbance(),
        t_span=tuple(t_span),
        dt=dt,
        seed=seed,
        x0=np.asarray(x0, float),
        metadata={
            "m0": m0, "l0": l0, "sigma0": sigma0,
            "delta_m": delta_m, "delta_l": delta_l,
            "eps": eps, "decay": decay, "g": GRAVITY,
        },
    )


# ---------------------------------------------------------------------------
# Aircraft (LTI)


def scenario_x29(config: dict, seed=0, t_span=(0.0, 15.0), dt=1e-3,
                 activation="relu", with_kalman=True, decay=0.8) -> Scenario:
    """Aircraft-style LTI loop: network observer + network feedback + Kalman baseline.

    The config must provide the state-space matrices and pass the
    controllability/observability gate.  Noise defaults to the documented
    N(0, I/10) process and measurement covariances.
    """
    try:
        A = np.asarray(config["A"], float)
        B = np.asarray(config["B"], float)
        C = np.asarray(config["C"], float)
    except KeyError as exc:
        raise ScenarioError(f"config missing matrix {exc}") from exc
    if not controllable(A, B):
        raise ScenarioError("(A, B) must be controllable")
    if not observable(C, A):
        raise ScenarioError("(C, A) must be observable")
    n_s = A.shape[0]
    arch = (3, [3, 3, 3], activation)
    net_fb, net_obs = synthesize_feedback_pair(A, B, C, arch, arch,
                                               seed=seed, decay=decay)
    observers = [("neural", NeuralLtiObserver(A, B, C, net_obs.negate_input()))]
    if with_kalman:
        cov = np.eye(n_s) / 10.0
        K_f, _ = riccati_gain(A, C, cov, np.eye(C.shape[0]) / 10.0)
        observers.append(("kalman", KalmanObserver(A, B, C, K_f)))
    noise = config.get("noise_cov", 0.1)
    return Scenario(
        name="x29",
        plant=LtiPlant(A, B, C),
        observers=observers,
        controller=NnFeedback(net_fb),
        process_noise_cov=noise * np.eye(n_s),
        meas_noise_cov=noise * np.eye(C.shape[0]),
        t_span=tuple(t_span),
        dt=dt,
        seed=seed,
        x0=np.asarray(config.get("x0", np.ones(n_s)), float),
        metadata={"activation": activation, "decay": decay,
                  "representative": bool(config.get("representative", False))},
    )


# ---------------------------------------------------------------------------
# Four-wheel steering vehicle (MIMO with matched uncertainty)


def vehicle_matrices(p: dict):
    """State-space blocks of the steering model from physical parameters."""
    caf, car = float(p["caf"]), float(p["car"])
    m, U, iz = float(p["m"]), float(p["U"]), float(p["iz"])
    a, b = float(p["a"]), float(p["b"])
    A = np.array([
        [0.0, 1.0, 0.0, 0.0],
        [0.0, (caf + car) / (m * U), -(caf + car) / m, (a * caf - b * car) / (m * U)],
        [0.0, 0.0, 0.0, 1.0],
        [0.0, (a * caf - b * car) / (iz * U), -(a * caf - b * car) / iz,
         (a * a * caf + b * b * car) / (iz * U)],
    ])
    B = np.array([
        [0.0, 0.0],
        [-caf / m, -car / m],
        [0.0, 0.0],
        [-a * caf / iz, b * caf / iz],
    ])
    B_w = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 0.0], [0.0, 1.0]])
    C = np.eye(4)
    return A, B, B_w, C


def vehicle_uncertainty(p: dict, rho_c: float = 400.0, amp_scale: float = 1.0):
    """Lumped uncertainty: sinusoidal terms plus the constant road-curvature load."""
    caf, car = float(p["caf"]), float(p["car"])
    m, U, iz = float(p["m"]), float(p["U"]), float(p["iz"])
    a, b = float(p["a"]), float(p["b"])
    c1 = (a * caf - b * car - m * U * U) / (m * rho_c)
    c2 = (a * a * caf + b * b * car) / (iz * rho_c)

    def k(x, w, t):
        return np.array([
            amp_scale * (0.1 * math.sin(4.0 * t) + 0.3 * math.cos(2.0 * math.pi * t)) + c1,
            amp_scale * (0.2 * math.cos(5.0 * t) + 0.1 * math.cos(6.0 * math.pi * t)) + c2,
        ])

    return k


def scenario_vehicle(config: dict, eps=0.1, seed=0, t_span=(0.0, 10.0), dt=1e-3,
                     with_uio=True, injection_q=VEHICLE_INJECTION_Q, amp_scale=1.0,
                     nets=None) -> Scenario:
    """Steering vehicle with the uncertainty observer and a UIO baseline.

    The default injection intensities keep the state channel slow enough
    that the gain sweep shows its scaling regime while the uncertainty
    channel still tracks the lumped disturbance tightly.
    """
    A, B, B_w, C = vehicle_matrices(config)
    rho_c = float(config.get("rho_c", 400.0))
    if not extending_observable(A, C, B_w):
        raise ScenarioError("the augmented pair must be observable")
    plant = MimoPlant(A, B, B_w, C, vehicle_uncertainty(config, rho_c, amp_scale))
    if nets is None:
        nets = synthesize_uncertainty_nets(
            A, B_w, C, eps, (3, [3, 3, 3], Activation.leaky_relu(0.01)),
            seed=seed, injection_q=injection_q,
        )
    observers = [("neural", NeuralMimoObserver(A, B, B_w, C, eps, list(nets)))]
    if with_uio:
        observers.append(("uio", UioObserver(uio_build(A, B, B_w, C))))
    G = stabilizing_state_feedback(A, B, decay=float(config.get("ctrl_decay", 0.3)))
    return Scenario(
        name="vehicle",
        plant=plant,
        observers=observers,
        controller=OutputFeedback(G),
        t_span=tuple(t_span),
        dt=dt,
        seed=seed,
        x0=np.asarray(config.get("x0", [0.5, 0.0, 0.1, 0.0]), float),
        metadata={"eps": eps, "injection_q": list(np.atleast_1d(injection_q)),
                  "rho_c": rho_c, "amp_scale": amp_scale,
                  "vehicle_params": {k: float(config[k])
                                     for k in ("caf", "car", "m", "U", "iz", "a", "b")},
                  "representative": bool(config.get("representative", False))},
    )


# ---------------------------------------------------------------------------
# Scenario JSON


def _plant_to_json(plant, metadata):
    if isinstance(plant, LtiPlant):
        return {"type": "lti", "A": plant.A.tolist(), "B": plant.B.tolist(),
                "C": plant.C.tolist()}
    if isinstance(plant, ChainPlant):
        return {
            "type": "pendulum",
            "m0": metadata.get("m0", 1.0), "l0": metadata.get("l0", 1.0),
            "sigma0": metadata.get("sigma0", 0.5),
            "delta_m": metadata.get("delta_m", 0.0),
            "delta_l": metadata.get("delta_l", 0.0),
        }
    if isinstance(plant, MimoPlant):
        params = metadata.get("vehicle_params")
        if params is None:
            raise ScenarioError("vehicle scenarios need vehicle_params metadata to serialize")
        return {"type": "vehicle", "params": params,
                "rho_c": metadata.get("rho_c", 400.0),
                "amp_scale": metadata.get("amp_scale", 1.0)}
    raise ScenarioError(f"cannot serialize plant {type(plant).__name__}")


def _plant_from_json(d):
    kind = d["type"]
    if kind == "lti":
        return LtiPlant(np.asarray(d["A"], float), np.asarray(d["B"], float),
                        np.asarray(d["C"], float))
    if kind == "pendulum":
        return pendulum_plant(d.get("m0", 1.0), d.get("l0", 1.0),
                              d.get("sigma0", 0.5), d.get("delta_m", 0.0),
                              d.get("delta_l", 0.0))
    if kind == "vehicle":
        A, B, B_w, C = vehicle_matrices(d["params"])
        return MimoPlant(A, B, B_w, C,
                         vehicle_uncertainty(d["params"], d.get("rho_c", 400.0),
                                             d.get("amp_scale", 1.0)))
    raise ScenarioError(f"unknown plant type {kind!r}")


def _observer_to_json(obs):
    if isinstance(obs, NeuralLtiObserver):
        return {"type": "neural_lti", "A": obs.A.tolist(), "B": obs.B.tolist(),
                "C": obs.C.tolist(), "net": obs.net.to_json(),
                "xhat0": obs.xhat0.tolist()}
    if isinstance(obs, NeuralChainObserver):
        return {"type": "neural_chain", "n": obs.n, "b": obs.b, "eps": obs.eps,
                "nets": [net.to_json() for net in obs.nets],
                "xhat0": obs.xhat0.tolist()}
    if isinstance(obs, NeuralMimoObserver):
        return {"type": "neural_mimo", "A": obs.A.tolist(), "B": obs.B.tolist(),
                "B_w": obs.B_w.tolist(), "C": obs.C.tolist(), "eps": obs.eps,
                "nets": [net.to_json() for net in obs.nets],
                "x1hat0": obs.x1hat0.tolist(), "x2hat0": obs.x2hat0.tolist()}
    if isinstance(obs, KalmanObserver):
        return {"type": "kalman", "A": obs.A.tolist(), "B": obs.B.tolist(),
                "C": obs.C.tolist(), "K_f": obs.K_f.tolist(),
                "xhat0": obs.xhat0.tolist()}
    if isinstance(obs, GsloObserver):
        return {"type": "gslo", "A_design": obs.A_design.tolist(),
                "b_design": obs.b_design, "L": obs.L.tolist(),
                "xhat0": obs.xhat0.tolist()}
    if isinstance(obs, UioObserver):
        u = obs.uio
        return {"type": "uio", "N": u.N.tolist(), "L": u.L.tolist(),
                "G": u.G.tolist(), "E": u.E.tolist(), "z0": u.z0.tolist()}
    raise ScenarioError(f"cannot serialize observer {type(obs).__name__}")


def _observer_from_json(d):
    kind = d["type"]
    if kind == "neural_lti":
        return NeuralLtiObserver(
            np.asarray(d["A"], float), np.asarray(d["B"], float),
            np.asarray(d["C"], float), NeuralNet.from_json(d["net"]),
            np.asarray(d["xhat0"], float),
        )
    if kind == "neural_chain":
        return NeuralChainObserver(
            int(d["n"]), float(d["b"]), float(d["eps"]),
            [NeuralNet.from_json(n) for n in d["nets"]],
            np.asarray(d["xhat0"], float),
        )
    if kind == "neural_mimo":
        return NeuralMimoObserver(
            np.asarray(d["A"], float), np.asarray(d["B"], float),
            np.asarray(d["B_w"], float), np.asarray(d["C"], float),
            float(d["eps"]), [NeuralNet.from_json(n) for n in d["nets"]],
            np.asarray(d["x1hat0"], float), np.asarray(d["x2hat0"], float),
        )
    if kind == "kalman":
        return KalmanObserver(
            np.asarray(d["A"], float), np.asarray(d["B"], float),
            np.asarray(d["C"], float), np.asarray(d["K_f"], float),
            np.asarray(d["xhat0"], float),
        )
    if kind == "gslo":
        return GsloObserver(np.asarray(d["A_design"], float), float(d["b_design"]),
                            np.asarray(d["L"], float), np.asarray(d["xhat0"], float))
    if kind == "uio":
        return UioObserver(UioRealization(
            np.asarray(d["N"], float), np.asarray(d["L"], float),
            np.asarray(d["G"], float), np.asarray(d["E"], float),
            np.asarray(d["z0"], float),
        ))
    raise ScenarioError(f"unknown observer type {kind!r}")


def _controller_to_json(ctrl):
    if isinstance(ctrl, NnFeedback):
        return {"type": "nn_feedback", "net": ctrl.net.to_json()}
    if isinstance(ctrl, SatAdrc):
        return {"type": "sat_adrc", "rho": ctrl.rho, "k": ctrl.k.tolist(),
                "M": ctrl.M.tolist(), "b": ctrl.b}
    if isinstance(ctrl, OutputFeedback):
        return {"type": "output_feedback", "G": ctrl.G.tolist()}
    if isinstance(ctrl, OpenLoop):
        if ctrl.profile is not None:
            raise ScenarioError("cannot serialize a callable input profile")
        return {"type": "none", "n_inputs": ctrl.n_inputs}
    raise ScenarioError(f"cannot serialize controller {type(ctrl).__name__}")


def _controller_from_json(d):
    kind = d["type"]
    if kind == "nn_feedback":
        return NnFeedback(NeuralNet.from_json(d["net"]))
    if kind == "sat_adrc":
        return SatAdrc(float(d["rho"]), d["k"], d["M"], float(d.get("b", 1.0)))
    if kind == "output_feedback":
        return OutputFeedback(np.asarray(d["G"], float))
    if kind == "none":
        return OpenLoop(n_inputs=int(d.get("n_inputs", 1)))
    raise ScenarioError(f"unknown controller type {kind!r}")


def scenario_to_json(sc: Scenario) -> dict:
    return {
        "name": sc.name,
        "plant": _plant_to_json(sc.plant, sc.metadata),
        "observers": [
            {"name": name, **_observer_to_json(obs)} for name, obs in sc.observers
        ],
        "controller": _controller_to_json(sc.controller),
        "disturbance": [s.to_json() for s in sc.disturbance],
        "process_noise_cov": None if sc.process_noise_cov is None
        else np.asarray(sc.process_noise_cov).tolist(),
        "meas_noise_cov": None if sc.meas_noise_cov is None
        else np.asarray(sc.meas_noise_cov).tolist(),
        "numerics": {
            "t_span": list(sc.t_span), "dt": sc.dt, "seed": sc.seed,
            "x0": sc.x0.tolist(),
        },
        "metadata": sc.metadata,
    }


def scenario_from_json(d: dict) -> Scenario:
    try:
        num = d["numerics"]
        return Scenario(
            name=d.get("name", "scenario"),
            plant=_plant_from_json(d["plant"]),
            observers=[(o.get("name", f"obs{i}"), _observer_from_json(o))
                       for i, o in enumerate(d["observers"])],
            controller=_controller_from_json(d["controller"]),
            disturbance=[Sinusoid.from_json(s) for s in d.get("disturbance", [])],
            process_noise_cov=None if d.get("process_noise_cov") is None
            else np.asarray(d["process_noise_cov"], float),
            meas_noise_cov=None if d.get("meas_noise_cov") is None
            else np.asarray(d["meas_noise_cov"], float),
            t_span=tuple(num["t_span"]),
            dt=float(num["dt"]),
            seed=int(num.get("seed", 0)),
            x0=np.asarray(num["x0"], float),
            metadata=d.get("metadata", {}),
        )
    except KeyError as exc:
        raise ScenarioError(f"scenario JSON missing field {exc}") from exc
