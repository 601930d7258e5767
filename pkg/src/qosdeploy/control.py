"""Finite-time minimum-energy transport for the service agents.

Each agent is a unicycle. A change of variables plus a dynamic compensator
turns it into a planar double integrator, on which the classic minimum-energy
open-loop control

    u(t) = B^T exp(A^T (t0 + tau - t)) G^-1 (chi_star - exp(A tau) chi(t0))

drives the state to chi_star at exactly t0 + tau, where G is the finite-
horizon controllability Gramian. The compensator divides by the linear speed,
so a guard keeps |v| away from zero.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .divergence import Pose
from .exceptions import NumericalError, SpeedSingularityError
from .validation import as_float_array, as_vec2

V_MIN = 0.05
GRAMIAN_REL_TOL = 1e-10


@dataclass(frozen=True)
class LinearSystem:
    """Continuous-time pair (A, B) for x_dot = A x + B u."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = as_float_array(self.a, "a")
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("A must be square")
        b = as_float_array(self.b, "b")
        if b.ndim != 2 or b.shape[0] != a.shape[0]:
            raise ValueError("B must have one row per state")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def n_states(self):
        return self.a.shape[0]

    @property
    def n_inputs(self):
        return self.b.shape[1]


def double_integrator_2d() -> LinearSystem:
    """Two decoupled position/velocity chains: states (x, vx, y, vy)."""
    a = np.zeros((4, 4))
    a[0, 1] = 1.0
    a[2, 3] = 1.0
    b = np.zeros((4, 2))
    b[1, 0] = 1.0
    b[3, 1] = 1.0
    return LinearSystem(a=a, b=b)


@dataclass(frozen=True)
class TransportTask:
    """Drive chi from chi0 (at t0) to chi_star in exactly tau seconds."""

    chi0: np.ndarray
    chi_star: np.ndarray
    tau: float
    t0: float = 0.0

    def __post_init__(self):
        chi0 = as_float_array(self.chi0, "chi0")
        chi_star = as_float_array(self.chi_star, "chi_star", shape=chi0.shape)
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        object.__setattr__(self, "chi0", chi0)
        object.__setattr__(self, "chi_star", chi_star)


@dataclass(frozen=True)
class UnicycleState:
    """Planar unicycle: position, heading and signed linear speed."""

    position: np.ndarray
    heading: float
    speed: float

    def __post_init__(self):
        object.__setattr__(self, "position", as_vec2(self.position, "position"))
        if not np.isfinite(self.heading) or not np.isfinite(self.speed):
            raise ValueError("heading and speed must be finite")

    def pose(self) -> Pose:
        return Pose(position=self.position, heading=self.heading)


@dataclass(frozen=True)
class Trajectory:
    """Uniformly sampled run: times, state rows and input rows."""

    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    columns: tuple
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        times = as_float_array(self.times, "times")
        if times.ndim != 1 or len(times) < 2:
            raise ValueError("a trajectory needs at least two samples")
        steps = np.diff(times)
        if steps.min() <= 0:
            raise ValueError("times must be strictly increasing")
        if steps.max() - steps.min() > 1e-9 * steps.max():
            raise ValueError("times must be uniformly spaced")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", np.asarray(self.states, dtype=float))
        object.__setattr__(self, "inputs", np.asarray(self.inputs, dtype=float))

    @property
    def dt(self):
        return float(self.times[1] - self.times[0])

    def final_state(self):
        return self.states[-1]

    def energy(self):
        """Integral of |u|^2 dt (composite Simpson, trapezoid tail if odd)."""
        sq = (self.inputs ** 2).sum(axis=1)
        dt = self.dt
        n = len(sq) - 1
        even = n if n % 2 == 0 else n - 1
        total = 0.0
        if even >= 2:
            total += dt / 3.0 * (sq[0] + 4 * sq[1:even:2].sum() + 2 * sq[2:even:2].sum() + sq[even])
        if even != n:
            total += 0.5 * dt * (sq[-2] + sq[-1])
        return float(total)


def state_transition(sys: LinearSystem, t) -> np.ndarray:
    """Matrix exponential exp(A t); exact polynomial for nilpotent A."""
    if not np.isfinite(t):
        raise ValueError("t must be finite")
    a = sys.a
    if not np.any(a @ a):
        return np.eye(sys.n_states) + a * t
    return expm(a * float(t))


def gramian(sys: LinearSystem, tau) -> np.ndarray:
    """Finite-horizon controllability Gramian over [0, tau].

    Composite Simpson quadrature of exp(A s) B B^T exp(A^T s), s = tau - t,
    with panel doubling until the result changes by less than 1e-10 in
    relative Frobenius norm. Raises if the result is not SPD (uncontrollable
    pair over this horizon).
    """
    if tau <= 0:
        raise ValueError("tau must be positive")

    def simpson(panels):
        s = np.linspace(0.0, tau, 2 * panels + 1)
        mats = []
        for si in s:
            phi_b = state_transition(sys, si) @ sys.b
            mats.append(phi_b @ phi_b.T)
        mats = np.stack(mats)
        h = tau / (2 * panels)
        return h / 3.0 * (mats[0] + mats[-1] + 4 * mats[1:-1:2].sum(axis=0) + 2 * mats[2:-1:2].sum(axis=0))

    prev = simpson(2)
    for panels in (4, 8, 16, 32, 64, 128, 256):
        cur = simpson(panels)
        if np.linalg.norm(cur - prev) <= GRAMIAN_REL_TOL * max(np.linalg.norm(cur), 1e-30):
            prev = cur
            break
        prev = cur
    gram = 0.5 * (prev + prev.T)
    eigvals = np.linalg.eigvalsh(gram)
    if eigvals.min() <= 0:
        raise NumericalError(
            f"Gramian not positive definite (min eigenvalue {eigvals.min():g}): "
            "system is uncontrollable over this horizon"
        )
    return gram


def min_energy_input(sys: LinearSystem, task: TransportTask, t) -> np.ndarray:
    """Open-loop minimum-energy control at time t in [t0, t0 + tau]."""
    if not task.t0 <= t <= task.t0 + task.tau + 1e-12:
        raise ValueError(f"t={t} outside the transport window")
    gram = gramian(sys, task.tau)
    return _min_energy_closure(sys, task, gram)(t)


def _min_energy_closure(sys: LinearSystem, task: TransportTask, gram):
    drift = state_transition(sys, task.tau) @ task.chi0
    correction = np.linalg.solve(gram, task.chi_star - drift)
    t_end = task.t0 + task.tau

    def u_of_t(t):
        return sys.b.T @ state_transition(sys, t_end - t).T @ correction

    return u_of_t


def _rk4(f, x, t, dt):
    k1 = f(t, x)
    k2 = f(t + 0.5 * dt, x + 0.5 * dt * k1)
    k3 = f(t + 0.5 * dt, x + 0.5 * dt * k2)
    k4 = f(t + dt, x + dt * k3)
    return x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def simulate_linear(sys: LinearSystem, task: TransportTask, dt) -> Trajectory:
    """RK4 rollout of the minimum-energy plan on the linear dynamics."""
    if dt > task.tau / 100:
        raise ValueError("dt must be at most tau/100")
    gram_mat = gramian(sys, task.tau)
    u_of_t = _min_energy_closure(sys, task, gram_mat)
    n_steps = int(round(task.tau / dt))
    times = task.t0 + np.arange(n_steps + 1) * (task.tau / n_steps)

    def field_fn(t, chi):
        return sys.a @ chi + sys.b @ u_of_t(t)

    states = np.empty((n_steps + 1, sys.n_states))
    inputs = np.empty((n_steps + 1, sys.n_inputs))
    chi = task.chi0.copy()
    for idx, t in enumerate(times[:-1]):
        states[idx] = chi
        inputs[idx] = u_of_t(t)
        chi = _rk4(field_fn, chi, t, task.tau / n_steps)
        if np.abs(chi).max() > 1e12:
            raise NumericalError("linear simulation diverged")
    states[-1] = chi
    inputs[-1] = u_of_t(times[-1])
    cols = tuple(f"chi{i + 1}" for i in range(sys.n_states))
    err = float(np.linalg.norm(chi - task.chi_star))
    return Trajectory(times=times, states=states, inputs=inputs, columns=cols,
                      meta={"terminal_error": err})


def linearize_unicycle(s: UnicycleState) -> np.ndarray:
    """Change of variables chi = (x, v cos th, y, v sin th)."""
    return np.array([
        s.position[0],
        s.speed * math.cos(s.heading),
        s.position[1],
        s.speed * math.sin(s.heading),
    ])


def unicycle_from_chi(chi, v_min=V_MIN) -> UnicycleState:
    """Invert the change of variables; needs speed >= v_min to fix the heading."""
    chi = as_float_array(chi, "chi", shape=(4,))
    speed = math.hypot(chi[1], chi[3])
    if speed < v_min:
        raise SpeedSingularityError(
            f"speed {speed:g} below v_min={v_min:g}: heading unrecoverable",
            min_speed=speed,
        )
    return UnicycleState(
        position=np.array([chi[0], chi[2]]),
        heading=math.atan2(chi[3], chi[1]),
        speed=speed,
    )


def _unicycle_field(state_vec, u):
    """Unicycle with the compensator: state (x, y, th, v), input u in chi-space."""
    _, _, th, v = state_vec
    c, s = math.cos(th), math.sin(th)
    return np.array([
        v * c,
        v * s,
        (u[1] * c - u[0] * s) / v,
        u[0] * c + u[1] * s,
    ])


def compensator_step(s: UnicycleState, u, dt, v_min=V_MIN, t=0.0) -> UnicycleState:
    """One RK4 step of the compensated unicycle.

    `u` is the acceleration command in linearized coordinates, either a fixed
    2-vector or a callable u(t) sampled at the RK4 stage times. Aborts if the
    speed drops below v_min at any stage (the compensator divides by v).
    """
    if callable(u):
        u_fn = u
    else:
        u_vec = as_float_array(u, "u", shape=(2,))
        u_fn = lambda _t: u_vec
    if abs(s.speed) < v_min:
        raise SpeedSingularityError(
            f"speed {s.speed:g} below v_min={v_min:g}", min_speed=abs(s.speed), at_time=t
        )

    def field_fn(ti, vec):
        if abs(vec[3]) < v_min:
            raise SpeedSingularityError(
                f"speed {vec[3]:g} crossed below v_min={v_min:g} during a step",
                min_speed=abs(vec[3]), at_time=ti,
            )
        return _unicycle_field(vec, u_fn(ti))

    vec = np.array([s.position[0], s.position[1], s.heading, s.speed])
    out = _rk4(field_fn, vec, t, dt)
    return UnicycleState(position=out[:2].copy(), heading=float(out[2]), speed=float(out[3]))


def plan_transport(agent: UnicycleState, target_pose: Pose, v_star, tau, dt,
                   v_min=V_MIN, t0=0.0) -> Trajectory:
    """Minimum-energy transport of a unicycle to a target pose.

    Linearizes the current state, plans the open-loop minimum-energy input
    toward chi_star = (x*, v* cos th*, y*, v* sin th*), and rolls the
    compensated unicycle forward. The arrival speed v_star must be positive;
    it is a free parameter of the maneuver.

    Returns the unicycle trajectory with columns (x, y, heading, speed); the
    meta dict carries the minimum speed seen and the terminal pose errors.
    """
    if v_star <= 0:
        raise ValueError("v_star must be positive")
    if dt > tau / 100:
        raise ValueError("dt must be at most tau/100")
    sys = double_integrator_2d()
    chi0 = linearize_unicycle(agent)
    if abs(agent.speed) < v_min:
        raise SpeedSingularityError(
            f"initial speed {agent.speed:g} below v_min={v_min:g}",
            min_speed=abs(agent.speed), at_time=t0,
        )
    chi_star = np.array([
        target_pose.position[0],
        v_star * math.cos(target_pose.heading),
        target_pose.position[1],
        v_star * math.sin(target_pose.heading),
    ])
    task = TransportTask(chi0=chi0, chi_star=chi_star, tau=tau, t0=t0)
    u_of_t = _min_energy_closure(sys, task, gramian(sys, tau))

    n_steps = int(round(tau / dt))
    step = tau / n_steps
    times = t0 + np.arange(n_steps + 1) * step
    states = np.empty((n_steps + 1, 4))
    inputs = np.empty((n_steps + 1, 2))
    cur = agent
    min_speed = abs(agent.speed)
    for idx, t in enumerate(times[:-1]):
        states[idx] = (cur.position[0], cur.position[1], cur.heading, cur.speed)
        inputs[idx] = u_of_t(t)
        cur = compensator_step(cur, u_of_t, step, v_min=v_min, t=t)
        min_speed = min(min_speed, abs(cur.speed))
    states[-1] = (cur.position[0], cur.position[1], cur.heading, cur.speed)
    inputs[-1] = u_of_t(times[-1])

    pos_err = float(np.linalg.norm(cur.position - target_pose.position))
    heading_err = abs(_wrap_angle(cur.heading - target_pose.heading))
    meta = {
        "min_speed": float(min_speed),
        "terminal_position_error": pos_err,
        "terminal_heading_error": float(heading_err),
    }
    if pos_err > 1e-3 or heading_err > 1e-3:
        raise NumericalError(
            f"transport missed the target pose (position error {pos_err:g}, "
            f"heading error {heading_err:g}); reduce dt"
        )
    return Trajectory(times=times, states=states, inputs=inputs,
                      columns=("x", "y", "heading", "speed"), meta=meta)


def _wrap_angle(angle):
    """Wrap to (-pi, pi]."""
    wrapped = math.fmod(angle + math.pi, 2.0 * math.pi)
    if wrapped <= 0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi
