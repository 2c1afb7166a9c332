"""Benchmark plants, feedback policies, and candidate Lyapunov functions.

Everything evaluable here is vectorized over a leading batch axis: states have
shape (..., n), actions (..., m).  The module also carries the continuous
algebraic Riccati solver used to construct the vehicle's feedback gain and
quadratic Lyapunov matrix, plus a registry of ready-made experiments.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import TimeKind


class CareError(RuntimeError):
    """Riccati iteration failed to reach the requested residual."""


@dataclass(frozen=True)
class VehicleParams:
    """Single-track lateral model parameters (cornering stiffnesses are
    signed the usual way, i.e. negative)."""

    k_f: float = -80000.0
    k_r: float = -80000.0
    l_f: float = 1.1
    l_r: float = 1.9
    mass: float = 2000.0
    i_z: float = 2000.0
    u_long: float = 5.0

    def __post_init__(self):
        if self.mass <= 0 or self.i_z <= 0 or self.u_long <= 0:
            raise ValueError("mass, i_z and u_long must be positive")


@dataclass(frozen=True)
class PendulumParams:
    mass: float = 1.0
    length: float = 1.0
    gravity: float = 9.8

    def __post_init__(self):
        if self.mass <= 0 or self.length <= 0 or self.gravity <= 0:
            raise ValueError("pendulum parameters must be positive")


def oscillator_dynamics(x, u):
    """Controlled Van der Pol oscillator, state (y, y'):
    y'' = -y - 0.5*y'*(1 - y^2) + u."""
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    y = x[..., 0]
    yd = x[..., 1]
    acc = -y - 0.5 * yd * (1.0 - y * y) + u[..., 0]
    return np.stack([yd, acc], axis=-1)


def pendulum_dynamics(x, u, params: PendulumParams = PendulumParams()):
    """Pendulum, state (theta, theta'):
    theta'' = -(3g / 2l) sin(theta) + (3 / m l^2) u."""
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    th = x[..., 0]
    thd = x[..., 1]
    g, l, m = params.gravity, params.length, params.mass
    acc = -(3.0 * g / (2.0 * l)) * np.sin(th) + (3.0 / (m * l * l)) * u[..., 0]
    return np.stack([thd, acc], axis=-1)


def vehicle_matrices(params: VehicleParams = VehicleParams()):
    """Lateral 2DOF vehicle model matrices, state (y, phi, v, omega), input =
    front wheel angle."""
    kf, kr = params.k_f, params.k_r
    lf, lr = params.l_f, params.l_r
    m, iz, ul = params.mass, params.i_z, params.u_long
    a = np.array([
        [0.0, ul, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [0.0, 0.0, (kf + kr) / (m * ul), (kf * lf - kr * lr) / (m * ul) - ul],
        [0.0, 0.0, (kf * lf - kr * lr) / (iz * ul),
         (kf * lf ** 2 + kr * lr ** 2) / (iz * ul)],
    ])
    b = np.array([[0.0], [0.0], [-kf / m], [-kf * lf / iz]])
    return a, b


@dataclass(frozen=True)
class SystemSpec:
    """Evaluable plant: maps (x, u) to the state derivative (continuous time)
    or the successor state (discrete time)."""

    name: str
    n: int
    m: int
    fn: object
    x_e: np.ndarray
    bounds: tuple
    time_kind: TimeKind = TimeKind.CONTINUOUS

    def __call__(self, x, u):
        return self.fn(x, u)


@dataclass(frozen=True)
class Policy:
    """Evaluable feedback map x -> u with a tagged construction."""

    name: str
    kind: str
    m: int
    fn: object
    params: dict = field(default_factory=dict)

    def __call__(self, x):
        return self.fn(np.asarray(x, dtype=np.float64))


def linear_feedback(K) -> Policy:
    K = np.atleast_2d(np.asarray(K, dtype=np.float64))
    return Policy("linear-feedback", "LinearFeedback", K.shape[0],
                  lambda x: x @ K.T, {"K": K})


def oscillator_damping() -> Policy:
    def fn(x):
        return (-0.5 * x[..., 0] ** 2 * x[..., 1])[..., None]
    return Policy("oscillator-damping", "OscillatorDamping", 1, fn)


def pendulum_damping(k: float) -> Policy:
    return Policy("pendulum-damping", "PendulumDamping", 1,
                  lambda x: (-k * x[..., 1])[..., None], {"k": k})


def pendulum_top_hold(k: float, params: PendulumParams = PendulumParams()) -> Policy:
    mgl = params.mass * params.gravity * params.length

    def fn(x):
        return (k * x[..., 1] + mgl * np.sin(x[..., 0]))[..., None]
    return Policy("pendulum-top-hold", "PendulumTopHold", 1, fn,
                  {"k": k, "mgl": mgl})


def zero_policy(m: int = 1) -> Policy:
    def fn(x):
        return np.zeros(x.shape[:-1] + (m,))
    return Policy("zero", "Zero", m, fn)


def noisy_policy(base: Policy, amplitude: float, seed: int) -> Policy:
    """Perturbed policy that is still a deterministic map: the perturbation at
    a state is a pure function of (seed, state bytes)."""

    def fn(x):
        x = np.asarray(x, dtype=np.float64)
        flat = x.reshape(-1, x.shape[-1])
        out = base(flat).astype(np.float64, copy=True)
        out = out.reshape(flat.shape[0], base.m)
        for i in range(flat.shape[0]):
            words = np.frombuffer(flat[i].tobytes(), dtype=np.uint64)
            rng = np.random.default_rng(
                np.random.SeedSequence([int(seed)] + [int(w) for w in words]))
            out[i] += amplitude * rng.uniform(-1.0, 1.0, base.m)
        return out.reshape(x.shape[:-1] + (base.m,))

    return Policy(f"noisy({base.name})", "Noisy", base.m, fn,
                  {"amplitude": amplitude, "seed": seed})


class LyapunovFn:
    """Candidate Lyapunov function with an evaluable value and gradient."""

    def __init__(self, kind, value_fn, grad_fn, params):
        self.kind = kind
        self._value = value_fn
        self._grad = grad_fn
        self.params = params

    def value(self, x):
        return self._value(np.asarray(x, dtype=np.float64))

    def grad(self, x):
        return self._grad(np.asarray(x, dtype=np.float64))

    @property
    def P(self):
        return self.params.get("P")


def quadratic_lyapunov(P) -> LyapunovFn:
    P = np.asarray(P, dtype=np.float64)
    if not np.allclose(P, P.T):
        raise ValueError("P must be symmetric")
    sym = P + P.T

    def value(x):
        return np.einsum("...i,ij,...j->...", x, P, x)

    def grad(x):
        return x @ sym

    return LyapunovFn("Quadratic", value, grad, {"P": P})


def pendulum_energy_lyapunov(P, theta_e: float,
                             params: PendulumParams = PendulumParams()) -> LyapunovFn:
    """V = (1/3) z'Pz + (g/l)(1 - cos(theta - theta_e)) with z the deviation
    from the equilibrium (theta_e, 0)."""
    P = np.asarray(P, dtype=np.float64)
    if not np.allclose(P, P.T):
        raise ValueError("P must be symmetric")
    g_over_l = params.gravity / params.length
    x_e = np.array([theta_e, 0.0])

    def value(x):
        z = x - x_e
        quad = np.einsum("...i,ij,...j->...", z, P, z) / 3.0
        return quad + g_over_l * (1.0 - np.cos(z[..., 0]))

    def grad(x):
        z = x - x_e
        g = (2.0 / 3.0) * (z @ P)
        g = g.copy()
        g[..., 0] += g_over_l * np.sin(z[..., 0])
        return g

    return LyapunovFn("PendulumEnergy", value, grad,
                      {"P": P, "theta_e": theta_e, "g": params.gravity,
                       "l": params.length})


def lyapunov_solve(A, C):
    """Solve A' X + X A = -C by Kronecker vectorization (row-major vec)."""
    A = np.asarray(A, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    n = A.shape[0]
    eye = np.eye(n)
    M = np.kron(A.T, eye) + np.kron(eye, A.T)
    x = np.linalg.solve(M, -C.reshape(-1))
    return x.reshape(n, n)


def _stabilizing_gain(A, B):
    """Initial gain K0 with A - B K0 Hurwitz, from one shifted Lyapunov solve
    (needs (A, B) controllable)."""
    n = A.shape[0]
    beta = float(np.linalg.norm(A, "fro")) + 1.0
    shifted = A + beta * np.eye(n)
    # shifted W + W shifted' = 2 B B'
    W = lyapunov_solve(shifted.T, -2.0 * B @ B.T)
    W = 0.5 * (W + W.T)
    K0 = np.linalg.solve(W, B).T
    cl = A - B @ K0
    if np.max(np.linalg.eigvals(cl).real) >= 0:
        raise CareError("could not construct an initial stabilizing gain")
    return K0


def care_residual(A, B, Q, R, P):
    Rinv = np.linalg.inv(R)
    return A.T @ P + P @ A - P @ B @ Rinv @ B.T @ P + Q


def care_solve(A, B, Q, R, tol: float = 1e-9, max_iter: int = 60):
    """Continuous algebraic Riccati equation A'P + PA - PBR^-1B'P + Q = 0,
    solved by Newton iteration on the gain, each step one Lyapunov solve.
    Returns the symmetric positive definite P with Frobenius residual <= tol.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    R = np.atleast_2d(np.asarray(R, dtype=np.float64))
    if tol <= 0:
        raise ValueError("tol must be > 0")
    Rinv = np.linalg.inv(R)
    K = _stabilizing_gain(A, B)
    P = None
    res = np.inf
    for _ in range(max_iter):
        Acl = A - B @ K
        P = lyapunov_solve(Acl, Q + K.T @ R @ K)
        P = 0.5 * (P + P.T)
        K = Rinv @ B.T @ P
        res = float(np.linalg.norm(care_residual(A, B, Q, R, P), "fro"))
        if res <= tol:
            break
    if res > tol:
        raise CareError(f"Riccati residual {res:.3e} above tol {tol:.1e}")
    if np.min(np.linalg.eigvalsh(P)) <= 0:
        raise CareError("Riccati solution is not positive definite")
    return P


def oscillator_system() -> SystemSpec:
    return SystemSpec("oscillator", 2, 1, oscillator_dynamics,
                      np.zeros(2), ((-1.0, 1.0), (-1.0, 1.0)))


def pendulum_system(theta_e: float = 0.0,
                    params: PendulumParams = PendulumParams()) -> SystemSpec:
    if theta_e == 0.0:
        bounds = ((-np.pi / 2, np.pi / 2), (-2.0, 2.0))
    else:
        bounds = ((np.pi / 2, 3 * np.pi / 2), (-2.0, 2.0))
    return SystemSpec("pendulum", 2, 1,
                      lambda x, u: pendulum_dynamics(x, u, params),
                      np.array([theta_e, 0.0]), bounds)


def vehicle_system(params: VehicleParams = VehicleParams()) -> SystemSpec:
    A, B = vehicle_matrices(params)
    return SystemSpec("vehicle", 4, 1, lambda x, u: x @ A.T + u @ B.T,
                      np.zeros(4),
                      ((-1.0, 1.0), (-np.pi / 4, np.pi / 4),
                       (-0.1, 0.1), (-0.1, 0.1)))


def _scalar_map_system(name, gain):
    # x' = gain * x, action unused; discrete-time demo plant
    def fn(x, u):
        return gain * x
    return SystemSpec(name, 1, 1, fn, np.zeros(1), ((-1.0, 1.0),),
                      TimeKind.DISCRETE)


VEHICLE_LQR_Q = np.diag([1.0, 1.0, 0.01, 0.01])
VEHICLE_LQR_R = np.array([[0.01]])
PENDULUM_GAIN = 0.5
OSCILLATOR_P_STABLE = np.array([[2.25, 0.5], [0.5, 2.0]])

# Verdict-band half-width used when classifying the free pendulum: calibrated
# once against the damped-pendulum run (|eta| medians differ by ~50x) and
# frozen here.
PENDULUM_CRITICAL_EPSILON = 0.5


@dataclass(frozen=True)
class Experiment:
    name: str
    system: SystemSpec
    policy: Policy
    lyapunov: LyapunovFn
    bounds: tuple
    expected: str
    epsilon_critical: float | None = None


def _pendulum_p(k: float, sign: float, params: PendulumParams):
    m, l = params.mass, params.length
    p11 = 9.0 * k * k / (2.0 * m * m * l ** 4)
    p12 = sign * 3.0 * k / (2.0 * m * l * l)
    return np.array([[p11, p12], [p12, 1.0]])


def make_experiment(name: str) -> Experiment:
    """Fully wired named experiment (system, policy, Lyapunov candidate,
    verification bounds, expected verdict)."""
    pend = PendulumParams()
    if name == "osc-stable":
        sys_ = oscillator_system()
        return Experiment(name, sys_, oscillator_damping(),
                          quadratic_lyapunov(OSCILLATOR_P_STABLE),
                          sys_.bounds, "stable")
    if name == "osc-unstable":
        sys_ = oscillator_system()
        return Experiment(name, sys_, linear_feedback([[0.0, 1.0]]),
                          quadratic_lyapunov(np.eye(2)), sys_.bounds, "unstable")
    if name == "veh-stable":
        sys_ = vehicle_system()
        A, B = vehicle_matrices()
        P = care_solve(A, B, VEHICLE_LQR_Q, VEHICLE_LQR_R, tol=1e-9)
        K = -np.linalg.inv(VEHICLE_LQR_R) @ B.T @ P
        return Experiment(name, sys_, linear_feedback(K), quadratic_lyapunov(P),
                          sys_.bounds, "stable")
    if name == "veh-unstable":
        sys_ = vehicle_system()
        A, B = vehicle_matrices()
        P = care_solve(-A, -B, VEHICLE_LQR_Q, VEHICLE_LQR_R, tol=1e-9)
        K = np.linalg.inv(VEHICLE_LQR_R) @ B.T @ P
        return Experiment(name, sys_, linear_feedback(K), quadratic_lyapunov(P),
                          sys_.bounds, "unstable")
    if name == "pend-stable":
        sys_ = pendulum_system(0.0, pend)
        P = _pendulum_p(PENDULUM_GAIN, +1.0, pend)
        return Experiment(name, sys_, pendulum_damping(PENDULUM_GAIN),
                          pendulum_energy_lyapunov(P, 0.0, pend),
                          sys_.bounds, "stable")
    if name == "pend-unstable":
        sys_ = pendulum_system(np.pi, pend)
        P = _pendulum_p(PENDULUM_GAIN, -1.0, pend)
        return Experiment(name, sys_, pendulum_top_hold(PENDULUM_GAIN, pend),
                          pendulum_energy_lyapunov(P, np.pi, pend),
                          sys_.bounds, "unstable")
    if name == "pend-critical":
        sys_ = pendulum_system(0.0, pend)
        P = np.array([[0.0, 0.0], [0.0, 1.0]])
        return Experiment(name, sys_, zero_policy(1),
                          pendulum_energy_lyapunov(P, 0.0, pend),
                          sys_.bounds, "near-critical",
                          epsilon_critical=PENDULUM_CRITICAL_EPSILON)
    if name == "disc-half":
        sys_ = _scalar_map_system("half-map", 0.5)
        return Experiment(name, sys_, zero_policy(1),
                          quadratic_lyapunov(np.eye(1)), sys_.bounds, "stable")
    if name == "disc-identity":
        sys_ = _scalar_map_system("identity-map", 1.0)
        return Experiment(name, sys_, zero_policy(1),
                          quadratic_lyapunov(np.eye(1)), sys_.bounds,
                          "indeterminate")
    raise KeyError(f"unknown experiment {name!r}; known: {', '.join(EXPERIMENT_NAMES)}")


EXPERIMENT_NAMES = ("osc-stable", "osc-unstable", "veh-stable", "veh-unstable",
                    "pend-stable", "pend-unstable", "pend-critical",
                    "disc-half", "disc-identity")
