"""Benchmark environments: three planar second-order diffusions (rotation
invariant point, double well with tunable reflection breaking, annulus
constrained), the SymNav navigation family, and two first-order planar
variants sized for grid dynamic programming.

Each factory returns an :class:`Environment` bundling the closed-form
:class:`~symflow.core.EnvModel` (drift/diffusion/reward and all analytic
derivatives) with the exact discrete-time stepper.  The stepper is the
semi-implicit Euler scheme

    v' = v + dt * f(p, v, a) + sigma * sqrt(dt) * xi,   p' = p + dt * v'

for the second-order family, and the plain Euler-Maruyama update for the
first-order variants.  Noise is drawn from ``numpy.random.Generator``
(PCG64 stream, ziggurat gaussians), which is pinned so that seeded
trajectories are bit-reproducible.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import EnvModel, FiniteTransform, GeneratorPair

__all__ = [
    "SimConfig",
    "DoubleWellParams",
    "AnnulusParams",
    "SymNavMap",
    "Transition",
    "Environment",
    "Simulator",
    "SimulationError",
    "rot2d_model",
    "doublewell_model",
    "postconstraint_model",
    "overdamped_model",
    "overdamped_doublewell_model",
    "symnav_map",
    "symnav_env",
    "symnav_observe",
    "annulus_retraction",
    "rotation_generator_4d",
    "rotation_generator_2d",
    "rotation_transform_4d",
    "rotation_transform_2d",
    "reflection_transform_4d",
    "reflection_transform_2d",
    "make_env",
    "write_trajectory_csv",
]

G_SKEW = np.array([[0.0, -1.0], [1.0, 0.0]])

# DoubleWell clipping box; generous so it never fires in nominal runs.
_DW_POS_CLIP = 5.0
_DW_VEL_CLIP = 10.0


class SimulationError(RuntimeError):
    """Raised when a step produces non-finite state; carries the inputs."""


@dataclass(frozen=True)
class SimConfig:
    """Default integrator/noise parameters shared by all environments."""

    dt: float = 0.05
    sigma: float = 0.02
    lambda_damp: float = 0.1
    horizon: int = 200
    seed: int = 0
    noise_enabled: bool = True

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")


@dataclass(frozen=True)
class DoubleWellParams:
    delta: float = 0.0


@dataclass(frozen=True)
class AnnulusParams:
    r_min: float = 0.5
    r_max: float = 2.0

    def __post_init__(self):
        if not (0 < self.r_min < self.r_max):
            raise ValueError("require 0 < r_min < r_max")


@dataclass(frozen=True)
class SymNavMap:
    variant: int
    goal: np.ndarray
    obstacle_centers: np.ndarray  # (6, 2)
    obstacle_radii: np.ndarray    # (6,)
    wind_scale: float
    world_radius: float


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: np.ndarray
    s_next: np.ndarray
    reward: float
    projected: bool = False
    collided: bool = False
    success: bool = False


# ---------------------------------------------------------------------------
# Small helpers
# ---------------------------------------------------------------------------

def _const_matrix(mat: np.ndarray):
    """Wrap a constant matrix as a batch-aware callable of (s, a)."""
    def f(s, a, _m=mat):
        s = np.asarray(s)
        return np.broadcast_to(_m, s.shape[:-1] + _m.shape)
    return f


def _zero_dirQ(d: int):
    def f(s, a, direction, _d=d):
        s = np.asarray(s)
        return np.zeros(s.shape[:-1] + (_d, _d))
    return f


def _zero_grad_a(m: int):
    def f(s, a, _m=m):
        a = np.asarray(a)
        return np.zeros(a.shape[:-1] + (_m,))
    return f


def _vel_noise_Q(sigma: float, d: int = 4):
    Q = np.zeros((d, d))
    Q[d // 2:, d // 2:] = sigma ** 2 * np.eye(d // 2)
    return Q


# ---------------------------------------------------------------------------
# Environment bundle and simulator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Environment:
    """An EnvModel plus its exact one-step simulator and metadata.

    ``step_one(s, a, xi) -> Transition`` is a pure function of the inputs
    (``xi`` is the standard-normal draw for the noisy channels, or zeros).
    """

    name: str
    model: EnvModel
    cfg: SimConfig
    step_one: Callable[[np.ndarray, np.ndarray, np.ndarray], Transition]
    noise_dim: int
    action_low: np.ndarray
    action_high: np.ndarray
    retraction: Optional[Callable[[np.ndarray], tuple]] = None
    feasible: Optional[Callable[[np.ndarray], bool]] = None
    observe: Optional[Callable[[np.ndarray], np.ndarray]] = None
    nav_map: Optional[SymNavMap] = None
    reference_generator: Optional[GeneratorPair] = None
    state_box: Optional[np.ndarray] = None  # (d, 2) sampling box for discovery
    # vectorized stepper (S (n,d), a, xi (n,noise)) -> next states (n,d);
    # used by Monte Carlo diagnostics
    step_batch: Optional[Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]] = None


class Simulator:
    """Owns a seeded RNG and advances one environment instance.

    Noise is ``Generator(PCG64(seed)).standard_normal`` (ziggurat); identical
    seeds therefore reproduce trajectories bit-for-bit.  One simulator is
    single-threaded; run several instances for parallel rollouts.
    """

    def __init__(self, env: Environment, seed: Optional[int] = None):
        self.env = env
        self.seed = env.cfg.seed if seed is None else seed
        self.rng = np.random.default_rng(np.random.PCG64(self.seed))

    def step(self, s: np.ndarray, a: np.ndarray) -> Transition:
        if self.env.cfg.noise_enabled and self.env.cfg.sigma > 0:
            xi = self.rng.standard_normal(self.env.noise_dim)
        else:
            xi = np.zeros(self.env.noise_dim)
        return self.env.step_one(np.asarray(s, dtype=float),
                                 np.asarray(a, dtype=float), xi)

    def rollout(self, s0: np.ndarray, policy, horizon: Optional[int] = None):
        """Roll a policy ``a = policy(step_index, s)`` out from ``s0``."""
        horizon = self.env.cfg.horizon if horizon is None else horizon
        s = np.asarray(s0, dtype=float)
        out = []
        for k in range(horizon):
            a = np.asarray(policy(k, s), dtype=float)
            tr = self.step(s, a)
            out.append(tr)
            s = tr.s_next
        return out


def _check_finite(s_next, s, a):
    if not np.all(np.isfinite(s_next)):
        raise SimulationError(f"non-finite state after step: s={s}, a={a}, s_next={s_next}")


def _semi_implicit(p, v, a, f_pv, cfg: SimConfig, xi):
    v_next = v + cfg.dt * f_pv + cfg.sigma * math.sqrt(cfg.dt) * xi
    p_next = p + cfg.dt * v_next
    return p_next, v_next


def _second_order_batch(f_vel, cfg: SimConfig, post=None):
    """Vectorized semi-implicit stepper for the (p, v) family."""

    def step(S, a, xi):
        S = np.asarray(S, dtype=float)
        p, v = S[..., :2], S[..., 2:]
        p2, v2 = _semi_implicit(p, v, np.asarray(a, dtype=float), f_vel(p, v, a), cfg, xi)
        out = np.concatenate([p2, v2], axis=-1)
        return post(out) if post is not None else out

    return step


# ---------------------------------------------------------------------------
# Rot2D point mass
# ---------------------------------------------------------------------------

def _second_order_model(name, cfg, f_vel, jac_p_f, reward, grad_p_r, grad_v_r):
    """Assemble a 4D EnvModel for dp = v dt, dv = f(p,v,a) dt + sigma dW with
    velocity damping -lambda*v and additive action, i.e. df/dv = -lambda I,
    df/da = I."""
    lam = cfg.lambda_damp

    def drift(s, a):
        s = np.asarray(s, dtype=float)
        a = np.asarray(a, dtype=float)
        p, v = s[..., :2], s[..., 2:]
        return np.concatenate([v, f_vel(p, v, a)], axis=-1)

    def jac_s(s, a):
        s = np.asarray(s, dtype=float)
        p = s[..., :2]
        J = np.zeros(s.shape[:-1] + (4, 4))
        J[..., 0, 2] = 1.0
        J[..., 1, 3] = 1.0
        J[..., 2:, :2] = jac_p_f(p)
        J[..., 2, 2] = -lam
        J[..., 3, 3] = -lam
        return J

    def jac_a(s, a):
        s = np.asarray(s)
        J = np.zeros(s.shape[:-1] + (4, 2))
        J[..., 2, 0] = 1.0
        J[..., 3, 1] = 1.0
        return J

    def rew(s, a):
        s = np.asarray(s, dtype=float)
        return reward(s[..., :2], s[..., 2:])

    def grad_s_rew(s, a):
        s = np.asarray(s, dtype=float)
        p, v = s[..., :2], s[..., 2:]
        return np.concatenate([grad_p_r(p), grad_v_r(v)], axis=-1)

    return EnvModel(
        name=name, dim_s=4, dim_a=2,
        drift=drift,
        diffusion_Q=_const_matrix(_vel_noise_Q(cfg.sigma)),
        reward=rew,
        grad_s_reward=grad_s_rew,
        grad_a_reward=_zero_grad_a(2),
        jac_s_drift=jac_s,
        jac_a_drift=jac_a,
        dir_s_Q=_zero_dirQ(4),
        dir_a_Q=_zero_dirQ(4),
    )


def rot2d_model(cfg: SimConfig = SimConfig()) -> Environment:
    """SO(2)-invariant point mass: f(p,v,a) = a - lambda*v, r = -|p|^2 - 0.1|v|^2."""
    lam = cfg.lambda_damp

    def f_vel(p, v, a):
        return a - lam * v

    def jac_p_f(p):
        return np.zeros(p.shape[:-1] + (2, 2))

    def reward(p, v):
        return -np.sum(p * p, axis=-1) - 0.1 * np.sum(v * v, axis=-1)

    model = _second_order_model("rot2d", cfg, f_vel, jac_p_f, reward,
                                lambda p: -2.0 * p, lambda v: -0.2 * v)

    def step_one(s, a, xi):
        p, v = s[:2], s[2:]
        p2, v2 = _semi_implicit(p, v, a, f_vel(p, v, a), cfg, xi)
        s_next = np.concatenate([p2, v2])
        _check_finite(s_next, s, a)
        return Transition(s, a, s_next, float(model.reward(s, a)))

    box = np.array([[-2.0, 2.0]] * 4)
    return Environment("rot2d", model, cfg, step_one, 2,
                       np.array([-1.0, -1.0]), np.array([1.0, 1.0]),
                       reference_generator=rotation_generator_4d(),
                       state_box=box,
                       step_batch=_second_order_batch(f_vel, cfg))


# ---------------------------------------------------------------------------
# Double well with reflection symmetry broken by delta
# ---------------------------------------------------------------------------

def doublewell_model(cfg: SimConfig = SimConfig(),
                     params: DoubleWellParams = DoubleWellParams()) -> Environment:
    """Double-well dynamics with tunable x-reflection breaking.

    Drift potential U_dyn = (x^2-1)^2 + y^2 + delta*x enters the force; the
    reward uses the delta-independent base potential, so only the drift
    breaks the reflection symmetry when delta != 0.
    """
    lam = cfg.lambda_damp
    delta = params.delta

    def grad_U_dyn(p):
        x, y = p[..., 0], p[..., 1]
        return np.stack([4.0 * x * (x * x - 1.0) + delta, 2.0 * y], axis=-1)

    def f_vel(p, v, a):
        return -grad_U_dyn(p) - lam * v + a

    def jac_p_f(p):
        x = p[..., 0]
        J = np.zeros(p.shape[:-1] + (2, 2))
        J[..., 0, 0] = -(12.0 * x * x - 4.0)
        J[..., 1, 1] = -2.0
        return J

    def reward(p, v):
        x, y = p[..., 0], p[..., 1]
        U0 = (x * x - 1.0) ** 2 + y * y
        return -U0 - 0.1 * np.sum(v * v, axis=-1)

    def grad_p_r(p):
        x, y = p[..., 0], p[..., 1]
        return np.stack([-4.0 * x * (x * x - 1.0), -2.0 * y], axis=-1)

    model = _second_order_model("doublewell", cfg, f_vel, jac_p_f, reward,
                                grad_p_r, lambda v: -0.2 * v)

    def step_one(s, a, xi):
        p, v = s[:2], s[2:]
        p2, v2 = _semi_implicit(p, v, a, f_vel(p, v, a), cfg, xi)
        p2 = np.clip(p2, -_DW_POS_CLIP, _DW_POS_CLIP)
        v2 = np.clip(v2, -_DW_VEL_CLIP, _DW_VEL_CLIP)
        s_next = np.concatenate([p2, v2])
        _check_finite(s_next, s, a)
        return Transition(s, a, s_next, float(model.reward(s, a)))

    def dw_clip(S):
        S = S.copy()
        S[..., :2] = np.clip(S[..., :2], -_DW_POS_CLIP, _DW_POS_CLIP)
        S[..., 2:] = np.clip(S[..., 2:], -_DW_VEL_CLIP, _DW_VEL_CLIP)
        return S

    box = np.array([[-2.0, 2.0]] * 4)
    return Environment("doublewell", model, cfg, step_one, 2,
                       np.array([-1.0, -1.0]), np.array([1.0, 1.0]),
                       state_box=box,
                       step_batch=_second_order_batch(f_vel, cfg, post=dw_clip))


# ---------------------------------------------------------------------------
# Annulus-constrained Rot2D
# ---------------------------------------------------------------------------

def annulus_retraction(params: AnnulusParams):
    """Project positions into the annulus; remove the radial velocity
    component whenever the projection fired.

    A position exactly at the origin is sent to (r_min, 0) (deterministic +x
    axis).  Works on batched states (..., 4); returns (state, fired mask).
    """
    r_min, r_max = params.r_min, params.r_max

    def retract(s):
        s = np.asarray(s, dtype=float)
        single = s.ndim == 1
        s = np.atleast_2d(s).copy()
        p, v = s[..., :2], s[..., 2:]
        nrm = np.linalg.norm(p, axis=-1)
        at_origin = nrm == 0.0
        p[at_origin] = np.array([r_min, 0.0])
        nrm = np.where(at_origin, r_min, nrm)
        target = np.clip(nrm, r_min, r_max)
        fired = (target != nrm) | at_origin
        scale = np.where(fired, target / nrm, 1.0)
        p *= scale[..., None]
        u = p / np.linalg.norm(p, axis=-1, keepdims=True)
        radial = np.sum(v * u, axis=-1, keepdims=True)
        v_proj = v - u * radial
        v[fired] = v_proj[fired]
        out = np.concatenate([p, v], axis=-1)
        if single:
            return out[0], bool(fired[0])
        return out, fired

    return retract


def postconstraint_model(cfg: SimConfig = SimConfig(),
                         params: AnnulusParams = AnnulusParams()) -> Environment:
    """Rot2D drift/reward with positions confined to an annulus by a
    post-step projection plus tangential-velocity restriction."""
    base = rot2d_model(cfg)
    retract = annulus_retraction(params)
    model = dataclasses.replace(base.model, name="postconstraint")

    def feasible(s):
        r = float(np.linalg.norm(np.asarray(s)[:2]))
        return params.r_min <= r <= params.r_max

    def step_one(s, a, xi):
        tr = base.step_one(s, a, xi)
        s_next, fired = retract(tr.s_next)
        _check_finite(s_next, s, a)
        return Transition(s, a, s_next, tr.reward, projected=bool(fired))

    box = np.array([[-2.0, 2.0]] * 4)
    return Environment("postconstraint", model, cfg, step_one, 2,
                       np.array([-1.0, -1.0]), np.array([1.0, 1.0]),
                       retraction=retract, feasible=feasible,
                       reference_generator=rotation_generator_4d(),
                       state_box=box)


# ---------------------------------------------------------------------------
# First-order planar variants (grid dynamic programming scale)
# ---------------------------------------------------------------------------

def overdamped_model(cfg: SimConfig = SimConfig()) -> Environment:
    """Rotation-invariant first-order system ds = a dt + sigma dW, r = -|s|^2.

    Same SO(2) structure as Rot2D but with a 2D state, which keeps grid MDPs
    built from it small enough for exact value iteration.
    """
    def drift(s, a):
        s = np.asarray(s, dtype=float)
        a = np.asarray(a, dtype=float)
        return np.broadcast_to(a, np.broadcast_shapes(s.shape, a.shape)).copy()

    def jac_s(s, a):
        s = np.asarray(s)
        return np.zeros(s.shape[:-1] + (2, 2))

    def reward(s, a):
        s = np.asarray(s, dtype=float)
        return -np.sum(s * s, axis=-1)

    model = EnvModel(
        name="overdamped", dim_s=2, dim_a=2,
        drift=drift,
        diffusion_Q=_const_matrix(cfg.sigma ** 2 * np.eye(2)),
        reward=reward,
        grad_s_reward=lambda s, a: -2.0 * np.asarray(s, dtype=float),
        grad_a_reward=_zero_grad_a(2),
        jac_s_drift=jac_s,
        jac_a_drift=_const_matrix(np.eye(2)),
        dir_s_Q=_zero_dirQ(2),
        dir_a_Q=_zero_dirQ(2),
    )

    def step_one(s, a, xi):
        s_next = s + cfg.dt * a + cfg.sigma * math.sqrt(cfg.dt) * xi
        _check_finite(s_next, s, a)
        return Transition(s, a, s_next, float(model.reward(s, a)))

    box = np.array([[-2.0, 2.0]] * 2)
    return Environment("overdamped", model, cfg, step_one, 2,
                       np.array([-1.0, -1.0]), np.array([1.0, 1.0]),
                       reference_generator=rotation_generator_2d(),
                       state_box=box)


def overdamped_doublewell_model(cfg: SimConfig = SimConfig(),
                                params: DoubleWellParams = DoubleWellParams()) -> Environment:
    """First-order double well ds = (-grad U_dyn(s) + a) dt + sigma dW with
    the delta-independent reward r = -U_0(s); reflection analogue of the
    second-order double well at dynamic-programming scale."""
    delta = params.delta

    def grad_U_dyn(s):
        x, y = s[..., 0], s[..., 1]
        return np.stack([4.0 * x * (x * x - 1.0) + delta, 2.0 * y], axis=-1)

    def drift(s, a):
        s = np.asarray(s, dtype=float)
        return -grad_U_dyn(s) + np.asarray(a, dtype=float)

    def jac_s(s, a):
        s = np.asarray(s, dtype=float)
        x = s[..., 0]
        J = np.zeros(s.shape[:-1] + (2, 2))
        J[..., 0, 0] = -(12.0 * x * x - 4.0)
        J[..., 1, 1] = -2.0
        return J

    def reward(s, a):
        s = np.asarray(s, dtype=float)
        x, y = s[..., 0], s[..., 1]
        return -((x * x - 1.0) ** 2 + y * y)

    def grad_s_rew(s, a):
        s = np.asarray(s, dtype=float)
        x, y = s[..., 0], s[..., 1]
        return np.stack([-4.0 * x * (x * x - 1.0), -2.0 * y], axis=-1)

    model = EnvModel(
        name="overdamped_doublewell", dim_s=2, dim_a=2,
        drift=drift,
        diffusion_Q=_const_matrix(cfg.sigma ** 2 * np.eye(2)),
        reward=reward,
        grad_s_reward=grad_s_rew,
        grad_a_reward=_zero_grad_a(2),
        jac_s_drift=jac_s,
        jac_a_drift=_const_matrix(np.eye(2)),
        dir_s_Q=_zero_dirQ(2),
        dir_a_Q=_zero_dirQ(2),
    )

    def step_one(s, a, xi):
        s_next = s + cfg.dt * drift(s, a) + cfg.sigma * math.sqrt(cfg.dt) * xi
        _check_finite(s_next, s, a)
        return Transition(s, a, s_next, float(model.reward(s, a)))

    box = np.array([[-2.0, 2.0]] * 2)
    return Environment("overdamped_doublewell", model, cfg, step_one, 2,
                       np.array([-1.0, -1.0]), np.array([1.0, 1.0]),
                       state_box=box)


# ---------------------------------------------------------------------------
# SymNav
# ---------------------------------------------------------------------------

def symnav_map(variant: int, world_radius: float = 4.5) -> SymNavMap:
    """Deterministic map for a SymNav variant in [1, 15].

    Goal on the circle of radius 3.5, six obstacle circles, and a wind scale,
    all pure functions of the variant index.
    """
    if not (1 <= int(variant) <= 15) or int(variant) != variant:
        raise ValueError(f"variant must be an integer in [1, 15], got {variant}")
    variant = int(variant)
    theta = 2.0 * math.pi * (variant % 15) / 15.0
    goal = 3.5 * np.array([math.cos(theta), math.sin(theta)])
    centers = np.empty((6, 2))
    radii = np.empty(6)
    for k in range(6):
        th_k = 2.0 * math.pi * k / 6.0 + 0.15 * (variant % 5)
        rho_k = 1.2 + 0.2 * ((variant + k) % 3)
        centers[k] = rho_k * np.array([math.cos(th_k), math.sin(th_k)])
        radii[k] = 0.35 + 0.05 * ((variant + 2 * k) % 4)
    wind_scale = 0.15 * ((variant % 5) + 1)
    return SymNavMap(variant, goal, centers, radii, wind_scale, world_radius)


def symnav_observe(nav: SymNavMap, s: np.ndarray) -> np.ndarray:
    """14-dim observation: state, goal offset, and 8 normalized lidar rays.

    Rays are uniformly spaced over [0, 2pi) starting along +x; each return is
    the exact first-hit distance against the obstacle circles and the world
    boundary disk, divided by the world radius and clipped to [0, 1].
    """
    s = np.asarray(s, dtype=float)
    p = s[:2]
    R = nav.world_radius
    dists = np.empty(8)
    for i in range(8):
        ang = 2.0 * math.pi * i / 8.0
        u = np.array([math.cos(ang), math.sin(ang)])
        # world boundary (from inside the disk): positive root of |p + t u| = R
        b = float(p @ u)
        disc = b * b + R * R - float(p @ p)
        t_hit = -b + math.sqrt(max(disc, 0.0))
        for c, r in zip(nav.obstacle_centers, nav.obstacle_radii):
            q = p - c
            if q @ q <= r * r:
                t_hit = 0.0
                break
            bq = float(q @ u)
            disc_o = bq * bq - (float(q @ q) - r * r)
            if disc_o >= 0.0:
                t0 = -bq - math.sqrt(disc_o)
                if 0.0 <= t0 < t_hit:
                    t_hit = t0
        dists[i] = min(max(t_hit / R, 0.0), 1.0)
    return np.concatenate([s, nav.goal - p, dists])


def _symnav_collided(nav: SymNavMap, p: np.ndarray) -> bool:
    d2 = np.sum((nav.obstacle_centers - p) ** 2, axis=1)
    return bool(np.any(d2 <= nav.obstacle_radii ** 2))


def symnav_env(variant: int, cfg: Optional[SimConfig] = None,
               world_radius: float = 4.5) -> Environment:
    """SymNav variant: wind-perturbed point mass with obstacles; dense
    goal-distance shaping, collision penalty 2, success bonus 10 inside 0.3.

    The reward and its gradients are smooth away from the collision/success
    indicator boundaries; derivative checks should probe away from those
    sets.
    """
    if cfg is None:
        cfg = SimConfig(horizon=400)
    nav = symnav_map(variant, world_radius)
    lam = cfg.lambda_damp
    k_wind = nav.wind_scale

    def wind(p):
        x, y = p[..., 0], p[..., 1]
        return k_wind * np.stack([np.sin(0.5 * y), np.cos(0.5 * x)], axis=-1)

    def f_vel(p, v, a):
        return a + wind(p) - lam * v

    def jac_p_f(p):
        x, y = p[..., 0], p[..., 1]
        J = np.zeros(p.shape[:-1] + (2, 2))
        J[..., 0, 1] = 0.5 * k_wind * np.cos(0.5 * y)
        J[..., 1, 0] = -0.5 * k_wind * np.sin(0.5 * x)
        return J

    def shaped_reward(p):
        d = np.linalg.norm(np.atleast_2d(p) - nav.goal, axis=-1)
        coll = np.array([_symnav_collided(nav, q) for q in np.atleast_2d(p)])
        r = -d - 2.0 * coll + 10.0 * (d < 0.3)
        return r.reshape(np.asarray(p).shape[:-1])

    def reward(p, v):
        return shaped_reward(p)

    def grad_p_r(p):
        diff = p - nav.goal
        d = np.linalg.norm(diff, axis=-1, keepdims=True)
        return -diff / np.where(d > 0, d, 1.0)

    model = _second_order_model(f"symnav-v{variant}", cfg, f_vel, jac_p_f,
                                reward, grad_p_r,
                                lambda v: np.zeros_like(v))

    def step_one(s, a, xi):
        p, v = s[:2], s[2:]
        p2, v2 = _semi_implicit(p, v, a, f_vel(p, v, a), cfg, xi)
        nrm = float(np.linalg.norm(p2))
        projected = nrm > world_radius
        if projected:
            p2 = p2 * (world_radius / nrm)
        s_next = np.concatenate([p2, v2])
        _check_finite(s_next, s, a)
        d_goal = float(np.linalg.norm(p2 - nav.goal))
        collided = _symnav_collided(nav, p2)
        success = d_goal < 0.3
        r = -d_goal - 2.0 * collided + 10.0 * success
        return Transition(s, a, s_next, r, projected=projected,
                          collided=collided, success=success)

    box = np.array([[-4.5, 4.5], [-4.5, 4.5], [-2.0, 2.0], [-2.0, 2.0]])
    return Environment(f"symnav-v{variant}", model, cfg, step_one, 2,
                       np.array([-1.0, -1.0]), np.array([1.0, 1.0]),
                       observe=lambda s: symnav_observe(nav, s),
                       nav_map=nav, state_box=box)


# ---------------------------------------------------------------------------
# Reference generators and closed-form transforms
# ---------------------------------------------------------------------------

def rotation_generator_4d() -> GeneratorPair:
    """Simultaneous planar rotation of position, velocity, and action."""
    A = np.zeros((4, 4))
    A[:2, :2] = G_SKEW
    A[2:, 2:] = G_SKEW
    return GeneratorPair(A, np.zeros(4), G_SKEW.copy(), np.zeros(2))


def rotation_generator_2d() -> GeneratorPair:
    return GeneratorPair(G_SKEW.copy(), np.zeros(2), G_SKEW.copy(), np.zeros(2))


def _rot(phi: float) -> np.ndarray:
    c, s = math.cos(phi), math.sin(phi)
    return np.array([[c, -s], [s, c]])


def rotation_transform_4d(phi: float) -> FiniteTransform:
    M = np.zeros((4, 4))
    M[:2, :2] = _rot(phi)
    M[2:, 2:] = _rot(phi)
    return FiniteTransform.from_linear(phi, M, _rot(phi))


def rotation_transform_2d(phi: float) -> FiniteTransform:
    return FiniteTransform.from_linear(phi, _rot(phi), _rot(phi))


def reflection_transform_4d() -> FiniteTransform:
    """x-reflection of position, velocity, and action (not a flow of the
    affine generator class: determinant -1)."""
    M = np.diag([-1.0, 1.0, -1.0, 1.0])
    return FiniteTransform.from_linear(0.0, M, np.diag([-1.0, 1.0]))


def reflection_transform_2d() -> FiniteTransform:
    M = np.diag([-1.0, 1.0])
    return FiniteTransform.from_linear(0.0, M, M)


_FACTORIES = {
    "rot2d": lambda cfg, kw: rot2d_model(cfg),
    "doublewell": lambda cfg, kw: doublewell_model(
        cfg, DoubleWellParams(delta=kw.get("delta", 0.0))),
    "postconstraint": lambda cfg, kw: postconstraint_model(
        cfg, AnnulusParams(kw.get("r_min", 0.5), kw.get("r_max", 2.0))),
    "overdamped": lambda cfg, kw: overdamped_model(cfg),
    "overdamped_doublewell": lambda cfg, kw: overdamped_doublewell_model(
        cfg, DoubleWellParams(delta=kw.get("delta", 0.0))),
}


def make_env(name: str, cfg: Optional[SimConfig] = None, **kwargs) -> Environment:
    """Construct a shipped environment by name (``symnav-v<k>`` for SymNav)."""
    cfg = cfg or SimConfig()
    if name.startswith("symnav-v"):
        return symnav_env(int(name.split("symnav-v")[1]), cfg,
                          kwargs.get("world_radius", 4.5))
    if name not in _FACTORIES:
        raise ValueError(f"unknown environment '{name}'")
    return _FACTORIES[name](cfg, kwargs)


# ---------------------------------------------------------------------------
# Trajectory export
# ---------------------------------------------------------------------------

def write_trajectory_csv(path, transitions):
    """Dump a trajectory as CSV: step, state, action, reward, flags.

    Header row mandatory; '.' decimal separator and LF line endings.
    """
    if not transitions:
        raise ValueError("empty trajectory")
    d = transitions[0].s.shape[0]
    m = transitions[0].a.shape[0]
    header = (["step"] + [f"s{i}" for i in range(d)] + [f"a{j}" for j in range(m)]
              + ["reward", "projected", "collided", "success"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k, tr in enumerate(transitions):
            row = ([k] + [repr(float(x)) for x in tr.s]
                   + [repr(float(x)) for x in tr.a]
                   + [repr(float(tr.reward)), int(tr.projected),
                      int(tr.collided), int(tr.success)])
            w.writerow(row)
