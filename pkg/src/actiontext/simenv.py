"""Deterministic toy environments used for demonstrations and closed-loop evaluation.

Two tasks:

* ``pointmass``: a point in the unit square must reach a goal. Action is a
  2D position delta, clamped to 0.05 per axis per step.
* ``arm``: a planar two-link arm must touch a target with the gripper
  closed. Action is ``(dtheta1, dtheta2, gripper)``; joint deltas are clamped to
  0.1 rad, the gripper command is absolute in ``[0, 1]``.

Environments are stateless objects; states are immutable dataclasses and
``step`` returns a new one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .data import Episode

STEP_LIMIT = 200


def wrap_angle(a):
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


def _check_action(action, dims: int) -> np.ndarray:
    a = np.asarray(action, dtype=np.float64).reshape(-1)
    if a.shape != (dims,):
        raise ValueError(f"expected an action of length {dims}, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"action contains NaN or inf: {a}")
    return a


@dataclass(frozen=True)
class PointMassState:
    position: tuple[float, float]
    goal: tuple[float, float]
    steps_elapsed: int = 0


@dataclass(frozen=True)
class ArmState:
    joint_angles: tuple[float, float]
    link_lengths: tuple[float, float]
    target: tuple[float, float]
    gripper: float = 0.0
    steps_elapsed: int = 0


class PointMassEnv:
    name = "pointmass"
    action_dims = 2
    instruction = "move the point to the goal"
    max_delta = 0.05
    success_radius = 0.02
    step_limit = STEP_LIMIT

    def reset(self, seed: int) -> PointMassState:
        rng = np.random.default_rng(seed)
        pos = rng.uniform(0.05, 0.95, size=2)
        goal = rng.uniform(0.05, 0.95, size=2)
        return PointMassState(tuple(pos.tolist()), tuple(goal.tolist()), 0)

    def distance(self, state: PointMassState) -> float:
        return float(np.linalg.norm(np.subtract(state.goal, state.position)))

    def is_success(self, state: PointMassState) -> bool:
        return self.distance(state) < self.success_radius

    def step(self, state: PointMassState, action) -> tuple[PointMassState, bool]:
        a = np.clip(_check_action(action, 2), -self.max_delta, self.max_delta)
        pos = np.clip(np.add(state.position, a), 0.0, 1.0)
        new = PointMassState(tuple(pos.tolist()), state.goal, state.steps_elapsed + 1)
        return new, self.is_success(new) or new.steps_elapsed >= self.step_limit

    def controller(self, state: PointMassState) -> np.ndarray:
        delta = np.subtract(state.goal, state.position)
        dist = np.linalg.norm(delta)
        if dist <= self.max_delta:
            return delta
        return delta / dist * self.max_delta

    def observe(self, state: PointMassState) -> np.ndarray:
        # goal-relative so a nearest-neighbour lookup transfers across goals
        return np.subtract(state.goal, state.position)

    def hold_action(self, last_action) -> np.ndarray:
        return np.zeros(2)

    def render(self, state: PointMassState, size: int = 64) -> list[np.ndarray]:
        """Top-down view plus a 2x zoom centred on the point."""
        wide = _canvas(size)
        _dot(wide, state.goal, (0, 200, 0), size)
        _dot(wide, state.position, (220, 30, 30), size)
        zoom_origin = np.subtract(state.position, 0.25)
        close = _canvas(size)
        _dot(close, (np.subtract(state.goal, zoom_origin) * 2).tolist(), (0, 200, 0), size)
        _dot(close, (0.5, 0.5), (220, 30, 30), size)
        return [wide, close]


class ArmEnv:
    name = "arm"
    action_dims = 3
    instruction = "touch the target with the gripper closed"
    max_delta = 0.1
    success_radius = 0.03
    grip_radius = 0.06
    fold_limit = 2.8
    step_limit = STEP_LIMIT
    link_lengths = (0.5, 0.5)

    def reset(self, seed: int) -> ArmState:
        rng = np.random.default_rng(seed)
        l1, l2 = self.link_lengths
        theta1 = rng.uniform(-np.pi, np.pi)
        theta2 = rng.uniform(0.3, 2.6) * rng.choice([-1.0, 1.0])
        radius = rng.uniform(abs(l1 - l2) + 0.25, l1 + l2 - 0.1)
        bearing = rng.uniform(-np.pi, np.pi)
        target = (radius * math.cos(bearing), radius * math.sin(bearing))
        return ArmState((float(theta1), float(theta2)), self.link_lengths, target, 0.0, 0)

    @staticmethod
    def forward_kinematics(angles, lengths) -> np.ndarray:
        t1, t2 = angles
        l1, l2 = lengths
        return np.array([l1 * math.cos(t1) + l2 * math.cos(t1 + t2), l1 * math.sin(t1) + l2 * math.sin(t1 + t2)])

    @staticmethod
    def jacobian(angles, lengths) -> np.ndarray:
        t1, t2 = angles
        l1, l2 = lengths
        s1, c1 = math.sin(t1), math.cos(t1)
        s12, c12 = math.sin(t1 + t2), math.cos(t1 + t2)
        return np.array([[-l1 * s1 - l2 * s12, -l2 * s12], [l1 * c1 + l2 * c12, l2 * c12]])

    def end_effector(self, state: ArmState) -> np.ndarray:
        return self.forward_kinematics(state.joint_angles, state.link_lengths)

    def distance(self, state: ArmState) -> float:
        return float(np.linalg.norm(np.subtract(state.target, self.end_effector(state))))

    def is_success(self, state: ArmState) -> bool:
        return self.distance(state) < self.success_radius and state.gripper > 0.5

    def step(self, state: ArmState, action) -> tuple[ArmState, bool]:
        a = _check_action(action, 3)
        deltas = np.clip(a[:2], -self.max_delta, self.max_delta)
        angles = wrap_angle(np.add(state.joint_angles, deltas))
        new = replace(
            state,
            joint_angles=tuple(angles.tolist()),
            gripper=float(np.clip(a[2], 0.0, 1.0)),
            steps_elapsed=state.steps_elapsed + 1,
        )
        return new, self.is_success(new) or new.steps_elapsed >= self.step_limit

    def controller(self, state: ArmState) -> np.ndarray:
        """Jacobian-transpose step with the error-optimal step length."""
        err = np.subtract(state.target, self.end_effector(state))
        J = self.jacobian(state.joint_angles, state.link_lengths)
        grad = J.T @ err
        jjte = J @ grad
        denom = float(jjte @ jjte)
        alpha = float(err @ jjte) / denom if denom > 1e-12 else 0.0
        dq = np.clip(alpha * grad, -self.max_delta, self.max_delta)
        t2 = state.joint_angles[1]
        if abs(t2) > self.fold_limit:
            # the folded arm is a stall point for the transpose step
            dq[1] = -math.copysign(self.max_delta, t2)
        gripper = 1.0 if np.linalg.norm(err) < self.grip_radius else 0.0
        return np.array([dq[0], dq[1], gripper])

    def observe(self, state: ArmState) -> np.ndarray:
        t1, t2 = state.joint_angles
        err = np.subtract(state.target, self.end_effector(state))
        return np.array([math.sin(t1), math.cos(t1), math.sin(t2), math.cos(t2), err[0], err[1]])

    def hold_action(self, last_action) -> np.ndarray:
        last = np.asarray(last_action, dtype=np.float64)
        return np.array([0.0, 0.0, last[2]])

    def render(self, state: ArmState, size: int = 64) -> list[np.ndarray]:
        to_px = lambda p: ((np.asarray(p) + 1.0) / 2.0).tolist()  # noqa: E731
        ee = self.end_effector(state)
        l1 = state.link_lengths[0]
        elbow = (l1 * math.cos(state.joint_angles[0]), l1 * math.sin(state.joint_angles[0]))
        wide = _canvas(size)
        _dot(wide, to_px(state.target), (0, 200, 0), size)
        _dot(wide, to_px((0.0, 0.0)), (90, 90, 90), size)
        _dot(wide, to_px(elbow), (40, 40, 220), size)
        grip_color = (220, 30, 30) if state.gripper > 0.5 else (240, 160, 40)
        _dot(wide, to_px(ee), grip_color, size)
        close = _canvas(size)
        _dot(close, (np.subtract(state.target, ee) * 2 + 0.5).tolist(), (0, 200, 0), size)
        _dot(close, (0.5, 0.5), grip_color, size)
        return [wide, close]


def _canvas(size: int) -> np.ndarray:
    return np.full((size, size, 3), 245, dtype=np.uint8)


def _dot(img: np.ndarray, xy, color, size: int, radius: int = 2) -> None:
    x, y = xy
    if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
        return
    cx = min(int(x * (size - 1)), size - 1)
    cy = min(int((1.0 - y) * (size - 1)), size - 1)
    img[max(cy - radius, 0) : cy + radius + 1, max(cx - radius, 0) : cx + radius + 1] = color


ENVS = {"pointmass": PointMassEnv, "arm": ArmEnv}


def make_env(name: str):
    try:
        return ENVS[name]()
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENVS)}") from None


def plan_chunk(env, state, horizon: int) -> np.ndarray:
    """Roll the scripted controller forward ``horizon`` steps, ignoring termination."""
    rows = []
    for _ in range(horizon):
        a = env.controller(state)
        rows.append(a)
        state, _ = env.step(state, a)
    return np.array(rows)


def rollout(env, state, controller=None) -> tuple[Episode, object]:
    controller = controller or env.controller
    states, actions = [], []
    done = False
    while not done:
        a = controller(state)
        states.append(env.observe(state))
        actions.append(a)
        state, done = env.step(state, a)
    ep = Episode(env.name, 0, env.instruction, np.array(states), np.array(actions), env.is_success(state))
    return ep, state


def generate_demos(env, count: int, seed: int, controller=None, max_failures: int | None = None) -> list[Episode]:
    """``count`` successful scripted episodes; failed rollouts are replaced by fresh seeds."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if max_failures is None:
        max_failures = max(10, count)
    rng = np.random.default_rng(seed)
    episodes: list[Episode] = []
    failures = 0
    while len(episodes) < count:
        ep_seed = int(rng.integers(0, 2**31 - 1))
        ep, _ = rollout(env, env.reset(ep_seed), controller)
        if not ep.success:
            failures += 1
            if failures > max_failures:
                raise RuntimeError(f"gave up after {failures} failed demonstrations")
            continue
        ep.seed = ep_seed
        episodes.append(ep)
    return episodes


def window_actions(env, episode: Episode, start: int, horizon: int) -> np.ndarray:
    """Actions ``start .. start+horizon-1``; past the episode end the env's hold action is repeated."""
    chunk = episode.actions[start : start + horizon]
    if len(chunk) < horizon:
        hold = env.hold_action(episode.actions[-1])
        chunk = np.vstack([chunk, np.tile(hold, (horizon - len(chunk), 1))])
    return chunk


def replay_states(env, episode: Episode) -> list:
    """Simulator states before each step, recovered by replaying the recorded actions from the episode seed."""
    state = env.reset(episode.seed)
    states = []
    for a in episode.actions:
        states.append(state)
        state, _ = env.step(state, a)
    return states
