"""Interactive websocket sessions around the frame sampler.

Each connection owns one character. A fixed-rate loop generates frames
and streams them out; client messages steer the character between frames.
All session logic lives in SessionCore, which is synchronous and
network-free; the websocket layer is a thin shell that feeds it JSON and
relays its replies.

Slow clients never stall generation: outbound frames go through a small
ring that drops the oldest frame when full, while control replies queue
unbounded (they are rare and must not be lost). Client commands are
latest-wins: each new joystick or target message replaces the previous
one, so input backlog cannot build up.
"""

from __future__ import annotations

import asyncio
import itertools
import json
from collections import deque
from dataclasses import replace as dc_replace

import numpy as np

from .diffusion import ControlHook, generate_frame
from .errors import GenerationError
from .motion import (
    FeatureLayout,
    WorldRootState,
    integrate_root,
    local_to_world,
)
from .rng import Stream, philox
from .synthesis import CandidateScorer, sample_task_oriented
from .control.envs import (
    EnvConfig,
    JoystickEnv,
    PathEnv,
    TargetEnv,
    build_path,
    reward_joystick,
)

MODES = ("random", "joystick", "target", "path")

# Held-velocity preview length for path-mode waypoint chasing.
_PATH_CHASE_HORIZON = 12
_ENV_CLASSES = {"joystick": JoystickEnv, "target": TargetEnv, "path": PathEnv}


def _merge_hooks(action_hook, pin_hook):
    """Overlay pinned channels onto an action-derived hook."""
    if action_hook is None:
        return pin_hook
    if pin_hook is None:
        return action_hook
    return dc_replace(action_hook, inpaint_mask=pin_hook.inpaint_mask,
                      inpaint_values=pin_hook.inpaint_values)


class MessageError(Exception):
    """Client message is malformed; the session continues."""


def _need_number(msg: dict, key: str) -> float:
    value = msg.get(key)
    if not isinstance(value, (int, float)) or isinstance(value, bool) \
            or not np.isfinite(value):
        raise MessageError(f"field {key!r} must be a finite number")
    return float(value)


class SessionCore:
    """State and logic of one interactive character session."""

    def __init__(self, model, policies=None, seed: int = 0, session: int = 0,
                 fps: "float | None" = None, candidates: int = 48,
                 init_frame: "np.ndarray | None" = None, mode: str = "random",
                 reach_radius: float = 0.3, lookahead: int = 90,
                 path_scale: float = 5.0, path_points: int = 240):
        self.model = model
        self.policies = dict(policies or {})
        self.layout = FeatureLayout(model.skeleton.joint_count)
        self.fps = float(fps or model.fps)
        self.candidates = int(candidates)
        self.seed = int(seed)
        self.session = int(session)
        self.reach_radius = float(reach_radius)
        self.lookahead = int(lookahead)
        self.path_scale = float(path_scale)
        self.path_points = int(path_points)
        if init_frame is None:
            init_frame = model.stats.mean.copy()
        self._init_frame = np.asarray(init_frame, dtype=np.float64)
        self.rng = philox(seed, Stream.SERVE, index=session)
        self.tick = 0
        self.paused = False
        self.joystick_cmd = {"direction": 0.0, "speed": 1.0}
        self.target_cmd = None
        self.pin = None  # (channel index, raw value, joint name)
        self.course = None
        self.pointer = 0
        self.env = None
        self.x = self._init_frame.copy()
        self.world = WorldRootState()
        self.mode = "random"
        self._set_mode(mode if mode in MODES else "random")

    # --- messages ---------------------------------------------------------

    def hello(self) -> dict:
        skeleton = self.model.skeleton
        return {
            "type": "hello",
            "mode": self.mode,
            "tick": self.tick,
            "fps": self.fps,
            "joints": list(skeleton.joint_names),
            "parents": [int(p) for p in skeleton.parent],
        }

    def handle_message(self, msg) -> list:
        """Apply one already-decoded client message; returns replies."""
        try:
            return self._dispatch(msg)
        except MessageError as exc:
            return [{"type": "error", "error": str(exc), "tick": self.tick}]

    def _dispatch(self, msg) -> list:
        if not isinstance(msg, dict) or not isinstance(msg.get("type"), str):
            raise MessageError("message must be an object with a 'type'")
        kind = msg["type"]
        if kind == "mode":
            mode = msg.get("mode")
            if mode not in MODES:
                raise MessageError(
                    f"unknown mode {mode!r}; choose from {list(MODES)}")
            self._set_mode(mode)
            out = [{"type": "mode", "mode": self.mode, "tick": self.tick}]
            if mode == "path":
                out.append(self._course_message())
            return out
        if kind == "joystick":
            self.joystick_cmd = {"direction": _need_number(msg, "direction"),
                                 "speed": _need_number(msg, "speed")}
            if isinstance(self.env, JoystickEnv):
                self.env.goal_dir = self.joystick_cmd["direction"]
                self.env.goal_speed = self.joystick_cmd["speed"]
            return []
        if kind == "target":
            cmd = {"x": _need_number(msg, "x"), "y": _need_number(msg, "y")}
            if "height" in msg:
                cmd["height"] = _need_number(msg, "height")
            self.target_cmd = cmd
            if isinstance(self.env, TargetEnv):
                self.env.target = np.array([cmd["x"], cmd["y"]])
            return []
        if kind == "path":
            points = msg.get("waypoints")
            if points is not None:
                course = np.asarray(points, dtype=np.float64)
                if course.ndim != 2 or course.shape[1] != 2 \
                        or course.shape[0] < 2 \
                        or not np.isfinite(course).all():
                    raise MessageError(
                        "waypoints must be a list of [x, y] pairs")
                self.course = course
                self.pointer = 0
                if isinstance(self.env, PathEnv):
                    self.env.path = course
                    self.env.pointer = 0
            return [self._course_message()]
        if kind == "inpaint":
            joint = msg.get("joint")
            if joint is None:
                self.pin = None
                return []
            if not isinstance(joint, str):
                raise MessageError("field 'joint' must be a joint name")
            try:
                index = self.model.skeleton.index_of(joint)
            except KeyError:
                raise MessageError(f"unknown joint {joint!r}")
            height = _need_number(msg, "height")
            channel = self.layout.height_index(index)
            self.pin = (channel, height, joint)
            return []
        if kind == "pause":
            self.paused = True
            return [{"type": "notice", "notice": "paused",
                     "tick": self.tick}]
        if kind == "resume":
            self.paused = False
            return [{"type": "notice", "notice": "resumed",
                     "tick": self.tick}]
        if kind == "reset":
            self._reset_pose()
            return [{"type": "notice", "notice": "reset",
                     "tick": self.tick}]
        raise MessageError(f"unknown message type {kind!r}")

    def _course_message(self) -> dict:
        course = self._ensure_course()
        stride = max(1, len(course) // 120)
        return {"type": "path", "tick": self.tick,
                "waypoints": [[float(p[0]), float(p[1])]
                              for p in course[::stride]]}

    # --- mode and pose management -----------------------------------------

    def _set_mode(self, mode: str) -> None:
        self.mode = mode
        policy = self.policies.get(mode)
        if policy is None:
            self.env = None
            if mode == "path":
                self._ensure_course()
                self.pointer = self._nearest_index()
            return
        config = EnvConfig(horizon=10 ** 9)
        env = _ENV_CLASSES[mode](self.model, policy.spec, config,
                                 seed=self.seed, init_frame=self._init_frame,
                                 generator=self._pinned_generator)
        # carry the live pose into the env instead of restarting it
        env.x = self.x.copy()
        env.state = self.world
        if mode == "target" and self.target_cmd:
            env.target = np.array([self.target_cmd["x"],
                                   self.target_cmd["y"]])
        if mode == "joystick":
            env.goal_dir = self.joystick_cmd["direction"]
            env.goal_speed = self.joystick_cmd["speed"]
            env.config.dir_every = 10 ** 9
            env.config.speed_every = 10 ** 9
        if mode == "path":
            env.path = self._ensure_course()
            env.pointer = 0
        self.env = env
        self._policy = policy

    def _ensure_course(self) -> np.ndarray:
        if self.course is None:
            self.course = build_path(self.path_points, self.path_scale)
        return self.course

    def _reset_pose(self) -> None:
        self.x = self._init_frame.copy()
        self.world = WorldRootState()
        if self.env is not None:
            self.env.x = self.x.copy()
            self.env.state = self.world

    def _pin_hook(self) -> "ControlHook | None":
        if self.pin is None:
            return None
        channel, raw, _ = self.pin
        mask = np.zeros(self.layout.dim, dtype=bool)
        mask[channel] = True
        values = np.zeros(self.layout.dim)
        stats = self.model.stats
        values[channel] = (raw - stats.mean[channel]) / stats.std[channel]
        return ControlHook(inpaint_mask=mask, inpaint_values=values)

    def _pinned_generator(self, x, rng, hook, initial_noise):
        return generate_frame(self.model, x, rng,
                              _merge_hooks(hook, self._pin_hook()),
                              initial_noise=initial_noise)

    # --- frame generation -------------------------------------------------

    def advance(self) -> "dict | None":
        """Generate the next frame message, or None while paused."""
        if self.paused:
            return None
        try:
            reward = self._advance_once()
        except GenerationError:
            self._reset_pose()
            return {"type": "notice", "tick": self.tick,
                    "notice": "generation failed; session reset"}
        self.tick += 1
        return self._frame_message(reward)

    def _advance_once(self) -> "float | None":
        if self.env is not None:
            obs = self.env.observation()
            action = self._policy.act(obs, self.rng, deterministic=True)
            _, reward, done, info = self.env.step(action)
            if info.get("failure"):
                raise GenerationError("environment reported a failed frame")
            self.x = self.env.x
            self.world = self.env.state
            return float(reward)
        hook = self._pin_hook()
        if self.mode == "random":
            self.x = generate_frame(self.model, self.x, self.rng, hook)
            self.world = integrate_root(self.world, self.x)
            return None
        scorer = self._scorer()
        self.x, _ = sample_task_oriented(
            self.model, self.x, self.world, scorer, k=self.candidates,
            seed=self.seed, rng=self.rng, fallback_index=self.tick,
            hook=hook)
        previous = self.world
        self.world = integrate_root(self.world, self.x)
        return self._display_reward(previous)

    def _scorer(self):
        if self.mode == "target":
            goal = self._target_point()
            return CandidateScorer("target_distance", tuple(goal),
                                   self.lookahead)
        if self.mode == "joystick":
            cmd = self.joystick_cmd
            return _JoystickScore(cmd["direction"], cmd["speed"], self.fps)
        course = self._ensure_course()
        self.pointer = self._nearest_index()
        goal = course[(self.pointer + 8) % len(course)]
        # Chase a close waypoint with a short horizon so the character hugs
        # the course instead of arcing across it toward a distant pass.
        return CandidateScorer("target_distance",
                               (float(goal[0]), float(goal[1])),
                               _PATH_CHASE_HORIZON)

    def _target_point(self) -> tuple:
        if self.target_cmd is None:
            return (self.world.x, self.world.y)
        return (self.target_cmd["x"], self.target_cmd["y"])

    def _nearest_index(self) -> int:
        course = self._ensure_course()
        n = len(course)
        window = (self.pointer + np.arange(n // 4)) % n
        dists = np.linalg.norm(course[window] - self.world.position, axis=1)
        return int(window[int(np.argmin(dists))])

    def _display_reward(self, previous: WorldRootState) -> float:
        if self.mode == "target":
            goal = self._target_point()
            dist = float(np.hypot(self.world.x - goal[0],
                                  self.world.y - goal[1]))
            return float(np.exp(-dist))
        if self.mode == "joystick":
            move = self.world.position - previous.position
            speed = float(np.linalg.norm(move)) * self.fps
            realized = (float(np.arctan2(move[1], move[0]))
                        if speed > 1e-8 else self.world.heading)
            cmd = self.joystick_cmd
            return reward_joystick(realized, speed, cmd["direction"],
                                   cmd["speed"])
        course = self._ensure_course()
        dist = float(np.linalg.norm(course[self.pointer]
                                    - self.world.position))
        return float(np.exp(-dist))

    def _frame_message(self, reward) -> dict:
        points = local_to_world(self.layout.positions(self.x), self.world)
        speed = float(np.linalg.norm(self.x[:2])) * self.fps
        return {
            "type": "frame",
            "tick": self.tick,
            "root": {"x": float(self.world.x), "y": float(self.world.y),
                     "heading": float(self.world.heading)},
            "joints": [[float(v) for v in p] for p in points],
            "mode": self.mode,
            "speed": speed,
            "reward": None if reward is None else float(reward),
        }


class _JoystickScore:
    """Negated direction/speed agreement of each candidate's move."""

    def __init__(self, direction: float, speed: float, fps: float):
        self.direction = direction
        self.speed = speed
        self.fps = fps

    def __call__(self, candidates: np.ndarray, world) -> np.ndarray:
        c, s = np.cos(world.heading), np.sin(world.heading)
        wx = c * candidates[:, 0] - s * candidates[:, 1]
        wy = s * candidates[:, 0] + c * candidates[:, 1]
        speed = np.hypot(wx, wy) * self.fps
        realized = np.where(speed > 1e-8, np.arctan2(wy, wx), world.heading)
        score = np.exp(np.cos(realized - self.direction) - 1.0) \
            * np.exp(-np.abs(speed - self.speed))
        return -score


# --- websocket shell ------------------------------------------------------


class _Outbound:
    """Two-lane outbound buffer: control replies are never dropped,
    frames overwrite the oldest when the ring is full."""

    def __init__(self, queue_limit: int):
        self.control = deque()
        self.frames = deque(maxlen=max(1, queue_limit))
        self.wake = asyncio.Event()

    def put(self, message: dict) -> None:
        lane = self.frames if message.get("type") == "frame" \
            else self.control
        lane.append(message)
        self.wake.set()

    async def next(self) -> dict:
        while not self.control and not self.frames:
            self.wake.clear()
            await self.wake.wait()
        return self.control.popleft() if self.control \
            else self.frames.popleft()


async def _run_session(socket, core: SessionCore, queue_limit: int) -> None:
    out = _Outbound(queue_limit)
    out.put(core.hello())
    if core.mode == "path":
        out.put(core._course_message())
    loop = asyncio.get_running_loop()

    async def sender():
        while True:
            message = await out.next()
            await socket.send(json.dumps(message))

    async def reader():
        async for raw in socket:
            try:
                msg = json.loads(raw)
            except (ValueError, UnicodeDecodeError):
                out.put({"type": "error", "error": "message is not JSON",
                         "tick": core.tick})
                continue
            for reply in core.handle_message(msg):
                out.put(reply)

    async def driver():
        period = 1.0 / core.fps
        next_at = loop.time()
        while True:
            message = await loop.run_in_executor(None, core.advance)
            if message is not None:
                out.put(message)
            next_at += period
            delay = next_at - loop.time()
            if delay < 0:
                next_at = loop.time()  # fell behind; do not spiral
                delay = 0.0
            await asyncio.sleep(delay)

    tasks = [asyncio.ensure_future(sender()),
             asyncio.ensure_future(reader()),
             asyncio.ensure_future(driver())]
    try:
        done, _ = await asyncio.wait(tasks,
                                     return_when=asyncio.FIRST_COMPLETED)
        for task in done:
            exc = task.exception()
            if exc is not None and not _is_disconnect(exc):
                raise exc
    finally:
        for task in tasks:
            task.cancel()


def _is_disconnect(exc: BaseException) -> bool:
    import websockets

    return isinstance(exc, (websockets.ConnectionClosed, ConnectionError))


def run_server(model, policies=None, host: str = "127.0.0.1",
               port: int = 8765, fps: "float | None" = None, seed: int = 0,
               queue_limit: int = 8, candidates: int = 48,
               init_frame=None, mode: str = "random",
               ready=None, stop=None) -> None:
    """Serve sessions until interrupted.

    `ready` (a callable) is invoked with the bound port once listening;
    `stop` (an asyncio-compatible awaitable factory) ends the server when
    it completes. Both exist so tests can drive a live server.
    """
    import websockets

    counter = itertools.count()

    async def handler(socket):
        core = SessionCore(model, policies=policies, seed=seed,
                           session=next(counter), fps=fps,
                           candidates=candidates, init_frame=init_frame,
                           mode=mode)
        await _run_session(socket, core, queue_limit)

    async def main():
        async with websockets.serve(handler, host, port) as server:
            bound = server.sockets[0].getsockname()[1]
            if ready is not None:
                ready(bound)
            else:
                print(f"serving on ws://{host}:{bound}", flush=True)
            if stop is None:
                await asyncio.Future()
            else:
                await stop()

    try:
        asyncio.run(main())
    except KeyboardInterrupt:
        pass
