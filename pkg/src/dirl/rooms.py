"""Continuous multi-room navigation environment.

The world is a ``rows x cols`` grid of square rooms with side ``room_side``;
room ``(r, c)`` spans ``[c L, (c+1) L] x [r L, (r+1) L]`` (row 0 at the
bottom). Walls are zero-thickness segments on the grid lines. Each wall
shared by two adjacent rooms may have a door: a gap of width ``door_width``
centred on the wall. A move whose segment touches wall material is rejected
and the agent stays in place.

States are positions ``(x, y)``; actions are ``(speed, heading)``.
"""

from __future__ import annotations

import importlib.resources
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import yaml

from .spec_lang import Trajectory, rooms_atoms

__all__ = [
    "RoomsLayout", "RoomsEnv", "load_layout", "dump_layout", "preset_layout",
    "PRESETS", "reset", "step", "rollout", "waypoint_policy",
]

Room = tuple[int, int]

PRESETS = ("rooms9", "rooms16_open", "rooms16_blocked")


def _door_key(a: Room, b: Room) -> tuple[Room, Room]:
    a, b = tuple(a), tuple(b)
    return (a, b) if a <= b else (b, a)


def _adjacent(a: Room, b: Room) -> bool:
    return abs(a[0] - b[0]) + abs(a[1] - b[1]) == 1


@dataclass(frozen=True)
class RoomsLayout:
    rows: int
    cols: int
    room_side: float = 1.0
    door_width: float = 0.4
    max_speed: float = 0.25
    init_spread: float = 0.1
    obstacle_radius: float = 0.3
    init_room: Room = (0, 0)
    doors: frozenset = field(default_factory=frozenset)
    obstacles: tuple = ()
    name: str = ""

    def __post_init__(self):
        if not 0 < self.door_width < self.room_side:
            raise ValueError("door width must lie in (0, room_side)")
        if not 0 <= self.obstacle_radius < self.room_side / 2:
            raise ValueError("obstacle radius must be below half the room side")
        if self.max_speed <= 0 or self.init_spread < 0:
            raise ValueError("max_speed must be positive and init_spread non-negative")
        doors = frozenset(_door_key(a, b) for a, b in self.doors)
        for a, b in doors:
            if not (_adjacent(a, b) and self.contains_room(a) and self.contains_room(b)):
                raise ValueError(f"door {a}-{b} does not join two adjacent rooms")
        object.__setattr__(self, "doors", doors)
        object.__setattr__(self, "obstacles", tuple(tuple(o) for o in self.obstacles))
        object.__setattr__(self, "init_room", tuple(self.init_room))

    def contains_room(self, room: Room) -> bool:
        return 0 <= room[0] < self.rows and 0 <= room[1] < self.cols

    def door_open(self, a: Room, b: Room) -> bool:
        return _door_key(a, b) in self.doors

    def room_center(self, room: Room) -> np.ndarray:
        r, c = room
        return np.array([(c + 0.5) * self.room_side, (r + 0.5) * self.room_side])

    def room_of(self, s) -> Room:
        s = np.asarray(s, dtype=float)
        c = int(np.clip(s[0] // self.room_side, 0, self.cols - 1))
        r = int(np.clip(s[1] // self.room_side, 0, self.rows - 1))
        return (r, c)

    def neighbors(self, room: Room) -> list[Room]:
        r, c = room
        cand = [(r + 1, c), (r - 1, c), (r, c + 1), (r, c - 1)]
        return [n for n in cand if self.contains_room(n) and self.door_open(room, n)]

    @property
    def extent(self) -> tuple[float, float]:
        return self.cols * self.room_side, self.rows * self.room_side

    def atoms(self) -> dict:
        """DSL atom constructors bound to this geometry."""
        return rooms_atoms(self.room_side, self.obstacle_radius)


def all_doors(rows: int, cols: int) -> frozenset:
    doors = set()
    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                doors.add(((r, c), (r, c + 1)))
            if r + 1 < rows:
                doors.add(((r, c), (r + 1, c)))
    return frozenset(doors)


# ---------------------------------------------------------------------------
# Layout files


def _rooms(pairs) -> list:
    return [tuple(tuple(int(v) for v in room) for room in pair) for pair in pairs]


def load_layout(source) -> RoomsLayout:
    """Read a layout from a YAML file path, YAML text or an already-parsed dict."""
    if isinstance(source, dict):
        cfg = dict(source)
    else:
        text = str(source)
        if isinstance(source, Path) or "\n" not in text and text.endswith((".yaml", ".yml")):
            text = Path(source).read_text()
        cfg = yaml.safe_load(text)
    rows, cols = int(cfg.pop("rows")), int(cfg.pop("cols"))
    doors_cfg = cfg.pop("doors", "all")
    doors = set(all_doors(rows, cols)) if doors_cfg == "all" else set(_rooms(doors_cfg))
    for a, b in _rooms(cfg.pop("closed_doors", [])):
        doors.discard(_door_key(a, b))
    cfg.pop("notes", None)
    return RoomsLayout(
        rows=rows, cols=cols, doors=frozenset(doors),
        obstacles=tuple(tuple(int(v) for v in o) for o in cfg.pop("obstacles", [])),
        init_room=tuple(int(v) for v in cfg.pop("init_room", (0, 0))),
        **{k: (float(v) if k != "name" else str(v)) for k, v in cfg.items()},
    )


def dump_layout(layout: RoomsLayout) -> str:
    closed = sorted(all_doors(layout.rows, layout.cols) - layout.doors)
    cfg = {
        "name": layout.name,
        "rows": layout.rows,
        "cols": layout.cols,
        "room_side": layout.room_side,
        "door_width": layout.door_width,
        "max_speed": layout.max_speed,
        "init_spread": layout.init_spread,
        "obstacle_radius": layout.obstacle_radius,
        "init_room": list(layout.init_room),
        "obstacles": [list(o) for o in layout.obstacles],
        "doors": "all",
        "closed_doors": [[list(a), list(b)] for a, b in closed],
    }
    return yaml.safe_dump(cfg, sort_keys=False, default_flow_style=None)


def preset_layout(name: str) -> RoomsLayout:
    if name not in PRESETS:
        raise KeyError(f"unknown layout preset {name!r}; choose from {PRESETS}")
    text = importlib.resources.files("dirl.presets").joinpath(f"{name}.yaml").read_text()
    return load_layout(text)


# ---------------------------------------------------------------------------
# Dynamics


class RoomsEnv:
    """Deterministic dynamics over a :class:`RoomsLayout`; all methods batch over leading axes."""

    state_dim = 2
    action_dim = 2

    def __init__(self, layout: RoomsLayout):
        self.layout = layout
        R, C = layout.rows, layout.cols
        # vgap[r, c]: door in the vertical wall x = c L of row r
        self.vgap = np.zeros((R, C + 1), dtype=bool)
        # hgap[r, c]: door in the horizontal wall y = r L of column c
        self.hgap = np.zeros((R + 1, C), dtype=bool)
        for a, b in layout.doors:
            if a[0] == b[0]:
                self.vgap[a[0], max(a[1], b[1])] = True
            else:
                self.hgap[max(a[0], b[0]), a[1]] = True

    @property
    def max_speed(self) -> float:
        return self.layout.max_speed

    def reset(self, rng: np.random.Generator, n: Optional[int] = None) -> np.ndarray:
        """Uniform over a square of half-width ``init_spread`` at the initial room centre."""
        shape = (2,) if n is None else (n, 2)
        center = self.layout.room_center(self.layout.init_room)
        sig = self.layout.init_spread
        if sig == 0:
            return np.broadcast_to(center, shape).copy()
        return center + rng.uniform(-sig, sig, size=shape)

    def clip_action(self, a) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        v = np.clip(a[..., 0], 0.0, self.layout.max_speed)
        th = np.clip(a[..., 1], -np.pi, np.pi)
        return np.stack([v, th], axis=-1)

    def _material(self, gaps: np.ndarray, line: int, pos: np.ndarray, n_cells: int) -> np.ndarray:
        L, w = self.layout.room_side, self.layout.door_width
        cell = np.floor(pos / L).astype(int)
        inside = (pos >= 0) & (pos < n_cells * L)
        cell = np.clip(cell, 0, n_cells - 1)
        in_gap = gaps[cell, line] & (np.abs(pos - (cell + 0.5) * L) <= w / 2)
        return ~(inside & in_gap)

    def _blocked(self, s: np.ndarray, s2: np.ndarray) -> np.ndarray:
        L = self.layout.room_side
        blocked = np.zeros(s.shape[:-1], dtype=bool)
        for axis, n_lines, gaps, n_cells in (
            (0, self.layout.cols + 1, self.vgap, self.layout.rows),
            (1, self.layout.rows + 1, self.hgap.T, self.layout.cols),
        ):
            p0, p1 = s[..., axis], s2[..., axis]
            q0, q1 = s[..., 1 - axis], s2[..., 1 - axis]
            lo, hi = np.minimum(p0, p1), np.maximum(p0, p1)
            first = max(int(np.floor(lo.min() / L)), 0) if lo.size else 0
            last = min(int(np.ceil(hi.max() / L)), n_lines - 1) if hi.size else -1
            for line in range(first, last + 1):
                X = line * L
                hit = (lo <= X) & (X <= hi)
                if not hit.any():
                    continue
                dp = p1 - p0
                moving = dp != 0
                t = np.where(moving, (X - p0) / np.where(moving, dp, 1.0), 0.0)
                q = q0 + t * (q1 - q0)
                crossing = hit & moving & self._material(gaps, line, q, n_cells)
                # sliding along the wall line: both ends must sit in the same gap
                along = hit & ~moving & (
                    self._material(gaps, line, q0, n_cells)
                    | self._material(gaps, line, q1, n_cells)
                    | (np.floor(q0 / L) != np.floor(q1 / L))
                )
                blocked |= crossing | along
        return blocked

    def step(self, s, a) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        a = self.clip_action(a)
        v, th = a[..., 0], a[..., 1]
        s2 = s + np.stack([v * np.cos(th), v * np.sin(th)], axis=-1)
        blocked = self._blocked(s, s2)
        return np.where(blocked[..., None], s, s2)

    def atoms(self) -> dict:
        return self.layout.atoms()


def reset(layout: RoomsLayout, rng: np.random.Generator) -> np.ndarray:
    return RoomsEnv(layout).reset(rng)


def step(layout: RoomsLayout, s, a) -> np.ndarray:
    return RoomsEnv(layout).step(s, a)


def rollout(env: RoomsEnv, policy: Callable, s0, m: int, rng=None,
            stop: Optional[Callable[[np.ndarray], bool]] = None) -> Trajectory:
    """Run ``policy`` for ``m`` steps from ``s0``.

    ``policy`` maps a state to an action; if it has a ``reset`` method it is
    called first. ``stop(s)`` is checked after every step and ends the
    rollout early when true.
    """
    if m < 1:
        raise ValueError("rollout needs m >= 1")
    if hasattr(policy, "reset"):
        policy.reset()
    s = np.asarray(s0, dtype=float)
    states, actions = [s], []
    for _ in range(m):
        a = env.clip_action(policy(s))
        s = env.step(s, a)
        states.append(s)
        actions.append(a)
        if stop is not None and stop(s):
            break
    return Trajectory(np.array(states), np.array(actions))


def _room_path(layout: RoomsLayout, start: Room, goal: Room) -> list[Room]:
    prev = {start: None}
    queue = deque([start])
    while queue:
        room = queue.popleft()
        if room == goal:
            break
        for n in layout.neighbors(room):
            if n not in prev:
                prev[n] = room
                queue.append(n)
    if goal not in prev:
        raise ValueError(f"room {goal} is unreachable from {start}")
    path = [goal]
    while path[-1] != start:
        path.append(prev[path[-1]])
    return path[::-1]


def waypoint_policy(layout: RoomsLayout, goal: Room) -> Callable:
    """Hand-coded controller: follow door centres along a shortest room path to ``goal``."""
    def door_center(a: Room, b: Room) -> np.ndarray:
        return (layout.room_center(a) + layout.room_center(b)) / 2

    def act(s):
        s = np.asarray(s, dtype=float)
        here = layout.room_of(s)
        path = _room_path(layout, here, tuple(goal))
        if len(path) == 1:
            target = layout.room_center(here)
        else:
            door = door_center(path[0], path[1])
            # line up with the door before passing through it
            across = np.abs(layout.room_center(path[1]) - layout.room_center(path[0])) > 0
            off = np.abs(s - door)[~across][0]
            if off > 0.25 * layout.door_width:
                target = door.copy()
                target[across] = (door[across] + layout.room_center(path[0])[across]) / 2
            else:
                target = layout.room_center(path[1])
        d = target - s
        dist = float(np.hypot(*d))
        return np.array([min(dist, layout.max_speed), np.arctan2(d[1], d[0])])

    return act
