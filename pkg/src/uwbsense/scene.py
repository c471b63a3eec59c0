"""Room geometry, anchor placement and simulated person trajectories."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from itertools import permutations
from pathlib import Path

import numpy as np

from .config import AnchorPose, ConfigError, SceneConfig

SAMPLE_PERIOD = 0.1  # s
MAX_PERSONS = 4
MOVING_SPEED = (0.3, 2.0)
STATIONARY_MAX_SPEED = 0.05
WALL_MARGIN = 0.3  # keeps one full step (<= 0.2 m) away from every wall


class Activity(enum.IntEnum):
    MOVING = 0
    STANDING = 1
    SITTING = 2

    @classmethod
    def parse(cls, value: "str | int | Activity") -> "Activity":
        if isinstance(value, str):
            try:
                return cls[value.strip().upper()]
            except KeyError:
                raise ValueError(f"unknown activity {value!r}") from None
        return cls(value)


class OutOfRangeError(ValueError):
    """A ground-truth query fell outside the trajectory time span."""


@dataclass(frozen=True)
class Scene:
    room_width: float
    room_length: float
    wall_reflectivity: float
    anchors: tuple[AnchorPose, ...]
    rng_seed: int = 0
    person_rcs: float = 0.4
    sitting_rcs_factor: float = 0.6

    @property
    def anchor_ids(self) -> list[int]:
        return [a.id for a in self.anchors]

    def anchor(self, anchor_id: int) -> AnchorPose:
        for a in self.anchors:
            if a.id == anchor_id:
                return a
        raise KeyError(f"unknown anchor id {anchor_id}")

    def links(self) -> list[tuple[int, int]]:
        """Directed (tx, rx) pairs in a fixed order."""
        return list(permutations(self.anchor_ids, 2))

    def contains(self, x, y) -> bool:
        return bool(np.all((x > 0) & (x < self.room_width) & (y > 0) & (y < self.room_length)))

    def rcs_for(self, activity: Activity) -> float:
        if activity == Activity.SITTING:
            return self.person_rcs * self.sitting_rcs_factor
        return self.person_rcs


def build_scene(config: SceneConfig) -> Scene:
    if config.room_width <= 0 or config.room_length <= 0:
        raise ConfigError("room dimensions must be positive")
    if not 0.0 <= config.wall_reflectivity <= 1.0:
        raise ConfigError("wall_reflectivity must lie in [0, 1]")
    if config.person_rcs <= 0 or config.sitting_rcs_factor <= 0:
        raise ConfigError("rcs values must be positive")
    anchors = tuple(config.anchors)
    if len(anchors) < 2:
        raise ConfigError(f"need at least 2 anchors, got {len(anchors)}")
    ids = [a.id for a in anchors]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"anchor ids must be unique: {ids}")
    for a in anchors:
        if not (0 < a.x < config.room_width and 0 < a.y < config.room_length):
            raise ConfigError(f"anchor {a.id} at ({a.x}, {a.y}) is outside the room")
        if not 0 <= a.id < 2**16:
            raise ConfigError(f"anchor id {a.id} does not fit in 16 bits")
    return Scene(
        room_width=float(config.room_width),
        room_length=float(config.room_length),
        wall_reflectivity=float(config.wall_reflectivity),
        anchors=anchors,
        rng_seed=int(config.rng_seed),
        person_rcs=float(config.person_rcs),
        sitting_rcs_factor=float(config.sitting_rcs_factor),
    )


@dataclass(frozen=True)
class PersonState:
    position: tuple[float, float]
    velocity: tuple[float, float]
    activity: Activity
    rcs: float

    @property
    def speed(self) -> float:
        return float(np.hypot(*self.velocity))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Sampled path of one person.

    ``velocities[k]`` is the velocity that carries ``positions[k]`` to
    ``positions[k + 1]``; the last entry repeats the previous one.
    """

    person_id: int
    times: np.ndarray  # (n,) seconds
    positions: np.ndarray  # (n, 2) meters
    velocities: np.ndarray  # (n, 2) m/s
    activity: Activity
    rcs: float
    sample_period: float = SAMPLE_PERIOD

    def __len__(self) -> int:
        return len(self.times)

    def state(self, k: int) -> PersonState:
        return PersonState(
            position=(float(self.positions[k, 0]), float(self.positions[k, 1])),
            velocity=(float(self.velocities[k, 0]), float(self.velocities[k, 1])),
            activity=self.activity,
            rcs=self.rcs,
        )

    @property
    def samples(self) -> list[tuple[float, PersonState]]:
        return [(float(t), self.state(k)) for k, t in enumerate(self.times)]

    def nearest_index(self, t) -> np.ndarray:
        """Index of the nearest sample; ties go to the earlier one."""
        t = np.asarray(t, dtype=float)
        hi = np.clip(np.searchsorted(self.times, t, side="left"), 1, len(self.times) - 1)
        lo = hi - 1
        take_lo = (t - self.times[lo]) <= (self.times[hi] - t)
        return np.where(take_lo, lo, hi)

    def positions_at(self, t) -> np.ndarray:
        """Piecewise-linear position at arbitrary times (exact under the velocity model)."""
        t = np.asarray(t, dtype=float)
        k = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 1)
        dt = t - self.times[k]
        return self.positions[k] + self.velocities[k] * dt[..., None]


def _stationary(rng, scene, n, dt, jitter_rms=0.002, corr=0.98):
    center = np.array([
        rng.uniform(WALL_MARGIN, scene.room_width - WALL_MARGIN),
        rng.uniform(WALL_MARGIN, scene.room_length - WALL_MARGIN),
    ])
    # AR(1) sway around a fixed point
    jitter = np.empty((n, 2))
    jitter[0] = rng.normal(0.0, jitter_rms, 2)
    innov = rng.normal(0.0, jitter_rms * np.sqrt(1 - corr**2), (n, 2))
    for k in range(1, n):
        jitter[k] = corr * jitter[k - 1] + innov[k]
    step = np.diff(jitter, axis=0)
    cap = STATIONARY_MAX_SPEED * 0.9 * dt
    norms = np.hypot(step[:, 0], step[:, 1])
    step *= np.minimum(1.0, cap / np.maximum(norms, 1e-300))[:, None]
    pos = center + np.vstack([jitter[:1], jitter[:1] + np.cumsum(step, axis=0)])
    return pos


def _moving(rng, scene, n, dt, mean_speed=1.0, speed_sigma=0.35, speed_tau=3.0,
            turn_sigma=1.2, turn_tau=1.5):
    lo, hi = MOVING_SPEED
    x_lo, x_hi = WALL_MARGIN, scene.room_width - WALL_MARGIN
    y_lo, y_hi = WALL_MARGIN, scene.room_length - WALL_MARGIN
    pos = np.empty((n, 2))
    pos[0] = rng.uniform(x_lo, x_hi), rng.uniform(y_lo, y_hi)
    heading = rng.uniform(-np.pi, np.pi)
    speed = float(np.clip(rng.normal(mean_speed, speed_sigma), lo, hi))
    turn = 0.0
    a_s, a_t = np.exp(-dt / speed_tau), np.exp(-dt / turn_tau)
    noise = rng.normal(size=(n, 2))
    for k in range(n - 1):
        vx, vy = speed * np.cos(heading), speed * np.sin(heading)
        nx, ny = pos[k, 0] + vx * dt, pos[k, 1] + vy * dt
        # reflect the velocity before stepping so the displacement stays v*dt
        if not x_lo <= nx <= x_hi:
            vx = -vx
        if not y_lo <= ny <= y_hi:
            vy = -vy
        heading = np.arctan2(vy, vx)
        pos[k + 1] = pos[k, 0] + vx * dt, pos[k, 1] + vy * dt
        speed = mean_speed + a_s * (speed - mean_speed) + speed_sigma * np.sqrt(1 - a_s**2) * noise[k, 0]
        speed = float(np.clip(speed, lo, hi))
        turn = a_t * turn + turn_sigma * np.sqrt(1 - a_t**2) * noise[k, 1]
        heading += turn * dt
    return pos


def sample_trajectory(
    scene: Scene,
    duration: float,
    activity: "Activity | str",
    count: int = 1,
    seed: int = 0,
    *,
    max_count: int = MAX_PERSONS,
    sample_period: float = SAMPLE_PERIOD,
    t0: float = 0.0,
) -> list[Trajectory]:
    """Random trajectories for ``count`` people doing the same activity.

    Moving people follow a smooth random walk (Ornstein-Uhlenbeck speed and
    turn rate) with velocity reflection at the walls; standing and sitting
    people sway by a few millimetres around a uniformly drawn spot.
    """
    if not duration > 0:
        raise ValueError(f"duration must be positive, got {duration}")
    if not 1 <= count <= max_count:
        raise ValueError(f"person count must be in [1, {max_count}], got {count}")
    activity = Activity.parse(activity)
    n = int(np.floor(duration / sample_period + 1e-9)) + 1
    times = t0 + np.arange(n) * sample_period
    out = []
    for pid in range(count):
        rng = np.random.default_rng([int(seed), pid])
        if activity == Activity.MOVING:
            pos = _moving(rng, scene, n, sample_period)
        else:
            pos = _stationary(rng, scene, n, sample_period)
        vel = np.empty_like(pos)
        if n > 1:
            vel[:-1] = np.diff(pos, axis=0) / sample_period
            vel[-1] = vel[-2]
        else:
            vel[:] = 0.0
        out.append(Trajectory(pid, times, pos, vel, activity, scene.rcs_for(activity), sample_period))
    return out


def ground_truth_at(trajectories: list[Trajectory], t: float) -> list[PersonState]:
    """Per-person state whose timestamp is nearest ``t`` (ties toward earlier)."""
    states = []
    for tr in trajectories:
        if not tr.times[0] - tr.sample_period <= t <= tr.times[-1] + tr.sample_period:
            raise OutOfRangeError(
                f"t={t} outside [{tr.times[0]}, {tr.times[-1]}] +- {tr.sample_period}")
        states.append(tr.state(int(tr.nearest_index(t))))
    return states


# --- truth file ----------------------------------------------------------------------
#
# CSV with header person_id,t_s,x,y,vx,vy,activity,rcs; one row per person
# per sample. Floats are written with 17 significant digits so a round trip
# reproduces the trajectories bit for bit.

TRUTH_COLUMNS = ("person_id", "t_s", "x", "y", "vx", "vy", "activity", "rcs")


def write_truth(path: str | Path, trajectories: list[Trajectory]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRUTH_COLUMNS)
        for tr in trajectories:
            act = tr.activity.name.lower()
            for k in range(len(tr)):
                w.writerow([tr.person_id, f"{tr.times[k]:.17g}", f"{tr.positions[k, 0]:.17g}",
                            f"{tr.positions[k, 1]:.17g}", f"{tr.velocities[k, 0]:.17g}",
                            f"{tr.velocities[k, 1]:.17g}", act, f"{tr.rcs:.17g}"])


def read_truth(path: str | Path) -> list[Trajectory]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != TRUTH_COLUMNS:
            raise ValueError(f"{path}: not a truth file (header {header})")
        rows: dict[int, list] = {}
        for lineno, row in enumerate(reader, 2):
            if len(row) != len(TRUTH_COLUMNS):
                raise ValueError(f"{path}:{lineno}: expected {len(TRUTH_COLUMNS)} fields")
            rows.setdefault(int(row[0]), []).append(row)
    if not rows:
        raise ValueError(f"{path}: no trajectory samples")
    out = []
    for pid in sorted(rows):
        r = rows[pid]
        num = np.array([[float(v) for v in row[1:6]] for row in r])
        times = num[:, 0]
        if len(times) > 1 and np.any(np.diff(times) <= 0):
            raise ValueError(f"{path}: person {pid} timestamps are not increasing")
        period = float(np.median(np.diff(times))) if len(times) > 1 else SAMPLE_PERIOD
        out.append(Trajectory(pid, times, num[:, 1:3].copy(), num[:, 3:5].copy(),
                              Activity.parse(r[0][6]), float(r[0][7]), period))
    return out
