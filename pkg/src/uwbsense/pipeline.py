"""Glue between the simulator stages: sessions, captures and datapoint sets."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .config import PreprocessConfig, RadioConfig, TimingConfig
from .mac import RunSummary, emit_record_arrays, run_aloha
from .preprocess import DatapointSet, LinkBlocks, link_blocks, make_datapoints
from .recordio import RECORD_DTYPE
from .scene import Activity, Scene, Trajectory, sample_trajectory
from .tasks import Task

log = logging.getLogger(__name__)


@dataclass
class SimSettings:
    radio: RadioConfig = RadioConfig()
    timing: TimingConfig = TimingConfig()
    snr_db: float = 25.0
    max_order: int = 1


def simulate_records(scene: Scene, trajectories: list[Trajectory], duration: float, seed: int,
                     sim: SimSettings | None = None, summary: RunSummary | None = None,
                     t0_s: float = 0.0):
    """Yield structured record arrays for one simulated session."""
    sim = sim or SimSettings()
    events = run_aloha(scene.anchor_ids, duration, sim.timing, seed, t0_us=t0_s * 1e6)
    yield from emit_record_arrays(events, trajectories, scene, sim.radio, sim.snr_db, seed,
                                  max_order=sim.max_order, summary=summary)


def simulate_capture(scene, trajectories, duration, seed, sim=None, summary=None) -> np.ndarray:
    arrs = list(simulate_records(scene, trajectories, duration, seed, sim, summary))
    return np.concatenate(arrs) if arrs else np.zeros(0, dtype=RECORD_DTYPE)


def _concat_blocks(parts: list[dict], links) -> dict:
    out = {}
    for link in links:
        ps = [p[link] for p in parts]
        out[link] = LinkBlocks(
            np.concatenate([p.t_block for p in ps]),
            np.concatenate([p.mean for p in ps]),
            np.concatenate([p.variance for p in ps]),
        )
    return out


def session_blocks(scene: Scene, trajectories: list[Trajectory], duration: float, seed: int,
                   pp: PreprocessConfig, sim: SimSettings | None = None,
                   summary: RunSummary | None = None, segment_s: float = 60.0) -> dict:
    """Per-link block statistics for a session, simulated in bounded-memory segments.

    Blocks never straddle a segment boundary; each segment drops its own
    remainder of fewer than M records per link.
    """
    sim = sim or SimSettings()
    links = scene.links()
    parts = []
    t = 0.0
    k = 0
    while t < duration - 1e-9:
        seg = min(segment_s, duration - t)
        recs = [a for a in simulate_records(scene, trajectories, seg, seed * 1_000_003 + k, sim,
                                            summary, t0_s=t)]
        arr = np.concatenate(recs) if recs else np.zeros(0, dtype=RECORD_DTYPE)
        parts.append(link_blocks(arr, links, pp, sim.radio.preamble_length))
        t += seg
        k += 1
    return _concat_blocks(parts, links)


def build_dataset(scene: Scene, task: "Task | str", duration: float, seed: int,
                  activity: "Activity | str" = Activity.MOVING, persons: int = 1,
                  pp: PreprocessConfig | None = None, sim: SimSettings | None = None,
                  trajectories: list[Trajectory] | None = None,
                  summary: RunSummary | None = None) -> DatapointSet:
    """Simulate a session and turn it into labelled datapoints."""
    pp = pp or PreprocessConfig()
    if trajectories is None:
        trajectories = sample_trajectory(scene, duration, activity, persons, seed)
    blocks = session_blocks(scene, trajectories, duration, seed, pp, sim, summary)
    ds = make_datapoints(blocks, scene.links(), trajectories, task, pp, (0.0, duration * 1e6))
    log.debug("session seed=%d: %d datapoints, %d skipped", seed, len(ds), ds.skipped)
    return ds
