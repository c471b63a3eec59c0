"""Simplified-ALOHA beacon exchange and the CIR record stream it produces.

Every node transmits a beacon, spends ``processing_us`` shipping CIR data to
its host, then backs off for Uniform[0, backoff_max_us]. With ``wake_on_rx``
a beacon fully received during the backoff ends the wait early and the node
transmits at once; off by default because, with airtime longer than the
backoff range, it locks nodes together and most beacons collide.
Transmissions whose airtimes overlap collide and nobody hears them.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import channel
from .config import RadioConfig, TimingConfig
from .recordio import RECORD_DTYPE, CirRecord, from_array
from .scene import Scene, Trajectory


@dataclass
class BeaconEvent:
    tx_id: int
    seq: int
    t_start: float  # us
    t_airtime: float  # us
    collided: bool = False


@dataclass
class RunSummary:
    beacons: int = 0
    collided: int = 0
    records: int = 0
    dropped: int = 0
    per_link: dict = field(default_factory=dict)

    @property
    def collision_fraction(self) -> float:
        return self.collided / self.beacons if self.beacons else 0.0

    def to_text(self) -> str:
        lines = [
            f"beacons = {self.beacons}",
            f"collided = {self.collided}",
            f"collision_fraction = {self.collision_fraction:.6f}",
            f"records = {self.records}",
            f"detection_drops = {self.dropped}",
        ]
        lines += [f"link.{tx}.{rx} = {n}" for (tx, rx), n in sorted(self.per_link.items())]
        return "\n".join(lines) + "\n"


def run_aloha(node_ids, duration: float, timing: TimingConfig | None = None,
              seed: int = 0, t0_us: float = 0.0) -> list[BeaconEvent]:
    """Discrete-event simulation of the beacon schedule over ``duration`` seconds."""
    node_ids = list(node_ids)
    if len(node_ids) < 2:
        raise ValueError("need at least 2 nodes")
    if len(set(node_ids)) != len(node_ids):
        raise ValueError("node ids must be unique")
    if not duration > 0:
        raise ValueError("duration must be positive")
    timing = timing or TimingConfig()
    rng = np.random.default_rng(seed)
    end = t0_us + duration * 1e6
    air = timing.airtime_us

    # per-node state
    version = {n: 0 for n in node_ids}
    next_tx = {}
    window_open = {n: -np.inf for n in node_ids}
    seq = {n: 0 for n in node_ids}

    TX, RX_END = 1, 0  # receptions ending at t are handled before new starts at t
    heap: list = []
    counter = 0
    for n in node_ids:
        t = t0_us + rng.uniform(0.0, timing.processing_us + timing.backoff_max_us)
        next_tx[n] = t
        heapq.heappush(heap, (t, TX, counter, n, 0))
        counter += 1

    events: list[BeaconEvent] = []
    active: list[BeaconEvent] = []
    while heap:
        t, kind, _, who, ver = heapq.heappop(heap)
        if t >= end:
            break
        if kind == TX:
            if ver != version[who]:
                continue
            ev = BeaconEvent(who, seq[who], t, air)
            seq[who] = (seq[who] + 1) & 0xFFFF
            active = [a for a in active if a.t_start + a.t_airtime > t]
            for a in active:
                a.collided = True
                ev.collided = True
            active.append(ev)
            events.append(ev)
            heapq.heappush(heap, (t + air, RX_END, counter, len(events) - 1, 0))
            counter += 1
            window_open[who] = t + max(timing.processing_us, air)
            nxt = window_open[who] + rng.uniform(0.0, timing.backoff_max_us)
            version[who] += 1
            next_tx[who] = nxt
            heapq.heappush(heap, (nxt, TX, counter, who, version[who]))
            counter += 1
        else:
            ev = events[who]
            if ev.collided or not timing.wake_on_rx:
                continue
            for n in node_ids:
                if n != ev.tx_id and window_open[n] <= t < next_tx[n]:
                    version[n] += 1
                    next_tx[n] = t
                    heapq.heappush(heap, (t, TX, counter, n, version[n]))
                    counter += 1
    return events


def summarize(events: list[BeaconEvent]) -> RunSummary:
    return RunSummary(beacons=len(events), collided=sum(e.collided for e in events))


def _person_arrays(trajectories: list[Trajectory], t_s: np.ndarray):
    if not trajectories:
        return np.zeros((len(t_s), 0, 2)), np.zeros((0,))
    pos = np.stack([tr.positions_at(t_s) for tr in trajectories], axis=1)
    rcs = np.array([tr.rcs for tr in trajectories], dtype=float)
    return pos, rcs


def emit_record_arrays(
    events: list[BeaconEvent],
    trajectories: list[Trajectory],
    scene: Scene,
    cfg: RadioConfig | None = None,
    snr_db: float = 25.0,
    seed: int = 0,
    *,
    max_order: int = 1,
    chunk: int = 1024,
    summary: RunSummary | None = None,
    noise: bool = True,
) -> Iterator[np.ndarray]:
    """Bulk form of :func:`emit_records`: yields structured arrays of records.

    The scene is sampled at each beacon's start time. Persons are located by
    linear interpolation between trajectory samples.
    """
    cfg = cfg or RadioConfig()
    ids = scene.anchor_ids
    xy = {a.id: (a.x, a.y) for a in scene.anchors}
    static = {}
    for tx in ids:
        for rx in ids:
            if tx != rx:
                static[tx, rx] = channel.paths_to_arrays(
                    channel.static_paths(scene, tx, rx, max_order, cfg.carrier_frequency))
    good = [e for e in events if not e.collided]
    for i in range(1, len(good)):
        if good[i].t_start < good[i - 1].t_start:
            raise ValueError("events must be time-ordered")
    if summary is not None:
        summary.beacons += len(events)
        summary.collided += len(events) - len(good)

    for c0 in range(0, len(good), chunk):
        batch = good[c0:c0 + chunk]
        rng = np.random.default_rng([int(seed), c0 // chunk])
        tx_l, rx_l, t_l, seq_l, end_l = [], [], [], [], []
        for e in batch:
            for rx in ids:
                if rx != e.tx_id:
                    tx_l.append(e.tx_id)
                    rx_l.append(rx)
                    t_l.append(e.t_start)
                    end_l.append(e.t_start + e.t_airtime)
                    seq_l.append(e.seq)
        n = len(tx_l)
        tx_a, rx_a = np.array(tx_l), np.array(rx_l)
        t_us = np.array(t_l)
        ppos, rcs = _person_arrays(trajectories, t_us * 1e-6)
        n_static = len(next(iter(static.values()))[0])
        n_paths = n_static + len(rcs)
        delays = np.zeros((n, n_paths))
        gains = np.zeros((n, n_paths), dtype=complex)
        for (tx, rx), (d, g) in static.items():
            sel = (tx_a == tx) & (rx_a == rx)
            if not sel.any():
                continue
            delays[sel, :n_static] = d
            gains[sel, :n_static] = g
            if len(rcs):
                pd, pg = channel.scatter_arrays(xy[tx], xy[rx], ppos[sel], rcs, cfg.carrier_frequency)
                delays[sel, n_static:] = pd
                gains[sel, n_static:] = pg
        pc = cfg.preamble_length - rng.integers(0, cfg.pac_size, size=n)
        phase = rng.uniform(0.0, 1.0, size=n) if cfg.random_sampling_phase else np.zeros(n)
        offset = (cfg.fp_nominal_index + phase) * cfg.sample_spacing
        cir = channel.synthesize_batch(delays, gains, cfg, snr_db, rng, noise=noise,
                                       timing_offset=offset, preamble_count=pc)
        keep = cir.detected
        out = np.zeros(int(keep.sum()), dtype=RECORD_DTYPE)
        ts = np.rint(np.array(end_l)[keep]).astype(np.int64)
        out["seq"] = np.array(seq_l)[keep]
        out["fp_index"] = cir.fp_index[keep]
        out["fp_frac"] = cir.fp_frac[keep]
        out["preamble_count"] = cir.preamble_count[keep]
        out["tx_id"] = tx_a[keep]
        out["rx_id"] = rx_a[keep]
        out["ts_lo"] = ts & 0xFFFFFFFF
        out["ts_hi"] = ts >> 32
        out["samples"] = cir.samples[keep]
        if summary is not None:
            summary.records += len(out)
            summary.dropped += n - len(out)
            for tx, rx in zip(out["tx_id"], out["rx_id"]):
                key = (int(tx), int(rx))
                summary.per_link[key] = summary.per_link.get(key, 0) + 1
        yield out


def emit_records(events, trajectories, scene, cfg=None, snr_db=25.0, seed=0, *,
                 summary: RunSummary | None = None, **kw) -> Iterator[CirRecord]:
    """One record per other node for every non-collided beacon.

    Receptions that fail leading-edge detection are skipped and counted in
    ``summary.dropped``.
    """
    for arr in emit_record_arrays(events, trajectories, scene, cfg, snr_db, seed,
                                  summary=summary, **kw):
        yield from from_array(arr)
