"""Multipath CIR synthesis with DW1000-style sampling and first-path reporting.

The channel between two anchors is a sum of delayed, scaled copies of a
band-limited pulse: the direct path, image-method wall reflections and one
bistatic scatter path per person. Synthesis renders that sum on the receiver's
sample grid, adds noise, locates the first path and cuts the reported window.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .config import RadioConfig
from .scene import PersonState, Scene

C_M_PER_NS = 0.299792458
MIN_LEG_M = 0.1


class ChannelError(ValueError):
    pass


class DegenerateInputError(ChannelError):
    """Every path gain is zero, so there is nothing to render."""


class DetectionFailure(ChannelError):
    """No CIR sample crossed the leading-edge threshold."""


class PathKind(enum.Enum):
    LINE_OF_SIGHT = "los"
    WALL_REFLECTION = "wall"
    PERSON_SCATTER = "person"


@dataclass(frozen=True)
class PathComponent:
    delay: float  # ns
    gain: complex
    kind: PathKind
    order: int = 0
    person_id: int | None = None


@dataclass(frozen=True, eq=False)
class RawCir:
    samples: np.ndarray  # (window_length, 2) int16, real/imag
    fp_index: int
    fp_frac: int
    preamble_count: int
    noise_floor: float

    def complex(self) -> np.ndarray:
        return self.samples[:, 0].astype(float) + 1j * self.samples[:, 1]

    def __eq__(self, other):
        if not isinstance(other, RawCir):
            return NotImplemented
        return (np.array_equal(self.samples, other.samples)
                and (self.fp_index, self.fp_frac, self.preamble_count, self.noise_floor)
                == (other.fp_index, other.fp_frac, other.preamble_count, other.noise_floor))


def pulse(t_ns, bandwidth_mhz: float = 499.2, rolloff: float = 0.25) -> np.ndarray:
    """Raised-cosine tapered sinc with unit peak; ``t_ns`` in nanoseconds."""
    bt = np.asarray(t_ns, dtype=float) * (bandwidth_mhz * 1e-3)
    if rolloff == 0:
        return np.sinc(bt)
    den = 1.0 - (2.0 * rolloff * bt) ** 2
    edge = np.abs(den) < 1e-10
    safe = np.where(edge, 1.0, den)
    out = np.sinc(bt) * np.cos(np.pi * rolloff * bt) / safe
    if np.any(edge):
        out = np.where(edge, np.pi / 4 * np.sinc(1.0 / (2.0 * rolloff)), out)
    return out


def _phase(delay_ns, carrier_mhz):
    return np.exp(-2j * np.pi * carrier_mhz * 1e-3 * np.asarray(delay_ns))


def wall_images(x: float, y: float, width: float, length: float, max_order: int):
    """Image-source positions of ``(x, y)`` as ``(ix, iy, order)`` tuples."""
    if max_order not in (0, 1, 2):
        raise ValueError(f"max_order must be 0, 1 or 2, got {max_order}")
    out = []
    if max_order >= 1:
        out += [(-x, y, 1), (2 * width - x, y, 1), (x, -y, 1), (x, 2 * length - y, 1)]
    if max_order >= 2:
        out += [
            (2 * width + x, y, 2), (x - 2 * width, y, 2),
            (x, 2 * length + y, 2), (x, y - 2 * length, 2),
            (-x, -y, 2), (-x, 2 * length - y, 2),
            (2 * width - x, -y, 2), (2 * width - x, 2 * length - y, 2),
        ]
    return out


def static_paths(scene: Scene, tx: int, rx: int, max_order: int = 1,
                 carrier_mhz: float = 6489.6) -> list[PathComponent]:
    if tx == rx:
        raise ChannelError("tx and rx must differ")
    a, b = scene.anchor(tx), scene.anchor(rx)
    d = float(np.hypot(a.x - b.x, a.y - b.y))
    delay = d / C_M_PER_NS
    paths = [PathComponent(delay, complex(_phase(delay, carrier_mhz) / d), PathKind.LINE_OF_SIGHT)]
    for ix, iy, order in wall_images(a.x, a.y, scene.room_width, scene.room_length, max_order):
        length = float(np.hypot(ix - b.x, iy - b.y))
        delay = length / C_M_PER_NS
        gain = scene.wall_reflectivity**order / length * _phase(delay, carrier_mhz)
        paths.append(PathComponent(delay, complex(gain), PathKind.WALL_REFLECTION, order))
    return paths


def scatter_arrays(tx_xy, rx_xy, person_xy, rcs, carrier_mhz: float = 6489.6):
    """Bistatic delays and gains for arrays of person positions (..., 2)."""
    person_xy = np.asarray(person_xy, dtype=float)
    d1 = np.maximum(np.hypot(person_xy[..., 0] - tx_xy[0], person_xy[..., 1] - tx_xy[1]), MIN_LEG_M)
    d2 = np.maximum(np.hypot(person_xy[..., 0] - rx_xy[0], person_xy[..., 1] - rx_xy[1]), MIN_LEG_M)
    delay = (d1 + d2) / C_M_PER_NS
    gain = np.asarray(rcs) / (d1 * d2) * _phase(delay, carrier_mhz)
    return delay, gain


def enumerate_paths(scene: Scene, tx: int, rx: int, persons: list[PersonState],
                    max_order: int = 1, carrier_mhz: float = 6489.6) -> list[PathComponent]:
    paths = static_paths(scene, tx, rx, max_order, carrier_mhz)
    a, b = scene.anchor(tx), scene.anchor(rx)
    for pid, p in enumerate(persons):
        delay, gain = scatter_arrays((a.x, a.y), (b.x, b.y), p.position, p.rcs, carrier_mhz)
        paths.append(PathComponent(float(delay), complex(gain), PathKind.PERSON_SCATTER, 0, pid))
    return paths


def render(delays, gains, times, cfg: RadioConfig) -> np.ndarray:
    """Continuous CIR sum evaluated at ``times``.

    delays, gains: (R, P); times: (R, W), all in ns. Returns (R, W) complex.
    """
    lag = times[:, :, None] - delays[:, None, :]
    return np.einsum("rwp,rp->rw", pulse(lag, cfg.bandwidth, cfg.rolloff), gains)


@dataclass(eq=False)
class CirBatch:
    samples: np.ndarray  # (R, W, 2) int16
    fp_index: np.ndarray  # (R,) int
    fp_frac: np.ndarray  # (R,) int
    preamble_count: np.ndarray  # (R,) int
    noise_floor: np.ndarray  # (R,) float, LSB
    detected: np.ndarray  # (R,) bool

    def __len__(self):
        return len(self.fp_index)


def synthesize_batch(
    delays,
    gains,
    cfg: RadioConfig,
    snr_db: float,
    rng: np.random.Generator | None = None,
    *,
    noise: bool = True,
    timing_offset=None,
    preamble_count=None,
    scale=None,
    window_start=None,
    quantize: bool = True,
):
    """Vectorised CIR synthesis for R receptions with up to P paths each.

    Missing paths are padded with zero gain. ``timing_offset`` (ns) shifts the
    arrivals against the receiver sample grid; ``scale`` and ``window_start``
    override the automatic full-scale gain and first-path window placement.
    With ``quantize=False`` the unrounded complex window is returned instead.
    """
    if not np.isfinite(snr_db):
        raise ValueError("snr_db must be finite")
    delays = np.atleast_2d(np.asarray(delays, dtype=float))
    gains = np.atleast_2d(np.asarray(gains, dtype=complex))
    n = delays.shape[0]
    if rng is None:
        rng = np.random.default_rng(0)
    amp = np.abs(gains)
    strongest = amp.max(axis=1) if amp.size else np.zeros(n)
    if np.any(strongest == 0):
        raise DegenerateInputError("all path gains are zero")

    ts = cfg.sample_spacing
    pc = np.full(n, cfg.preamble_length) if preamble_count is None else np.asarray(preamble_count)
    acc = pc / cfg.preamble_length
    full_scale = cfg.full_scale_fraction * 32767.0 * acc
    if scale is None:
        scale = full_scale / strongest
    scale = np.broadcast_to(np.asarray(scale, dtype=float), (n,))
    sigma = full_scale * 10.0 ** (-snr_db / 20.0)
    thr = cfg.detect_threshold * sigma

    # first path = earliest arrival whose pulse peak clears the threshold
    visible = amp * scale[:, None] > thr[:, None]
    has_visible = visible.any(axis=1)
    fp_delay = np.where(visible, delays, np.inf).min(axis=1)
    fp_delay = np.where(has_visible, fp_delay, np.where(amp > 0, delays, np.inf).min(axis=1))

    offset = np.zeros(n) if timing_offset is None else np.broadcast_to(
        np.asarray(timing_offset, dtype=float), (n,))
    fp_pos = (fp_delay + offset) / ts
    idx = np.floor(fp_pos).astype(np.int64)
    q = np.rint(64.0 * (fp_pos - idx)).astype(np.int64)
    if cfg.fp_dither:
        q = q + rng.integers(-cfg.fp_dither, cfg.fp_dither + 1, size=n)
    idx += np.floor_divide(q, 64)
    q = np.mod(q, 64)

    w = cfg.window_length
    start = idx - cfg.pre_fp_samples if window_start is None else np.broadcast_to(
        np.asarray(window_start, dtype=np.int64), (n,))
    if np.any(start < 0) or np.any(start + w > cfg.buffer_length):
        raise ChannelError("reported window falls outside the CIR buffer; adjust timing_offset")
    times = (start[:, None] + np.arange(w)[None, :]) * ts - offset[:, None]
    h = render(delays, gains, times, cfg) * scale[:, None]
    if noise:
        h = h + (sigma[:, None] / np.sqrt(2.0)) * (
            rng.standard_normal((n, w)) + 1j * rng.standard_normal((n, w)))
    detected = (np.abs(h) > thr[:, None]).any(axis=1)
    if not quantize:
        return h
    samples = np.empty((n, w, 2), dtype=np.int16)
    samples[..., 0] = np.clip(np.rint(h.real), -32768, 32767)
    samples[..., 1] = np.clip(np.rint(h.imag), -32768, 32767)
    return CirBatch(samples, idx, q, pc.astype(np.int64), sigma, detected)


def paths_to_arrays(paths: list[PathComponent]):
    delays = np.array([p.delay for p in paths], dtype=float)
    gains = np.array([p.gain for p in paths], dtype=complex)
    return delays, gains


def synthesize_cir(
    paths: list[PathComponent],
    cfg: RadioConfig,
    snr_db: float,
    rng: np.random.Generator,
    *,
    noise: bool = True,
    timing_offset: float = 0.0,
    preamble_count: int | None = None,
    scale: float | None = None,
    window_start: int | None = None,
) -> RawCir:
    """Render one reception; raises on degenerate input or failed detection."""
    if not paths:
        raise DegenerateInputError("no paths to synthesize")
    delays, gains = paths_to_arrays(paths)
    b = synthesize_batch(
        delays[None], gains[None], cfg, snr_db, rng, noise=noise,
        timing_offset=timing_offset, preamble_count=preamble_count,
        scale=scale, window_start=window_start,
    )
    if not b.detected[0]:
        raise DetectionFailure(f"no sample above {cfg.detect_threshold}x noise floor")
    return RawCir(b.samples[0], int(b.fp_index[0]), int(b.fp_frac[0]),
                  int(b.preamble_count[0]), float(b.noise_floor[0]))
