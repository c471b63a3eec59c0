"""Two-stream convolutional estimator and its checkpoint format."""

from __future__ import annotations

import copy
import hashlib
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..tasks import Task
from .layers import BatchNorm1d, Conv1d, Dense, Layer, MaxPool1d, ReLU, Sequential


@dataclass(frozen=True)
class ArchConfig:
    links: int = 12
    c: int = 4
    n: int = 500
    channels: tuple[int, ...] = (16, 32, 64)
    kernel: int = 7
    pool: int = 4
    hidden: tuple[int, ...] = (256, 64)
    version: int = 1

    def stream_out(self) -> int:
        n = self.n
        for _ in self.channels:
            n //= self.pool
        if n < 1:
            raise ValueError("input too short for the pooling stack")
        return self.channels[-1] * n

    def digest(self) -> int:
        text = repr(sorted(asdict(self).items()))
        return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")


def _stream(arch: ArchConfig, rng, dtype) -> Sequential:
    layers: list[Layer] = []
    c_in = arch.links * arch.c
    for c_out in arch.channels:
        layers += [Conv1d(c_in, c_out, arch.kernel, rng, dtype), BatchNorm1d(c_out, dtype=dtype),
                   ReLU(), MaxPool1d(arch.pool)]
        c_in = c_out
    return Sequential(layers)


class TwoStreamNet:
    """Mean-plane and variance-plane convolution stacks fused by a dense head.

    Input: (B, links, 2, C, n). Each plane is folded to (B, links*C, n) so the
    links and the C blocks act as input channels of the first convolution.
    """

    def __init__(self, task: "Task | str", arch: ArchConfig | None = None, seed: int = 0,
                 dtype=np.float32):
        self.task = Task.parse(task)
        self.arch = arch or ArchConfig()
        rng = np.random.default_rng(seed)
        self.mean_stream = _stream(self.arch, rng, dtype)
        self.var_stream = _stream(self.arch, rng, dtype)
        widths = [2 * self.arch.stream_out(), *self.arch.hidden]
        head: list[Layer] = []
        for a, b in zip(widths[:-1], widths[1:]):
            head += [Dense(a, b, rng, dtype=dtype), ReLU()]
        head.append(Dense(widths[-1], self.task.out_width, rng, gain=1.0, dtype=dtype))
        self.head = Sequential(head)
        self.dtype = np.dtype(dtype)

    # -- parameter access ---------------------------------------------------------
    def layers(self) -> list[tuple[str, Layer]]:
        out = []
        for prefix, seq in (("mean", self.mean_stream), ("var", self.var_stream), ("head", self.head)):
            for i, layer in enumerate(seq.layers):
                out.append((f"{prefix}.{i}", layer))
        return out

    def parameters(self) -> list[tuple[str, Layer, str]]:
        """(name, layer, key) for every trainable array, in a fixed order."""
        return [(f"{name}.{k}", layer, k) for name, layer in self.layers() for k in layer.params]

    def state(self) -> list[tuple[str, np.ndarray]]:
        """Every saved array (parameters, then batch-norm buffers) in a fixed order."""
        out = [(n, layer.params[k]) for n, layer, k in self.parameters()]
        for name, layer in self.layers():
            for k, v in layer.buffers().items():
                out.append((f"{name}.{k}", v))
        return out

    def flat_state(self) -> np.ndarray:
        return np.concatenate([np.asarray(v, dtype=np.float64).ravel() for _, v in self.state()])

    def load_flat_state(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        pos = 0
        for name, layer in self.layers():
            for k, v in layer.params.items():
                layer.params[k] = flat[pos:pos + v.size].reshape(v.shape).astype(v.dtype)
                pos += v.size
        for name, layer in self.layers():
            for k, v in layer.buffers().items():
                setattr(layer, k, flat[pos:pos + v.size].reshape(v.shape).copy())
                pos += v.size
        if pos != flat.size:
            raise ValueError(f"state size mismatch: expected {pos}, got {flat.size}")

    def astype(self, dtype) -> "TwoStreamNet":
        for _, layer in self.layers():
            layer.astype(dtype)
        self.dtype = np.dtype(dtype)
        return self

    def copy(self) -> "TwoStreamNet":
        return copy.deepcopy(self)

    def num_parameters(self) -> int:
        return sum(layer.params[k].size for _, layer, k in self.parameters())

    # -- computation ----------------------------------------------------------------
    def _split(self, x):
        x = np.asarray(x, dtype=self.dtype)
        a = self.arch
        if x.ndim != 5 or x.shape[1:] != (a.links, 2, a.c, a.n):
            raise ValueError(f"expected input (B, {a.links}, 2, {a.c}, {a.n}), got {x.shape}")
        b = x.shape[0]
        return (x[:, :, 0].reshape(b, a.links * a.c, a.n),
                x[:, :, 1].reshape(b, a.links * a.c, a.n))

    def forward(self, x, train: bool = False) -> np.ndarray:
        mean, var = self._split(x)
        fm = self.mean_stream.forward(mean, train)
        fv = self.var_stream.forward(var, train)
        self._flat_shapes = (fm.shape, fv.shape)
        feats = np.concatenate([fm.reshape(len(fm), -1), fv.reshape(len(fv), -1)], axis=1)
        return self.head.forward(feats, train)

    def backward(self, dout) -> np.ndarray:
        """Back-propagate d(loss)/d(output); fills every layer's ``grads``."""
        dfeat = self.head.backward(dout)
        sm, sv = self._flat_shapes
        k = int(np.prod(sm[1:]))
        dm = self.mean_stream.backward(dfeat[:, :k].reshape(sm))
        dv = self.var_stream.backward(dfeat[:, k:].reshape(sv))
        a = self.arch
        b = dm.shape[0]
        dx = np.zeros((b, a.links, 2, a.c, a.n), dtype=dm.dtype)
        dx[:, :, 0] = dm.reshape(b, a.links, a.c, a.n)
        dx[:, :, 1] = dv.reshape(b, a.links, a.c, a.n)
        return dx

    def predict(self, x, batch_size: int = 64) -> np.ndarray:
        outs = [self.forward(x[i:i + batch_size], train=False) for i in range(0, len(x), batch_size)]
        if not outs:
            return np.zeros((0, self.task.out_width), dtype=self.dtype)
        return np.concatenate(outs)


def init_model(task: "Task | str", arch: ArchConfig | None = None, seed: int = 0,
               dtype=np.float32) -> TwoStreamNet:
    return TwoStreamNet(task, arch, seed, dtype)


def forward(model: TwoStreamNet, x, mode: str = "eval") -> np.ndarray:
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    x = np.asarray(x)
    single = x.ndim == 4
    out = model.forward(x[None] if single else x, train=mode == "train")
    return out[0] if single else out


# --- checkpoint file -------------------------------------------------------------
#
# header: magic "UWBM", version u16, task u16, arch hash u64, epoch u32,
#         links u32, C u32, n u32, kernel u32, pool u32, n_channels u32,
#         n_hidden u32, channels[n_channels] u32, hidden[n_hidden] u32,
#         state length u64
# body:   state length x f64 (parameters in layer order, then batch-norm buffers)

_CK_HEAD = struct.Struct("<4sHHQIIIIIIII")
CK_MAGIC = b"UWBM"


def save_checkpoint(path: str | Path, model: TwoStreamNet, epoch: int = 0) -> None:
    a = model.arch
    flat = model.flat_state()
    with open(path, "wb") as fh:
        fh.write(_CK_HEAD.pack(CK_MAGIC, 1, model.task.code, a.digest(), epoch, a.links, a.c, a.n,
                               a.kernel, a.pool, len(a.channels), len(a.hidden)))
        fh.write(struct.pack(f"<{len(a.channels)}I", *a.channels))
        fh.write(struct.pack(f"<{len(a.hidden)}I", *a.hidden))
        fh.write(struct.pack("<Q", flat.size))
        fh.write(flat.astype("<f8").tobytes())


def load_checkpoint(path: str | Path, dtype=np.float32) -> tuple[TwoStreamNet, int]:
    data = Path(path).read_bytes()
    if len(data) < _CK_HEAD.size or data[:4] != CK_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (_, version, task, digest, epoch, links, c, n, kernel, pool,
     n_ch, n_hid) = _CK_HEAD.unpack_from(data)
    pos = _CK_HEAD.size
    channels = struct.unpack_from(f"<{n_ch}I", data, pos)
    pos += 4 * n_ch
    hidden = struct.unpack_from(f"<{n_hid}I", data, pos)
    pos += 4 * n_hid
    (size,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    arch = ArchConfig(links, c, n, tuple(channels), kernel, pool, tuple(hidden))
    if arch.digest() != digest:
        raise ValueError(f"{path}: architecture hash mismatch")
    model = TwoStreamNet(Task.from_code(task), arch, 0, dtype)
    flat = np.frombuffer(data, dtype="<f8", count=size, offset=pos)
    model.load_flat_state(flat)
    return model, epoch
