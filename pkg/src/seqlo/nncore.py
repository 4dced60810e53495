"""Network plumbing: parameter store, shared MLPs, Adam, checkpoints.

Parameters live as float64 Tensors owned by a ParamStore under unique
names. Initialization is a pure function of (name, global seed), so two
stores built the same way hold identical arrays. Checkpoints serialize
values as 32-bit little-endian floats; save -> load -> save is
byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class NumericError(RuntimeError):
    """Non-finite values or a failed numeric contract."""


def _name_rng(name: str, seed: int) -> np.random.Generator:
    words = np.frombuffer(hashlib.sha256(name.encode()).digest()[:16], dtype=np.uint32)
    return np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, *words.tolist()]))


class ParamStore:
    """Named parameters with gradient slots and Adam moment buffers."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self._params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.adam_t = 0

    def register(self, name: str, shape, init="uniform", fan_in: int | None = None) -> Tensor:
        """Create a parameter. init: 'uniform' (±sqrt(6/fan_in)), 'zeros',
        or an explicit array of matching shape."""
        if name in self._params:
            raise ValueError(f"parameter name already owned: {name}")
        shape = tuple(int(s) for s in np.atleast_1d(shape)) if not isinstance(shape, tuple) else shape
        if isinstance(init, str):
            if init == "zeros":
                data = np.zeros(shape, dtype=np.float64)
            elif init == "uniform":
                fin = fan_in if fan_in is not None else shape[0]
                bound = np.sqrt(6.0 / fin)
                data = _name_rng(name, self.seed).uniform(-bound, bound, size=shape)
            else:
                raise ValueError(f"unknown init '{init}'")
        else:
            data = np.array(init, dtype=np.float64)
            if data.shape != tuple(shape):
                raise ValueError(f"init shape {data.shape} != {tuple(shape)} for {name}")
        p = ad.parameter(data)
        self._params[name] = p
        self._m[name] = np.zeros_like(data)
        self._v[name] = np.zeros_like(data)
        return p

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def n_entries(self) -> int:
        return sum(p.data.size for p in self._params.values())

    def zero_grad(self):
        for p in self._params.values():
            p.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {n: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for n, p in self._params.items()}

    def adam_step(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                  eps: float = 1e-8):
        """One Adam update over every parameter; missing grads count as zero."""
        self.adam_t += 1
        t = self.adam_t
        c1 = 1.0 - beta1 ** t
        c2 = 1.0 - beta2 ** t
        for name, p in self._params.items():
            g = p.grad if p.grad is not None else 0.0
            m = self._m[name]
            v = self._v[name]
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * np.square(g)
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)

    def state_arrays(self):
        """(params, adam m, adam v) by name; views, not copies."""
        return self._params, self._m, self._v

    def load_values(self, params: dict[str, np.ndarray],
                    adam_m: dict[str, np.ndarray] | None = None,
                    adam_v: dict[str, np.ndarray] | None = None,
                    adam_t: int = 0):
        if set(params) != set(self._params):
            missing = set(self._params) - set(params)
            extra = set(params) - set(self._params)
            raise ValueError(f"parameter name mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, arr in params.items():
            tgt = self._params[name]
            if arr.shape != tgt.data.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} != {tgt.data.shape}")
            tgt.data = np.asarray(arr, dtype=np.float64).copy()
        if adam_m:
            for name in self._m:
                self._m[name] = np.asarray(adam_m[name], dtype=np.float64).copy()
                self._v[name] = np.asarray(adam_v[name], dtype=np.float64).copy()
        self.adam_t = int(adam_t)


def adam_step(store: ParamStore, lr: float):
    store.adam_step(lr)


def grad_of(loss: Tensor, store: ParamStore):
    """Backpropagate a scalar loss into the store's gradient slots."""
    if loss.data.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.data.shape}")
    if not np.isfinite(loss.data):
        raise NumericError(f"non-finite loss: {float(loss.data)}")
    store.zero_grad()
    loss.backward()


def lr_schedule(epoch: int, base: float = 1e-3, decay: float = 0.7,
                interval: int = 26, floor: float = 1e-5) -> float:
    """Stepwise decay: base * decay^(epoch // interval), never below floor."""
    return max(base * decay ** (epoch // interval), floor)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity in eval mode or at rate 0."""
    if not training or rate <= 0.0:
        return ad.as_tensor(x)
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    return ad.dropout(x, rate, rng)


_ACTS = {
    None: lambda t: t,
    "linear": lambda t: t,
    "relu": ad.relu,
    "tanh": ad.tanh,
    "sigmoid": ad.sigmoid,
}


class SharedMLP:
    """Stack of affine layers applied identically to every point row.

    widths = [in, out_1, ..., out_L]; activations has one tag per layer
    ('relu' | 'tanh' | 'sigmoid' | None). Used both per-point (n, d) and
    on single vectors (d,).
    """

    def __init__(self, store: ParamStore, name: str, widths, activations):
        if len(activations) != len(widths) - 1:
            raise ValueError(f"{name}: {len(widths) - 1} layers but {len(activations)} activations")
        self.name = name
        self.widths = [int(w) for w in widths]
        self.activations = list(activations)
        self.weights = []
        self.biases = []
        for i, (win, wout) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            self.weights.append(store.register(f"{name}.w{i}", (win, wout)))
            self.biases.append(store.register(f"{name}.b{i}", (wout,), init="zeros"))

    def __call__(self, x: Tensor) -> Tensor:
        x = ad.as_tensor(x)
        if x.data.shape[-1] != self.widths[0]:
            raise ValueError(f"{self.name}: input width {x.data.shape[-1]}, expected {self.widths[0]}")
        for w, b, act in zip(self.weights, self.biases, self.activations):
            x = _ACTS[act](x @ w + b)
        return x


# -- checkpoint file --------------------------------------------------

_MAGIC = b"SEQLO\x00"
_VERSION = 1


def atomic_write_bytes(path: str, payload: bytes):
    """Write via a temp file in the same directory + rename; no partial files."""
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _pack_record(name: str, arr: np.ndarray) -> bytes:
    nb = name.encode()
    head = struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.astype("<f4").tobytes()


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise ValueError("truncated checkpoint file")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def record(self) -> tuple[str, np.ndarray]:
        (nlen,) = self.unpack("<H")
        name = self.take(nlen).decode()
        (ndim,) = self.unpack("<B")
        shape = self.unpack(f"<{ndim}I")
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(self.take(4 * count), dtype="<f4").reshape(shape)
        return name, arr.astype(np.float64)


def checkpoint_save(path: str, store: ParamStore, config: dict, meta: dict | None = None):
    """Versioned binary checkpoint: header JSON + ordered float32 records
    for parameters, then the Adam state (t, first/second moments)."""
    params, m, v = store.state_arrays()
    header = json.dumps({"config": config, "meta": meta or {}, "seed": store.seed},
                        sort_keys=True).encode()
    out = [_MAGIC, struct.pack("<I", _VERSION), struct.pack("<I", len(header)), header,
           struct.pack("<I", len(params))]
    for name, p in params.items():
        out.append(_pack_record(name, p.data))
    out.append(struct.pack("<Q", store.adam_t))
    for name in params:
        out.append(_pack_record(name + ".m", m[name]))
        out.append(_pack_record(name + ".v", v[name]))
    atomic_write_bytes(path, b"".join(out))


@dataclass
class Checkpoint:
    config: dict
    meta: dict
    seed: int
    params: dict[str, np.ndarray]
    adam_t: int
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)


def checkpoint_load(path: str) -> Checkpoint:
    with open(path, "rb") as f:
        r = _Reader(f.read())
    if r.take(len(_MAGIC)) != _MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = r.unpack("<I")
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (hlen,) = r.unpack("<I")
    header = json.loads(r.take(hlen).decode())
    (count,) = r.unpack("<I")
    params = dict(r.record() for _ in range(count))
    (adam_t,) = r.unpack("<Q")
    adam_m, adam_v = {}, {}
    for _ in range(count):
        name, arr = r.record()
        adam_m[name.removesuffix(".m")] = arr
        name, arr = r.record()
        adam_v[name.removesuffix(".v")] = arr
    return Checkpoint(config=header["config"], meta=header["meta"], seed=header.get("seed", 0),
                      params=params, adam_t=adam_t, adam_m=adam_m, adam_v=adam_v)


# -- gradient contract harness ----------------------------------------


@dataclass
class GradcheckFailure:
    param: str
    index: tuple
    analytic: float
    numeric: float


@dataclass
class GradcheckReport:
    checked: int
    failures: list[GradcheckFailure]
    max_abs_diff: float
    max_rel_diff: float

    @property
    def ok(self) -> bool:
        return not self.failures


def entry_within_contract(analytic: float, numeric: float, rel_tol: float = 1e-3,
                          abs_tol: float = 1e-6, small: float = 1e-4) -> bool:
    scale = max(abs(analytic), abs(numeric))
    if scale < small:
        return abs(analytic - numeric) <= abs_tol
    return abs(analytic - numeric) <= rel_tol * scale


def gradcheck(make_loss, store: ParamStore, names=None, max_entries_per_param=None,
              step: float = 1e-5, rng: np.random.Generator | None = None) -> GradcheckReport:
    """Analytic gradients vs central finite differences.

    make_loss re-runs the forward pass from current parameter values.
    Checks every entry of the selected parameters, or a deterministic
    random subset of max_entries_per_param when given.
    """
    loss = make_loss()
    grad_of(loss, store)
    analytic = store.grads()
    names = list(names) if names is not None else store.names()
    rng = rng or np.random.default_rng(0)

    failures = []
    checked = 0
    max_abs = 0.0
    max_rel = 0.0
    for name in names:
        p = store[name]
        flat = p.data.reshape(-1)
        n = flat.shape[0]
        if max_entries_per_param is not None and n > max_entries_per_param:
            entries = np.sort(rng.choice(n, size=max_entries_per_param, replace=False))
        else:
            entries = range(n)
        a_flat = analytic[name].reshape(-1)
        for j in entries:
            old = flat[j]
            flat[j] = old + step
            f_plus = float(make_loss().data)
            flat[j] = old - step
            f_minus = float(make_loss().data)
            flat[j] = old
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = float(a_flat[j])
            checked += 1
            diff = abs(a - numeric)
            scale = max(abs(a), abs(numeric))
            max_abs = max(max_abs, diff)
            if scale >= 1e-4:  # below this the contract switches to absolute tolerance
                max_rel = max(max_rel, diff / scale)
            if not entry_within_contract(a, numeric):
                idx = np.unravel_index(j, p.data.shape)
                failures.append(GradcheckFailure(name, tuple(int(i) for i in idx), a, numeric))
    return GradcheckReport(checked=checked, failures=failures,
                           max_abs_diff=max_abs, max_rel_diff=max_rel)
