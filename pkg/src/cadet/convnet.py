"""Small layered convolutional network, written directly in numpy.

Topology: [conv -> ReLU -> max-pool] x n, [locally-connected -> ReLU] x m,
[fully-connected(+DropConnect) -> ReLU] x k, linear classifier, softmax.
The same code runs 2D patches (channels, H, W) and 3D cubes
(channels, D, H, W); kernels and pooling windows are square/cubic.

Training-time DropConnect masks fully-connected weights per example;
at test time weights are scaled by the keep probability (mean-field
inference), so predictions are deterministic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import InvalidArgumentError, TrainingDivergedError
from .seeding import rng_for

_O_LETTERS = "xyz"
_K_LETTERS = "uvw"


@dataclass(frozen=True)
class ConvLayerSpec:
    n_filters: int
    kernel: int
    stride: int = 1
    padding: int = 0


@dataclass(frozen=True)
class LocalLayerSpec:
    n_filters: int
    kernel: int


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture description; shapes are validated to chain consistently."""

    input_spatial: tuple[int, ...] = (32, 32)
    input_channels: int = 3
    conv: tuple[ConvLayerSpec, ...] = (ConvLayerSpec(64, 5, 1, 2), ConvLayerSpec(64, 5, 1, 2))
    pool: Optional[tuple[int, int]] = (3, 2)  # (window, stride) after every conv
    locally_connected: tuple[LocalLayerSpec, ...] = (LocalLayerSpec(32, 3), LocalLayerSpec(32, 3))
    fully_connected: tuple[int, ...] = (256,)
    n_classes: int = 2
    dropconnect_rate: float = 0.5
    dropconnect_inference: str = "mean_field"  # "mean_field" | "sample"
    sigma_init: float = 0.01
    dtype: str = "float32"

    def __post_init__(self):
        if len(self.input_spatial) not in (2, 3) or min(self.input_spatial) < 1:
            raise InvalidArgumentError(f"input_spatial must be 2D or 3D, got {self.input_spatial}")
        if self.input_channels < 1:
            raise InvalidArgumentError("input_channels must be >= 1")
        if self.n_classes != 2:
            raise InvalidArgumentError(f"this classifier is binary, got n_classes={self.n_classes}")
        if not 0.0 <= self.dropconnect_rate < 1.0:
            raise InvalidArgumentError(f"dropconnect_rate must be in [0,1), got {self.dropconnect_rate}")
        if self.dropconnect_inference not in ("mean_field", "sample"):
            raise InvalidArgumentError(f"bad dropconnect_inference {self.dropconnect_inference!r}")
        if self.dtype not in ("float32", "float64"):
            raise InvalidArgumentError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.sigma_init < 0:
            raise InvalidArgumentError("sigma_init must be >= 0")
        self.layer_plan  # force shape validation

    @cached_property
    def layer_plan(self) -> list[dict]:
        """Per-layer records: kind, parameter shapes, input/output shapes."""
        spatial = tuple(self.input_spatial)
        channels = self.input_channels
        nd = len(spatial)
        plan: list[dict] = []

        def chain(name, out_spatial):
            if min(out_spatial) < 1:
                raise InvalidArgumentError(
                    f"{name}: output spatial shape {out_spatial} collapses below 1 (input {spatial})"
                )

        for i, c in enumerate(self.conv):
            if c.kernel < 1 or c.stride < 1 or c.padding < 0 or c.n_filters < 1:
                raise InvalidArgumentError(f"conv{i}: bad layer spec {c}")
            out_sp = tuple((s + 2 * c.padding - c.kernel) // c.stride + 1 for s in spatial)
            if any(s + 2 * c.padding < c.kernel for s in spatial):
                raise InvalidArgumentError(f"conv{i}: kernel {c.kernel} exceeds padded input {spatial}")
            chain(f"conv{i}", out_sp)
            plan.append(
                {
                    "kind": "conv",
                    "name": f"conv{i}",
                    "w_shape": (c.n_filters, channels) + (c.kernel,) * nd,
                    "b_shape": (c.n_filters,),
                    "stride": c.stride,
                    "padding": c.padding,
                    "in": (channels, *spatial),
                    "out": (c.n_filters, *out_sp),
                }
            )
            spatial, channels = out_sp, c.n_filters
            if self.pool is not None:
                w, st = self.pool
                if any(s < w for s in spatial):
                    raise InvalidArgumentError(f"pool after conv{i}: window {w} exceeds input {spatial}")
                out_sp = tuple((s - w) // st + 1 for s in spatial)
                chain(f"pool{i}", out_sp)
                plan.append(
                    {
                        "kind": "pool",
                        "name": f"pool{i}",
                        "window": w,
                        "stride": st,
                        "in": (channels, *spatial),
                        "out": (channels, *out_sp),
                    }
                )
                spatial = out_sp

        for i, lc in enumerate(self.locally_connected):
            if lc.kernel < 1 or lc.n_filters < 1:
                raise InvalidArgumentError(f"lc{i}: bad layer spec {lc}")
            out_sp = tuple(s - lc.kernel + 1 for s in spatial)
            chain(f"lc{i}", out_sp)
            plan.append(
                {
                    "kind": "local",
                    "name": f"lc{i}",
                    "w_shape": out_sp + (lc.n_filters, channels) + (lc.kernel,) * nd,
                    "b_shape": out_sp + (lc.n_filters,),
                    "in": (channels, *spatial),
                    "out": (lc.n_filters, *out_sp),
                }
            )
            spatial, channels = out_sp, lc.n_filters

        n_in = channels * int(np.prod(spatial))
        plan.append({"kind": "flatten", "name": "flatten", "in": (channels, *spatial), "out": (n_in,)})
        for i, width in enumerate(self.fully_connected):
            if width < 1:
                raise InvalidArgumentError(f"fc{i}: width must be >= 1, got {width}")
            plan.append(
                {
                    "kind": "dense",
                    "name": f"fc{i}",
                    "w_shape": (n_in, width),
                    "b_shape": (width,),
                    "dropconnect": True,
                    "relu": True,
                    "in": (n_in,),
                    "out": (width,),
                }
            )
            n_in = width
        plan.append(
            {
                "kind": "dense",
                "name": "out",
                "w_shape": (n_in, self.n_classes),
                "b_shape": (self.n_classes,),
                "dropconnect": False,
                "relu": False,
                "in": (n_in,),
                "out": (self.n_classes,),
            }
        )
        return plan

    @property
    def input_shape(self) -> tuple[int, ...]:
        return (self.input_channels, *self.input_spatial)

    def param_names(self) -> list[str]:
        names = []
        for layer in self.layer_plan:
            if "w_shape" in layer:
                names += [f"{layer['name']}_w", f"{layer['name']}_b"]
        return names

    def to_dict(self) -> dict:
        return {
            "input_spatial": list(self.input_spatial),
            "input_channels": self.input_channels,
            "conv": [[c.n_filters, c.kernel, c.stride, c.padding] for c in self.conv],
            "pool": list(self.pool) if self.pool is not None else None,
            "locally_connected": [[l.n_filters, l.kernel] for l in self.locally_connected],
            "fully_connected": list(self.fully_connected),
            "n_classes": self.n_classes,
            "dropconnect_rate": self.dropconnect_rate,
            "dropconnect_inference": self.dropconnect_inference,
            "sigma_init": self.sigma_init,
            "dtype": self.dtype,
        }

    @staticmethod
    def from_dict(d: dict) -> "NetworkSpec":
        return NetworkSpec(
            input_spatial=tuple(d["input_spatial"]),
            input_channels=d["input_channels"],
            conv=tuple(ConvLayerSpec(*c) for c in d["conv"]),
            pool=tuple(d["pool"]) if d.get("pool") is not None else None,
            locally_connected=tuple(LocalLayerSpec(*l) for l in d["locally_connected"]),
            fully_connected=tuple(d["fully_connected"]),
            n_classes=d.get("n_classes", 2),
            dropconnect_rate=d.get("dropconnect_rate", 0.0),
            dropconnect_inference=d.get("dropconnect_inference", "mean_field"),
            sigma_init=d.get("sigma_init", 0.01),
            dtype=d.get("dtype", "float32"),
        )


@dataclass
class NetworkParams:
    """All learnable tensors, keyed ``<layer>_w`` / ``<layer>_b``."""

    spec: NetworkSpec
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def n_params(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.spec, {k: v.copy() for k, v in self.tensors.items()})

    def validate(self):
        for layer in self.spec.layer_plan:
            if "w_shape" not in layer:
                continue
            for suffix, shape in (("_w", layer["w_shape"]), ("_b", layer["b_shape"])):
                name = layer["name"] + suffix
                t = self.tensors.get(name)
                if t is None or t.shape != tuple(shape):
                    raise InvalidArgumentError(f"tensor {name} missing or mis-shaped")
                if not np.all(np.isfinite(t)):
                    raise InvalidArgumentError(f"tensor {name} contains non-finite values")


@dataclass(frozen=True)
class TrainSchedule:
    """Phased SGD schedule: each phase is (epochs, batch_size)."""

    phases: tuple[tuple[int, int], ...] = ((70, 64), (30, 64), (10, 32), (10, 16))
    learning_rate: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_phase_scale: Optional[tuple[float, ...]] = None
    seed: int = 0

    def __post_init__(self):
        if not self.phases or any(e < 1 or b < 1 for e, b in self.phases):
            raise InvalidArgumentError(f"phases must be non-empty with epochs,batch >= 1: {self.phases}")
        if self.learning_rate < 0:
            raise InvalidArgumentError("learning_rate must be >= 0")
        if self.lr_phase_scale is not None and len(self.lr_phase_scale) != len(self.phases):
            raise InvalidArgumentError("lr_phase_scale must match the number of phases")

    def to_dict(self) -> dict:
        return {
            "phases": [list(p) for p in self.phases],
            "learning_rate": self.learning_rate,
            "momentum": self.momentum,
            "weight_decay": self.weight_decay,
            "lr_phase_scale": list(self.lr_phase_scale) if self.lr_phase_scale else None,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "TrainSchedule":
        return TrainSchedule(
            phases=tuple(tuple(p) for p in d["phases"]),
            learning_rate=d.get("learning_rate", 0.001),
            momentum=d.get("momentum", 0.9),
            weight_decay=d.get("weight_decay", 5e-4),
            lr_phase_scale=tuple(d["lr_phase_scale"]) if d.get("lr_phase_scale") else None,
            seed=d.get("seed", 0),
        )


def init_params(spec: NetworkSpec, seed: int) -> NetworkParams:
    """Gaussian(0, sigma_init^2) weights, zero biases, deterministic per seed."""
    rng = rng_for(seed, "init")
    dtype = np.dtype(spec.dtype)
    tensors = {}
    for layer in spec.layer_plan:
        if "w_shape" not in layer:
            continue
        tensors[layer["name"] + "_w"] = rng.normal(0.0, 1.0, size=layer["w_shape"]).astype(dtype) * dtype.type(
            spec.sigma_init
        )
        tensors[layer["name"] + "_b"] = np.zeros(layer["b_shape"], dtype=dtype)
    return NetworkParams(spec=spec, tensors=tensors)


# --- layer primitives -------------------------------------------------------


def _windows(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    """Sliding windows over the spatial dims of (B, C, *S) -> (B, C, *O, *K)."""
    nd = x.ndim - 2
    out = tuple((x.shape[2 + i] - kernel) // stride + 1 for i in range(nd))
    shape = x.shape[:2] + out + (kernel,) * nd
    strides = x.strides[:2] + tuple(x.strides[2 + i] * stride for i in range(nd)) + x.strides[2:]
    return np.lib.stride_tricks.as_strided(x, shape, strides, writeable=False)


def _pad_spatial(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    pad = [(0, 0), (0, 0)] + [(padding, padding)] * (x.ndim - 2)
    return np.pad(x, pad)


def _conv_forward(x, w, b, stride, padding):
    # one im2col copy, then a single GEMM against the flattened filter bank
    nd = x.ndim - 2
    xp = _pad_spatial(x, padding)
    win = _windows(xp, w.shape[-1], stride)
    batch = x.shape[0]
    out_sp = win.shape[2 : 2 + nd]
    # (B, C, *O, *K) -> (B, *O, C, *K) -> (B*prod(O), C*prod(K))
    perm = (0, *range(2, 2 + nd), 1, *range(2 + nd, 2 + 2 * nd))
    cols = win.transpose(perm).reshape(batch * int(np.prod(out_sp)), -1)
    w_mat = w.reshape(w.shape[0], -1)
    out = cols @ w_mat.T + b
    out = np.moveaxis(out.reshape(batch, *out_sp, w.shape[0]), -1, 1)
    return np.ascontiguousarray(out), (xp.shape, cols)


def _conv_backward(dout, cache, x_shape, w, stride, padding):
    xp_shape, cols = cache
    nd = dout.ndim - 2
    kernel = w.shape[-1]
    out_sp = dout.shape[2:]

    db = dout.sum(axis=(0, *range(2, 2 + nd)))
    dout_mat = np.moveaxis(dout, 1, -1).reshape(-1, w.shape[0])
    dw = (dout_mat.T @ cols).reshape(w.shape)

    # dx: one small (F x C) contraction per kernel offset, added into a
    # strided slice of the padded gradient buffer; avoids any large im2col
    # copy, which is what actually dominates at these array sizes
    dxp = np.zeros(xp_shape, dtype=dout.dtype)
    for offset in np.ndindex(*(kernel,) * nd):
        wk = w[(slice(None), slice(None), *offset)]  # (F, C)
        contrib = np.moveaxis(np.tensordot(dout, wk, axes=([1], [0])), -1, 1)
        slices = tuple(slice(offset[i], offset[i] + stride * out_sp[i], stride) for i in range(nd))
        dxp[(slice(None), slice(None), *slices)] += contrib
    if padding:
        crop = (slice(None), slice(None)) + tuple(slice(padding, padding + s) for s in x_shape[2:])
        return dxp[crop], dw, db
    return dxp, dw, db


def _pool_forward(x, window, stride):
    nd = x.ndim - 2
    win = _windows(x, window, stride)
    flat = win.reshape(win.shape[: 2 + nd] + (-1,))
    arg = flat.argmax(axis=-1)  # first maximum in window scan order
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return out, (arg, x.shape)


def _pool_backward(dout, cache, window, stride):
    arg, x_shape = cache
    nd = dout.ndim - 2
    grids = np.indices(arg.shape)  # (2 + nd, B, C, *O)
    offsets = np.unravel_index(arg, (window,) * nd)
    pos = [grids[0], grids[1]] + [grids[2 + i] * stride + offsets[i] for i in range(nd)]
    flat = np.ravel_multi_index(tuple(pos), x_shape)
    # overlapping windows can route several gradients to one input element
    acc = np.bincount(flat.reshape(-1), weights=dout.reshape(-1).astype(np.float64), minlength=int(np.prod(x_shape)))
    return acc.reshape(x_shape).astype(dout.dtype)


def _local_einsum(nd: int):
    o, k = _O_LETTERS[:nd], _K_LETTERS[:nd]
    return (
        f"bc{o}{k},{o}fc{k}->bf{o}",  # forward
        f"bf{o},bc{o}{k}->{o}fc{k}",  # dW
        f"bf{o},{o}fc->bc{o}",  # dx per kernel offset
    )


def _local_forward(x, w, b):
    nd = x.ndim - 2
    kernel = w.shape[-1]
    win = _windows(x, kernel, 1)
    fwd, _, _ = _local_einsum(nd)
    out = np.einsum(fwd, win, w, optimize=True)
    out += np.moveaxis(b, -1, 0)[None]
    return out, (win,)


def _local_backward(dout, cache, x_shape, w):
    (win,) = cache
    nd = dout.ndim - 2
    kernel = w.shape[-1]
    _, dw_eq, dx_eq = _local_einsum(nd)
    dw = np.einsum(dw_eq, dout, win, optimize=True)
    db = np.moveaxis(dout.sum(axis=0), 0, -1)
    dx = np.zeros(x_shape, dtype=dout.dtype)
    out_sp = dout.shape[2:]
    for offset in np.ndindex(*(kernel,) * nd):
        wk = w[(..., *offset)]  # (*O, F, C)
        contrib = np.einsum(dx_eq, dout, wk, optimize=True)  # (B, C, *O)
        slices = tuple(slice(offset[i], offset[i] + out_sp[i]) for i in range(nd))
        dx[(slice(None), slice(None), *slices)] += contrib
    return dx, dw, db


def _dense_forward(x, w, b, *, train_mode, dropconnect, rate, inference, rng):
    if dropconnect and rate > 0.0 and train_mode:
        if rng is None:
            raise InvalidArgumentError("train-mode forward with DropConnect requires an rng")
        mask = (rng.random(size=(x.shape[0],) + w.shape) >= rate).astype(w.dtype)
        out = np.einsum("bi,bio->bo", x, w[None] * mask, optimize=True) + b
        return out, (x, mask)
    if dropconnect and rate > 0.0 and inference == "sample":
        if rng is None:
            rng = rng_for(0, "dropconnect-sample")
        mask = (rng.random(size=(x.shape[0],) + w.shape) >= rate).astype(w.dtype)
        out = np.einsum("bi,bio->bo", x, w[None] * mask, optimize=True) + b
        return out, (x, mask)
    scale = (1.0 - rate) if (dropconnect and rate > 0.0) else 1.0
    out = x @ (w * scale) + b
    return out, (x, None)


def _dense_backward(dout, cache, w):
    x, mask = cache
    db = dout.sum(axis=0)
    if mask is None:
        dw = x.T @ dout
        dx = dout @ w.T
    else:
        dw = np.einsum("bi,bo,bio->io", x, dout, mask, optimize=True)
        dx = np.einsum("bo,bio->bi", dout, w[None] * mask, optimize=True)
    return dx, dw, db


# --- network-level operations ------------------------------------------------


def _as_batch(batch, spec: NetworkSpec) -> np.ndarray:
    if isinstance(batch, np.ndarray):
        x = batch
    else:
        x = np.stack([getattr(o, "pixels", o) for o in batch])
    if x.ndim == len(spec.input_shape):  # single example
        x = x[None]
    if x.shape[1:] != spec.input_shape:
        raise InvalidArgumentError(f"batch shape {x.shape[1:]} does not match spec input {spec.input_shape}")
    return np.ascontiguousarray(x, dtype=spec.dtype)


def _forward_pass(params: NetworkParams, x: np.ndarray, train_mode: bool, rng, keep_cache: bool):
    spec = params.spec
    caches = []
    t = params.tensors
    for layer in spec.layer_plan:
        kind = layer["kind"]
        if kind == "conv":
            x, cache = _conv_forward(
                x, t[layer["name"] + "_w"], t[layer["name"] + "_b"], layer["stride"], layer["padding"]
            )
            relu_mask = x > 0
            x = x * relu_mask
            caches.append((layer, cache, relu_mask, None))
        elif kind == "pool":
            x, cache = _pool_forward(x, layer["window"], layer["stride"])
            caches.append((layer, cache, None, None))
        elif kind == "local":
            x, cache = _local_forward(x, t[layer["name"] + "_w"], t[layer["name"] + "_b"])
            relu_mask = x > 0
            x = x * relu_mask
            caches.append((layer, cache, relu_mask, None))
        elif kind == "flatten":
            caches.append((layer, x.shape, None, None))
            x = x.reshape(x.shape[0], -1)
        elif kind == "dense":
            x, cache = _dense_forward(
                x,
                t[layer["name"] + "_w"],
                t[layer["name"] + "_b"],
                train_mode=train_mode,
                dropconnect=layer["dropconnect"],
                rate=spec.dropconnect_rate,
                inference=spec.dropconnect_inference,
                rng=rng,
            )
            if layer["relu"]:
                relu_mask = x > 0
                x = x * relu_mask
            else:
                relu_mask = None
            caches.append((layer, cache, relu_mask, None))
        else:  # pragma: no cover
            raise InvalidArgumentError(f"unknown layer kind {kind}")
    return x, (caches if keep_cache else None)


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def forward(params: NetworkParams, batch, train_mode: bool = False, rng=None) -> np.ndarray:
    """Class probabilities, one softmax row per example."""
    x = _as_batch(batch, params.spec)
    logits, _ = _forward_pass(params, x, train_mode, rng, keep_cache=False)
    return _softmax(logits)


def loss_and_gradients(
    params: NetworkParams,
    batch,
    labels,
    train_mode: bool = True,
    rng=None,
    weight_decay: float = 0.0,
):
    """Mean cross-entropy (+ L2 on weights) and gradients shaped like the params."""
    spec = params.spec
    x = _as_batch(batch, spec)
    y = np.asarray(labels, dtype=np.intp)
    if y.shape != (x.shape[0],):
        raise InvalidArgumentError(f"labels shape {y.shape} does not match batch size {x.shape[0]}")
    if y.size == 0:
        raise InvalidArgumentError("batch must be non-empty")
    if np.any((y < 0) | (y >= spec.n_classes)):
        raise InvalidArgumentError("labels must be 0 or 1")

    logits, caches = _forward_pass(params, x, train_mode, rng, keep_cache=True)
    z = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsumexp
    n = x.shape[0]
    loss = float(-logp[np.arange(n), y].mean())

    probs = np.exp(logp)
    onehot = np.zeros_like(probs)
    onehot[np.arange(n), y] = 1.0
    grad = ((probs - onehot) / n).astype(x.dtype)

    t = params.tensors
    grads: dict[str, np.ndarray] = {}
    for layer, cache, relu_mask, _ in reversed(caches):
        kind = layer["kind"]
        if kind == "dense":
            if relu_mask is not None:
                grad = grad * relu_mask
            grad, dw, db = _dense_backward(grad, cache, t[layer["name"] + "_w"])
            grads[layer["name"] + "_w"] = dw
            grads[layer["name"] + "_b"] = db
        elif kind == "flatten":
            grad = grad.reshape(cache)
        elif kind == "local":
            grad = grad * relu_mask
            grad, dw, db = _local_backward(grad, cache, (x.shape[0], *layer["in"]), t[layer["name"] + "_w"])
            grads[layer["name"] + "_w"] = dw
            grads[layer["name"] + "_b"] = db
        elif kind == "pool":
            grad = _pool_backward(grad, cache, layer["window"], layer["stride"])
        elif kind == "conv":
            grad = grad * relu_mask
            grad, dw, db = _conv_backward(
                grad, cache, (x.shape[0], *layer["in"]), t[layer["name"] + "_w"], layer["stride"], layer["padding"]
            )
            grads[layer["name"] + "_w"] = dw
            grads[layer["name"] + "_b"] = db

    if weight_decay:
        for name, tensor in t.items():
            if name.endswith("_w"):
                loss += 0.5 * weight_decay * float((tensor.astype(np.float64) ** 2).sum())
                grads[name] = grads[name] + weight_decay * tensor
    return loss, grads


def train(
    params0: NetworkParams,
    train_obs,
    labels=None,
    schedule: TrainSchedule = TrainSchedule(),
    rng=None,
):
    """Phased SGD with momentum over seeded mini-batch shuffles.

    ``train_obs`` is either an (N, C, ...) pixel array with ``labels`` or a
    sequence of centered observations whose labels are read directly.
    Returns (trained params, per-epoch mean loss trace).
    """
    spec = params0.spec
    if labels is None:
        from .candidates import POSITIVE  # local import to avoid a cycle at module load

        x = _as_batch(train_obs, spec)
        y = np.array([1 if o.label == POSITIVE else 0 for o in train_obs], dtype=np.intp)
    else:
        x = _as_batch(train_obs, spec)
        y = np.asarray(labels, dtype=np.intp)
    if x.shape[0] != y.shape[0] or x.shape[0] == 0:
        raise InvalidArgumentError("training set must be non-empty with one label per example")

    if rng is None:
        rng = rng_for(schedule.seed, "train")
    params = params0.copy()
    velocity = {k: np.zeros_like(v) for k, v in params.tensors.items()}
    trace: list[float] = []
    epoch_index = 0
    n = x.shape[0]

    # mini-batch tensors here are small; multi-threaded BLAS only adds
    # synchronization overhead, so pin the pools for the whole run
    with threadpool_limits(limits=1, user_api="blas"):
        for phase_idx, (epochs, batch_size) in enumerate(schedule.phases):
            lr = schedule.learning_rate
            if schedule.lr_phase_scale is not None:
                lr *= schedule.lr_phase_scale[phase_idx]
            for _ in range(epochs):
                perm = rng.permutation(n)
                total, seen = 0.0, 0
                for start in range(0, n, batch_size):
                    idx = perm[start : start + batch_size]
                    loss, grads = loss_and_gradients(
                        params, x[idx], y[idx], train_mode=True, rng=rng, weight_decay=schedule.weight_decay
                    )
                    if not np.isfinite(loss):
                        raise TrainingDivergedError(epoch_index, loss)
                    total += loss * idx.size
                    seen += idx.size
                    for name, g in grads.items():
                        v = velocity[name]
                        v *= schedule.momentum
                        v -= lr * g.astype(v.dtype)
                        params.tensors[name] += v
                trace.append(total / seen)
                epoch_index += 1
    return params, trace


def predict(params: NetworkParams, observation) -> float:
    """Positive-class probability for a single observation, test-mode forward."""
    probs = forward(params, observation, train_mode=False)
    return float(probs[0, 1])


def predict_batch(params: NetworkParams, batch, chunk: int = 4096) -> np.ndarray:
    """Positive-class probabilities for a batch, evaluated in chunks."""
    x = _as_batch(batch, params.spec)
    out = np.empty(x.shape[0], dtype=np.float64)
    with threadpool_limits(limits=1, user_api="blas"):
        for start in range(0, x.shape[0], chunk):
            out[start : start + chunk] = forward(params, x[start : start + chunk])[:, 1]
    return out


# --- checkpoints -------------------------------------------------------------
#
# <base>.json   spec + ordered tensor manifest (name, shape, byte offset)
# <base>.bin    float32 little-endian tensor blobs, concatenated


def save_checkpoint(params: NetworkParams, base_path, mean_image: Optional[np.ndarray] = None):
    base = Path(base_path)
    base.parent.mkdir(parents=True, exist_ok=True)
    names = params.spec.param_names()
    manifest = []
    offset = 0
    blobs = []
    tensors = dict(params.tensors)
    if mean_image is not None:
        tensors["mean_image"] = mean_image
        names = names + ["mean_image"]
    for name in names:
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": "f4", "offset": offset})
        blobs.append(arr.tobytes())
        offset += len(blobs[-1])
    header = {"spec": params.spec.to_dict(), "tensors": manifest, "total_bytes": offset}
    base.with_suffix(".json").write_text(json.dumps(header, sort_keys=True) + "\n")
    base.with_suffix(".bin").write_bytes(b"".join(blobs))
    return base.with_suffix(".json"), base.with_suffix(".bin")


def load_checkpoint(base_path) -> tuple[NetworkParams, Optional[np.ndarray]]:
    base = Path(base_path)
    header = json.loads(base.with_suffix(".json").read_text())
    blob = base.with_suffix(".bin").read_bytes()
    if len(blob) != header["total_bytes"]:
        raise InvalidArgumentError(
            f"checkpoint blob is {len(blob)} bytes, manifest says {header['total_bytes']}"
        )
    spec = NetworkSpec.from_dict(header["spec"])
    tensors = {}
    for entry in header["tensors"]:
        size = int(np.prod(entry["shape"])) * 4
        arr = np.frombuffer(blob[entry["offset"] : entry["offset"] + size], dtype="<f4")
        tensors[entry["name"]] = arr.reshape(entry["shape"]).astype(spec.dtype)
    mean = tensors.pop("mean_image", None)
    params = NetworkParams(spec=spec, tensors=tensors)
    params.validate()
    return params, mean


def first_layer_kernels(params: NetworkParams) -> np.ndarray:
    """First conv filter bank as (F, C, k, k); 3D kernels give their central slice."""
    name = params.spec.layer_plan[0]["name"] + "_w"
    w = params.tensors[name]
    if w.ndim == 5:  # volumetric: (F, C, k, k, k)
        w = w[:, :, w.shape[2] // 2]
    return w


def kernels_to_ascii(params: NetworkParams, chars: str = " .:-=+*#%@") -> str:
    """Text rendering of the first-layer kernels, one block per filter."""
    w = first_layer_kernels(params).mean(axis=1)  # collapse channels for text
    lo, hi = float(w.min()), float(w.max())
    span = hi - lo if hi > lo else 1.0
    lines = []
    for f in range(w.shape[0]):
        lines.append(f"filter {f}")
        for row in w[f]:
            idx = ((row - lo) / span * (len(chars) - 1)).astype(int)
            lines.append("".join(chars[i] for i in idx))
    return "\n".join(lines) + "\n"
