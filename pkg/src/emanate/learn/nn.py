"""Small pre-activation residual network written directly in numpy.

Both the 1-D model (spectrum vectors) and the 2-D model (spectrograms) run
on the same NHWC 2-D convolution code; a 1-D input is a height-1 image with
``(1, k)`` kernels.

Layout::

    stem conv -> [block] * R -> SiLU -> global average pool -> linear head
    block(x)   = skip(x) + conv2(SiLU(conv1(SiLU(x))))
    skip(x)    = x, or a strided 1x1 projection of SiLU(x) when the shape changes

SiLU is used instead of ReLU so that finite-difference gradient checks are
not spoiled by kinks.
"""

from __future__ import annotations

import copy
import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import InvalidArgumentError

__all__ = ["ConvNetModel", "softmax"]


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def silu(x):
    return x * _sigmoid(x)


def silu_grad(x):
    s = _sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _xent(logits: np.ndarray, labels: np.ndarray) -> float:
    z = logits - logits.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1))
    return float(np.mean(lse - z[np.arange(z.shape[0]), labels]))


def conv_forward(x, w, b, stride, pad):
    """x: (B, H, W, C); w: (kh, kw, C, O).  Returns output and im2col cache."""
    kh, kw, c, o = w.shape
    sh, sw = stride
    ph, pw = pad
    if ph or pw:
        x = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    bsz, hp, wp, _ = x.shape
    ho = (hp - kh) // sh + 1
    wo = (wp - kw) // sw + 1
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::sh, ::sw][:, :ho, :wo]
    # (B, Ho, Wo, C, kh, kw) -> rows ordered (kh, kw, C) to match w
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(bsz * ho * wo, kh * kw * c)
    out = cols @ w.reshape(kh * kw * c, o)
    out += b
    return out.reshape(bsz, ho, wo, o), (cols, x.shape)


def conv_backward(dout, w, cache, stride, pad):
    cols, padded_shape = cache
    kh, kw, c, o = w.shape
    sh, sw = stride
    ph, pw = pad
    bsz, ho, wo, _ = dout.shape
    dmat = dout.reshape(-1, o)
    dw = (cols.T @ dmat).reshape(w.shape)
    db = dmat.sum(axis=0)
    dcols = (dmat @ w.reshape(-1, o).T).reshape(bsz, ho, wo, kh, kw, c)
    dx = np.zeros(padded_shape, dtype=dout.dtype)
    for i in range(kh):
        for j in range(kw):
            dx[:, i : i + sh * (ho - 1) + 1 : sh, j : j + sw * (wo - 1) + 1 : sw, :] += dcols[:, :, :, i, j, :]
    hp, wp = padded_shape[1], padded_shape[2]
    return dx[:, ph : hp - ph, pw : wp - pw, :], dw, db


class ConvNetModel:
    """Residual classifier over spectra (``dims=1``) or spectrograms (``dims=2``).

    Parameters live in ``self.params`` (name -> array) so optimizers,
    checkpointing and gradient checks can treat them uniformly.
    """

    def __init__(
        self,
        input_shape,
        classes,
        dims: int = 1,
        widths=(16, 32, 64),
        stem_kernel: int | None = None,
        stem_stride: int | None = None,
        kernel: int = 3,
        seed: int = 0,
        dtype=np.float32,
    ):
        if dims not in (1, 2):
            raise InvalidArgumentError(f"dims must be 1 or 2, got {dims}")
        self.dims = dims
        self.input_shape = tuple(int(s) for s in input_shape)
        if len(self.input_shape) != dims + 1:
            raise InvalidArgumentError(
                f"input_shape for a {dims}-D model is (channels, {'length' if dims == 1 else 'height, width'})"
            )
        self.classes = tuple(classes)
        if len(self.classes) < 2:
            raise InvalidArgumentError("need at least two classes")
        self.widths = tuple(int(w) for w in widths)
        self.kernel = int(kernel)
        self.stem_kernel = int(stem_kernel if stem_kernel is not None else (8 if dims == 1 else 3))
        self.stem_stride = int(stem_stride if stem_stride is not None else (4 if dims == 1 else 2))
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        self.params: dict[str, np.ndarray] = {}
        self._init_params()

    # -- construction -------------------------------------------------------
    def _k(self, k):
        return (1, k) if self.dims == 1 else (k, k)

    def _s(self, s):
        return (1, s) if self.dims == 1 else (s, s)

    def _p(self, k):
        return (0, k // 2) if self.dims == 1 else (k // 2, k // 2)

    def block_strides(self):
        return [1] + [2] * (len(self.widths) - 1)

    def _init_params(self):
        rng = np.random.default_rng(self.seed)
        c_in = self.input_shape[0]

        def conv(name, k, ci, co, scale=1.0):
            kh, kw = self._k(k)
            fan_in = kh * kw * ci
            lim = scale * math.sqrt(6.0 / fan_in)
            self.params[name + ".w"] = rng.uniform(-lim, lim, size=(kh, kw, ci, co)).astype(self.dtype)
            self.params[name + ".b"] = np.zeros(co, dtype=self.dtype)

        conv("stem", self.stem_kernel, c_in, self.widths[0])
        prev = self.widths[0]
        for i, (width, stride) in enumerate(zip(self.widths, self.block_strides())):
            conv(f"block{i}.conv1", self.kernel, prev, width)
            # small residual branch at init keeps the stack close to identity
            conv(f"block{i}.conv2", self.kernel, width, width, scale=0.25)
            if stride != 1 or width != prev:
                conv(f"block{i}.proj", 1, prev, width)
            prev = width
        lim = math.sqrt(1.0 / prev)
        self.params["head.w"] = rng.uniform(-lim, lim, size=(prev, len(self.classes))).astype(self.dtype)
        self.params["head.b"] = np.zeros(len(self.classes), dtype=self.dtype)

    def config(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "classes": list(self.classes),
            "dims": self.dims,
            "widths": list(self.widths),
            "stem_kernel": self.stem_kernel,
            "stem_stride": self.stem_stride,
            "kernel": self.kernel,
            "seed": self.seed,
            "dtype": self.dtype.name,
        }

    @classmethod
    def from_config(cls, cfg: dict) -> "ConvNetModel":
        return cls(
            cfg["input_shape"],
            cfg["classes"],
            dims=cfg["dims"],
            widths=cfg["widths"],
            stem_kernel=cfg["stem_kernel"],
            stem_stride=cfg["stem_stride"],
            kernel=cfg["kernel"],
            seed=cfg["seed"],
            dtype=cfg.get("dtype", "float32"),
        )

    def copy(self) -> "ConvNetModel":
        return copy.deepcopy(self)

    def astype(self, dtype) -> "ConvNetModel":
        other = self.copy()
        other.dtype = np.dtype(dtype)
        other.params = {k: v.astype(dtype) for k, v in self.params.items()}
        return other

    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    # -- forward / backward ---------------------------------------------------
    def _to_nhwc(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[1:] != self.input_shape:
            raise InvalidArgumentError(f"expected inputs of shape {self.input_shape}, got {x.shape[1:]}")
        if self.dims == 1:
            return x.transpose(0, 2, 1)[:, None, :, :]
        return x.transpose(0, 2, 3, 1)

    def _forward(self, x, keep: bool):
        p = self.params
        cache = {}
        h, c = conv_forward(x, p["stem.w"], p["stem.b"], self._s(self.stem_stride), self._p(self.stem_kernel))
        if keep:
            cache["stem"] = c
        for i, stride in enumerate(self.block_strides()):
            name = f"block{i}"
            pre = silu(h)
            a, c1 = conv_forward(pre, p[name + ".conv1.w"], p[name + ".conv1.b"], self._s(stride), self._p(self.kernel))
            a_act = silu(a)
            r, c2 = conv_forward(a_act, p[name + ".conv2.w"], p[name + ".conv2.b"], (1, 1), self._p(self.kernel))
            if name + ".proj.w" in p:
                skip, cp = conv_forward(pre, p[name + ".proj.w"], p[name + ".proj.b"], self._s(stride), (0, 0))
            else:
                skip, cp = h, None
            if keep:
                cache[name] = (h, a, c1, c2, cp)
            h = skip + r
        feat = silu(h)
        pooled = feat.mean(axis=(1, 2))
        logits = pooled @ p["head.w"] + p["head.b"]
        if keep:
            cache["top"] = (h, pooled)
        return logits, cache

    def forward(self, features, batch_size: int = 256) -> np.ndarray:
        """Class logits for a batch of inputs shaped ``(n, *input_shape)``."""
        features = np.asarray(features)
        if features.ndim == len(self.input_shape):
            features = features[None]
        out = []
        for start in range(0, features.shape[0], batch_size):
            logits, _ = self._forward(self._to_nhwc(features[start : start + batch_size]), keep=False)
            out.append(logits)
        return np.concatenate(out, axis=0)

    def predict_proba(self, features) -> np.ndarray:
        return softmax(self.forward(features))

    def loss_and_grad(self, features, labels) -> tuple[float, dict[str, np.ndarray]]:
        """Mean softmax cross-entropy over the batch and its parameter gradients."""
        p = self.params
        x = self._to_nhwc(features)
        labels = np.asarray(labels, dtype=int)
        n = x.shape[0]
        logits, cache = self._forward(x, keep=True)
        loss = _xent(logits, labels)
        probs = softmax(logits)

        g: dict[str, np.ndarray] = {}
        dlogits = probs
        dlogits[np.arange(n), labels] -= 1.0
        dlogits /= n
        h, pooled = cache["top"]
        g["head.w"] = pooled.T @ dlogits
        g["head.b"] = dlogits.sum(axis=0)
        dpooled = dlogits @ p["head.w"].T
        hh, ww = h.shape[1], h.shape[2]
        dfeat = np.broadcast_to(dpooled[:, None, None, :] / (hh * ww), h.shape)
        dh = dfeat * silu_grad(h)

        for i in reversed(range(len(self.widths))):
            name = f"block{i}"
            stride = self.block_strides()[i]
            h_in, a, c1, c2, cp = cache[name]
            dr = dh
            da_act, g[name + ".conv2.w"], g[name + ".conv2.b"] = conv_backward(
                dr, p[name + ".conv2.w"], c2, (1, 1), self._p(self.kernel)
            )
            da = da_act * silu_grad(a)
            dpre, g[name + ".conv1.w"], g[name + ".conv1.b"] = conv_backward(
                da, p[name + ".conv1.w"], c1, self._s(stride), self._p(self.kernel)
            )
            if cp is not None:
                dpre_skip, g[name + ".proj.w"], g[name + ".proj.b"] = conv_backward(
                    dh, p[name + ".proj.w"], cp, self._s(stride), (0, 0)
                )
                dpre = dpre + dpre_skip
                dh = dpre * silu_grad(h_in)
            else:
                dh = dh + dpre * silu_grad(h_in)
        _, g["stem.w"], g["stem.b"] = conv_backward(
            dh, p["stem.w"], cache["stem"], self._s(self.stem_stride), self._p(self.stem_kernel)
        )
        return loss, g

    def loss(self, features, labels) -> float:
        x = self._to_nhwc(features)
        labels = np.asarray(labels, dtype=int)
        logits, _ = self._forward(x, keep=False)
        return _xent(logits, labels)
