"""Forward/backward passes for classical and bipolar morphological layers.

Conventions:
  - image tensors are NHWC, dense inputs flatten trailing axes to [n, P];
  - every layer caches what its backward needs only when forward runs with
    train=True, and backward consumes the most recent cache;
  - an OpCount passed to forward is incremented by the layer's closed-form
    operation tally (batch times the per-sample count);
  - the activation is part of the layer (sigma in the neuron model),
    restricted to identity or relu.

BM layers compute the four-path neuron: inputs are routed by sign into a
positive and a negative branch, each branch's log-magnitudes are max-plus
reduced against the V+ and V- weight banks, the four exp'd terms combine
with signs +,-,-,+ and the bias v is added.  ln 0 is replaced by a finite
sentinel so large in magnitude that exp underflows to exactly 0.0, which
keeps zero inputs (and zero padding) out of every max and out of every
gradient.  Gradients follow the single-argmax subgradient: each term routes
its gradient to exactly one weight slot and one input slot, ties resolved
to the lowest input index.

Approximate-math mode (inference only) swaps exact ln/exp for the
polynomial float32 approximations; magnitudes below the float32 normal
range are clamped to the sentinel exactly like zeros.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import approx_math
from .kernels import bm_backward_into, bm_max_terms
from .opcount import OpCount
from .tensor import DomainError, ShapeError, Tensor

NEG_SENTINEL = -1e4

# exp arguments at or below this are flushed to 0.0 in approx mode instead
# of being pushed through the float32 pipeline (where they would underflow
# anyway); exact mode lets np.exp underflow on its own.
_APPROX_EXP_FLOOR = -87.0

_ACTS = ("identity", "relu")


@dataclass
class BMWeights:
    """Log-domain weight banks of a BM layer.

    vplus/vminus share the index structure of the classical weight tensor
    they replace; v is the bias.  Entries at neg_sentinel stand for -inf.
    """

    vplus: Tensor
    vminus: Tensor
    v: Tensor
    neg_sentinel: float = NEG_SENTINEL


def _check_act(act: str) -> str:
    if act not in _ACTS:
        raise ValueError(f"unknown activation {act!r}, expected one of {_ACTS}")
    return act


def _apply_act(z: Tensor, act: str) -> Tensor:
    return np.maximum(z, 0.0) if act == "relu" else z


def _act_grad(grad: Tensor, z: Tensor, act: str) -> Tensor:
    return grad * (z > 0) if act == "relu" else grad


def log_magnitude(x: Tensor, sentinel: float, approx: bool = False) -> Tensor:
    """ln|x| with zeros (and clamped underflow) mapped to the sentinel."""
    ax = np.abs(x)
    if approx:
        tiny = float(np.finfo(np.float32).tiny)
        safe = ax >= tiny
        out = np.full(ax.shape, sentinel)
        if np.any(safe):
            out[safe] = approx_math.ln_approx(ax[safe])
        return out
    safe = ax >= 1e-300
    with np.errstate(divide="ignore"):
        return np.where(safe, np.log(np.where(safe, ax, 1.0)), sentinel)


def _exp_terms(m: Tensor, approx: bool) -> Tensor:
    if not approx:
        return np.exp(m)
    live = m > _APPROX_EXP_FLOOR
    out = np.zeros_like(m)
    if np.any(live):
        out[live] = approx_math.exp_approx(m[live])
    return out


# ---------------------------------------------------------------------------
# classical layers


class Dense:
    """Fully-connected layer y = act(x . w + b), w: [P, Q]."""

    kind = "fc"

    def __init__(self, w: Tensor, b: Tensor, act: str = "identity", convertible: bool = True):
        w = np.asarray(w, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if w.ndim != 2 or b.shape != (w.shape[1],):
            raise ShapeError(f"dense weights {w.shape} incompatible with bias {b.shape}")
        self.w, self.b = w, b
        self.act = _check_act(act)
        self.convertible = convertible
        self._cache = None

    def parameters(self):
        return {"w": self.w, "b": self.b}

    def forward(self, x: Tensor, train: bool = False, ops: OpCount | None = None) -> Tensor:
        n = x.shape[0]
        x2 = x.reshape(n, -1)
        P, Q = self.w.shape
        if x2.shape[1] != P:
            raise ShapeError(f"dense expects {P} inputs, got {x2.shape[1]}")
        z = x2 @ self.w + self.b
        if ops is not None:
            ops.mul += n * Q * P
            ops.add += n * Q * P
            ops.activation += n * Q
        if train:
            self._cache = (x.shape, x2, z)
        return _apply_act(z, self.act)

    def backward(self, grad: Tensor):
        x_shape, x2, z = self._cache
        g = _act_grad(grad, z, self.act)
        self.d_w = x2.T @ g
        self.d_b = g.sum(axis=0)
        return (g @ self.w.T).reshape(x_shape)

    def gradients(self):
        return {"w": self.d_w, "b": self.d_b}


def _same_pad(extent: int, k: int, stride: int) -> tuple[int, int]:
    out = -(-extent // stride)
    total = max((out - 1) * stride + k - extent, 0)
    return total // 2, total - total // 2


def conv_output_hw(hw: tuple[int, int], k: int, stride: int, padding: str) -> tuple[int, int]:
    if padding == "same":
        return tuple(-(-e // stride) for e in hw)
    return tuple((e - k) // stride + 1 for e in hw)


def _pad_image(x: Tensor, k: int, stride: int, padding: str) -> tuple[Tensor, tuple[int, int]]:
    if padding == "valid":
        return x, (0, 0)
    if padding != "same":
        raise ValueError(f"unknown padding {padding!r}")
    (pt, pb) = _same_pad(x.shape[1], k, stride)
    (pl, pr) = _same_pad(x.shape[2], k, stride)
    return np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0))), (pt, pl)


def im2col(xp: Tensor, k: int, stride: int, out_hw: tuple[int, int]) -> Tensor:
    """Patch matrix [n*Lo*Mo, k*k*C] from a padded NHWC image.

    Patch inner order is (dl, dm, c), matching w[K, K, C, F] reshaped
    row-major to [K*K*C, F].
    """
    n, _, _, C = xp.shape
    Lo, Mo = out_hw
    patches = np.empty((n, Lo, Mo, k, k, C))
    for dl in range(k):
        for dm in range(k):
            patches[:, :, :, dl, dm, :] = xp[
                :, dl : dl + (Lo - 1) * stride + 1 : stride, dm : dm + (Mo - 1) * stride + 1 : stride, :
            ]
    return patches.reshape(n * Lo * Mo, k * k * C)


def col2im(gcols: Tensor, padded_shape, k: int, stride: int, out_hw: tuple[int, int]) -> Tensor:
    """Adjoint of im2col: scatter-add patch gradients back onto the image."""
    n, Lp, Mp, C = padded_shape
    Lo, Mo = out_hw
    gp = np.zeros((n, Lp, Mp, C))
    patches = gcols.reshape(n, Lo, Mo, k, k, C)
    for dl in range(k):
        for dm in range(k):
            gp[:, dl : dl + (Lo - 1) * stride + 1 : stride, dm : dm + (Mo - 1) * stride + 1 : stride, :] += patches[
                :, :, :, dl, dm, :
            ]
    return gp


def _check_conv_geometry(x: Tensor, k: int, stride: int, c: int, padding: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"conv expects NHWC input, got shape {x.shape}")
    if x.shape[3] != c:
        raise ShapeError(f"conv expects {c} input channels, got {x.shape[3]}")
    if not isinstance(stride, int) or stride < 1:
        raise ShapeError(f"invalid stride {stride!r}")
    if padding == "valid" and (x.shape[1] < k or x.shape[2] < k):
        raise ShapeError(f"spatial dims {x.shape[1:3]} smaller than kernel {k}")


class Conv2D:
    """2-d convolution y = act(conv(x, w) + b), w: [K, K, C, F], NHWC."""

    kind = "conv"

    def __init__(self, w: Tensor, b: Tensor, stride: int = 1, padding: str = "same",
                 act: str = "identity", convertible: bool = True):
        w = np.asarray(w, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if w.ndim != 4 or w.shape[0] != w.shape[1] or b.shape != (w.shape[3],):
            raise ShapeError(f"conv weights {w.shape} incompatible with bias {b.shape}")
        self.w, self.b = w, b
        self.stride, self.padding = stride, padding
        self.act = _check_act(act)
        self.convertible = convertible
        self._cache = None

    @property
    def ksize(self) -> int:
        return self.w.shape[0]

    def parameters(self):
        return {"w": self.w, "b": self.b}

    def forward(self, x: Tensor, train: bool = False, ops: OpCount | None = None) -> Tensor:
        k, _, C, F = self.w.shape
        _check_conv_geometry(x, k, self.stride, C, self.padding)
        n = x.shape[0]
        out_hw = conv_output_hw(x.shape[1:3], k, self.stride, self.padding)
        xp, _ = _pad_image(x, k, self.stride, self.padding)
        cols = im2col(xp, k, self.stride, out_hw)
        z = (cols @ self.w.reshape(-1, F) + self.b).reshape(n, *out_hw, F)
        if ops is not None:
            lo, mo = out_hw
            ops.mul += n * F * k * k * C * lo * mo
            ops.add += n * F * k * k * C * lo * mo
            ops.activation += n * F * lo * mo
        if train:
            self._cache = (x.shape, xp.shape, cols, z, out_hw)
        return _apply_act(z, self.act)

    def backward(self, grad: Tensor):
        x_shape, padded_shape, cols, z, out_hw = self._cache
        k, _, C, F = self.w.shape
        g = _act_grad(grad, z, self.act).reshape(-1, F)
        self.d_w = (cols.T @ g).reshape(self.w.shape)
        self.d_b = g.sum(axis=0)
        gcols = g @ self.w.reshape(-1, F).T
        gp = col2im(gcols, padded_shape, k, self.stride, out_hw)
        pt = (padded_shape[1] - x_shape[1]) // 2
        pl = (padded_shape[2] - x_shape[2]) // 2
        return gp[:, pt : pt + x_shape[1], pl : pl + x_shape[2], :]

    def gradients(self):
        return {"w": self.d_w, "b": self.d_b}


# ---------------------------------------------------------------------------
# bipolar morphological layers


def _bm_combine(terms: Tensor, v: Tensor) -> Tensor:
    return terms[:, 0, :] - terms[:, 1, :] - terms[:, 2, :] + terms[:, 3, :] + v


class BMDense:
    """Fully-connected BM layer over flattened inputs, banks [P, Q]."""

    kind = "bm-fc"

    def __init__(self, weights: BMWeights, act: str = "identity"):
        if weights.vplus.shape != weights.vminus.shape or weights.vplus.ndim != 2:
            raise ShapeError(f"BM dense banks must share a [P, Q] shape, got {weights.vplus.shape}")
        if weights.v.shape != (weights.vplus.shape[1],):
            raise ShapeError(f"BM dense bias {weights.v.shape} incompatible with banks {weights.vplus.shape}")
        self.weights = weights
        self.act = _check_act(act)
        self.convertible = False
        self.approx = False
        self._cache = None

    def parameters(self):
        w = self.weights
        return {"vplus": w.vplus, "vminus": w.vminus, "v": w.v}

    def forward(self, x: Tensor, train: bool = False, ops: OpCount | None = None) -> Tensor:
        w = self.weights
        n = x.shape[0]
        x2 = x.reshape(n, -1)
        P, Q = w.vplus.shape
        if x2.shape[1] != P:
            raise ShapeError(f"BM dense expects {P} inputs, got {x2.shape[1]}")
        lx = log_magnitude(x2, w.neg_sentinel, self.approx)
        sign_pos = x2 >= 0
        m, arg = bm_max_terms(lx, sign_pos, w.vplus, w.vminus, w.neg_sentinel)
        terms = _exp_terms(m, self.approx)
        z = _bm_combine(terms, w.v)
        if ops is not None:
            ops.exp += n * 4 * Q
            ops.log += n * P
            ops.add += n * 2 * Q * (P + 2)
            ops.max += n * 2 * Q * (P - 1)
            ops.activation += n * Q
        if train:
            self._cache = (x.shape, x2, terms, arg, z)
            self.last_terms = terms
        return _apply_act(z, self.act)

    def backward(self, grad: Tensor):
        w = self.weights
        x_shape, x2, terms, arg, z = self._cache
        grad_pre = np.ascontiguousarray(_act_grad(grad, z, self.act))
        P, Q = w.vplus.shape
        self.d_vplus = np.zeros((P, Q))
        self.d_vminus = np.zeros((P, Q))
        d_lx = np.zeros_like(x2)
        bm_backward_into(terms, arg, grad_pre, self.d_vplus, self.d_vminus, d_lx)
        self.d_v = grad_pre.sum(axis=0)
        gx = np.divide(d_lx, x2, out=np.zeros_like(x2), where=x2 != 0)
        return gx.reshape(x_shape)

    def gradients(self):
        return {"vplus": self.d_vplus, "vminus": self.d_vminus, "v": self.d_v}


class BMConv2D:
    """Convolutional BM layer, banks [K, K, C, F], NHWC."""

    kind = "bm-conv"

    def __init__(self, weights: BMWeights, stride: int = 1, padding: str = "same", act: str = "identity"):
        vp = weights.vplus
        if vp.ndim != 4 or vp.shape != weights.vminus.shape or vp.shape[0] != vp.shape[1]:
            raise ShapeError(f"BM conv banks must share a [K, K, C, F] shape, got {vp.shape}")
        if weights.v.shape != (vp.shape[3],):
            raise ShapeError(f"BM conv bias {weights.v.shape} incompatible with banks {vp.shape}")
        self.weights = weights
        self.stride, self.padding = stride, padding
        self.act = _check_act(act)
        self.convertible = False
        self.approx = False
        self._cache = None

    @property
    def ksize(self) -> int:
        return self.weights.vplus.shape[0]

    def parameters(self):
        w = self.weights
        return {"vplus": w.vplus, "vminus": w.vminus, "v": w.v}

    def forward(self, x: Tensor, train: bool = False, ops: OpCount | None = None) -> Tensor:
        w = self.weights
        k, _, C, F = w.vplus.shape
        _check_conv_geometry(x, k, self.stride, C, self.padding)
        n = x.shape[0]
        out_hw = conv_output_hw(x.shape[1:3], k, self.stride, self.padding)
        xp, _ = _pad_image(x, k, self.stride, self.padding)
        # one log per input pixel, shared across filters and positions;
        # padding zeros land on the sentinel and never win a max
        labs = log_magnitude(xp, w.neg_sentinel, self.approx)
        spos = xp >= 0
        lcols = im2col(labs, k, self.stride, out_hw)
        scols = im2col(spos.astype(np.float64), k, self.stride, out_hw) > 0.5
        m, arg = bm_max_terms(lcols, scols, w.vplus.reshape(-1, F), w.vminus.reshape(-1, F), w.neg_sentinel)
        terms = _exp_terms(m, self.approx)
        z = _bm_combine(terms, w.v).reshape(n, *out_hw, F)
        if ops is not None:
            lo, mo = out_hw
            kkc = k * k * C
            ops.exp += n * 4 * F * lo * mo
            ops.log += n * C * lo * mo
            ops.add += n * 2 * F * (kkc + 2) * lo * mo
            ops.max += n * 2 * F * (kkc - 1) * lo * mo
            ops.activation += n * F * lo * mo
        if train:
            self._cache = (x.shape, xp, terms, arg, z, out_hw)
            self.last_terms = terms
        return _apply_act(z, self.act)

    def backward(self, grad: Tensor):
        w = self.weights
        x_shape, xp, terms, arg, z, out_hw = self._cache
        k, _, C, F = w.vplus.shape
        grad_pre = np.ascontiguousarray(_act_grad(grad, z, self.act).reshape(-1, F))
        kkc = k * k * C
        d_vp = np.zeros((kkc, F))
        d_vm = np.zeros((kkc, F))
        d_lcols = np.zeros((grad_pre.shape[0], kkc))
        bm_backward_into(terms, arg, grad_pre, d_vp, d_vm, d_lcols)
        self.d_vplus = d_vp.reshape(w.vplus.shape)
        self.d_vminus = d_vm.reshape(w.vminus.shape)
        self.d_v = grad_pre.sum(axis=0)
        d_labs = col2im(d_lcols, xp.shape, k, self.stride, out_hw)
        gxp = np.divide(d_labs, xp, out=np.zeros_like(xp), where=xp != 0)
        pt = (xp.shape[1] - x_shape[1]) // 2
        pl = (xp.shape[2] - x_shape[2]) // 2
        return gxp[:, pt : pt + x_shape[1], pl : pl + x_shape[2], :]

    def gradients(self):
        return {"vplus": self.d_vplus, "vminus": self.d_vminus, "v": self.d_v}


# ---------------------------------------------------------------------------
# architecture glue layers (never converted)


class ReLU:
    kind = "relu"
    convertible = False

    def parameters(self):
        return {}

    def forward(self, x: Tensor, train: bool = False, ops: OpCount | None = None) -> Tensor:
        if ops is not None:
            ops.activation += x.size
        if train:
            self._mask = x > 0
        return np.maximum(x, 0.0)

    def backward(self, grad: Tensor):
        return grad * self._mask

    def gradients(self):
        return {}


class BatchNorm:
    """Per-channel batch normalization over the trailing axis (NHWC / NC)."""

    kind = "batchnorm"
    convertible = False

    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5):
        self.gamma = np.ones(channels)
        self.beta = np.zeros(channels)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps
        self._cache = None

    def parameters(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def forward(self, x: Tensor, train: bool = False, ops: OpCount | None = None) -> Tensor:
        axes = tuple(range(x.ndim - 1))
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            self.running_mean = self.momentum * self.running_mean + (1 - self.momentum) * mean
            self.running_var = self.momentum * self.running_var + (1 - self.momentum) * var
        else:
            mean, var = self.running_mean, self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv
        if train:
            self._cache = (xhat, inv, axes, x.shape)
        return self.gamma * xhat + self.beta

    def backward(self, grad: Tensor):
        xhat, inv, axes, shape = self._cache
        m = np.prod([shape[a] for a in axes])
        self.d_gamma = (grad * xhat).sum(axis=axes)
        self.d_beta = grad.sum(axis=axes)
        gx = grad * self.gamma
        return inv * (gx - gx.mean(axis=axes) - xhat * (gx * xhat).mean(axis=axes)) if m > 1 else np.zeros(shape)

    def gradients(self):
        return {"gamma": self.d_gamma, "beta": self.d_beta}


class MaxPool2:
    """2x2 max pooling with stride 2; spatial extents must be even."""

    kind = "max-pool"
    convertible = False

    def parameters(self):
        return {}

    def forward(self, x: Tensor, train: bool = False, ops: OpCount | None = None) -> Tensor:
        n, h, w, c = x.shape
        if h % 2 or w % 2:
            raise ShapeError(f"max-pool needs even spatial extents, got {(h, w)}")
        windows = x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, h // 2, w // 2, c, 4)
        idx = windows.argmax(axis=-1)
        out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
        if train:
            self._cache = (x.shape, idx)
        return out

    def backward(self, grad: Tensor):
        (n, h, w, c), idx = self._cache
        gwin = np.zeros((n, h // 2, w // 2, c, 4))
        np.put_along_axis(gwin, idx[..., None], grad[..., None], axis=-1)
        return gwin.reshape(n, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, h, w, c)

    def gradients(self):
        return {}


class GlobalAvgPool:
    kind = "global-avg-pool"
    convertible = False

    def parameters(self):
        return {}

    def forward(self, x: Tensor, train: bool = False, ops: OpCount | None = None) -> Tensor:
        if train:
            self._shape = x.shape
        return x.mean(axis=(1, 2))

    def backward(self, grad: Tensor):
        n, h, w, c = self._shape
        return np.broadcast_to(grad[:, None, None, :], self._shape) / (h * w)

    def gradients(self):
        return {}


class Softmax:
    """Explicit softmax output layer; the trainer pairs it with a
    cross-entropy on its cached logits rather than backpropagating through
    the normalization twice."""

    kind = "softmax"
    convertible = False

    def parameters(self):
        return {}

    def forward(self, x: Tensor, train: bool = False, ops: OpCount | None = None) -> Tensor:
        if train:
            self._logits = x
        return softmax(x)

    def backward(self, grad: Tensor):
        # grad here is d loss / d logits supplied by the loss shortcut
        return grad

    def gradients(self):
        return {}


class ResidualBlock:
    """Pre-activation residual unit: out = body(x) + shortcut(x)."""

    kind = "residual-block"
    convertible = False

    def __init__(self, body: list, projection=None):
        self.body = body
        self.projection = projection

    def parameters(self):
        return {}

    def sublayers(self):
        out = list(self.body)
        if self.projection is not None:
            out.append(self.projection)
        return out

    def forward(self, x: Tensor, train: bool = False, ops: OpCount | None = None) -> Tensor:
        h = x
        for layer in self.body:
            h = layer.forward(h, train=train, ops=ops)
        sc = x if self.projection is None else self.projection.forward(x, train=train, ops=ops)
        if h.shape != sc.shape:
            raise ShapeError(f"residual endpoints disagree: {h.shape} vs {sc.shape}")
        return h + sc

    def backward(self, grad: Tensor):
        g = grad
        for layer in reversed(self.body):
            g = layer.backward(g)
        gsc = grad if self.projection is None else self.projection.backward(grad)
        return g + gsc

    def gradients(self):
        return {}


# ---------------------------------------------------------------------------
# loss


def softmax(logits: Tensor) -> Tensor:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels: Tensor) -> tuple[float, Tensor]:
    """Mean cross-entropy over the batch and its gradient w.r.t. logits."""
    n, ncls = logits.shape
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= ncls:
        raise DomainError(f"label out of range [0, {ncls})")
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(n), labels].mean()
    grad = softmax(logits)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n
