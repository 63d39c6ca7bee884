"""Dense float64 kernels for sequential CNN inference and logit backprop.

Tensors are plain ``numpy.ndarray`` objects in float64, laid out row-major.
Images and feature maps use channel-first ``(C, H, W)`` axes; dense vectors
are 1-D.

Two properties are load-bearing for the rest of the package and are kept
deliberately, at some cost in raw speed:

* No BLAS calls. Every kernel is elementwise numpy arithmetic plus explicit
  accumulation loops, so results are bit-identical across runs, platforms,
  and caller thread counts.
* The per-element accumulation order of each kernel equals the naive
  nested-loop definition (bias first, then summation indices in ascending
  row-major order). A brute-force reference implementation therefore
  reproduces the outputs exactly, not merely approximately.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, InputError, UsageError

__all__ = [
    "as_tensor",
    "conv2d_forward",
    "conv2d_backward_input",
    "relu_forward",
    "relu_backward",
    "maxpool_forward",
    "maxpool_backward",
    "dense_forward",
    "dense_backward_input",
    "flatten_forward",
    "softmax",
    "LayerTrace",
    "backward_to_layer",
    "backward_from_seed",
]


def as_tensor(values) -> np.ndarray:
    """Coerce array-like input to a float64 ndarray (copying only if needed)."""
    return np.asarray(values, dtype=np.float64)


def _out_extent(name: str, size: int, kernel: int, stride: int, padding: int) -> int:
    """Output extent of a sliding window, or raise if it is not a positive integer."""
    span = size + 2 * padding - kernel
    if span < 0 or span % stride != 0:
        raise ConfigurationError(
            f"window does not tile the {name} axis: "
            f"({size} + 2*{padding} - {kernel}) / {stride} + 1 is not a positive integer"
        )
    return span // stride + 1


# ---------------------------------------------------------------------------
# forward kernels
# ---------------------------------------------------------------------------

def conv2d_forward(
    input: np.ndarray,
    weights: np.ndarray,
    bias: np.ndarray,
    stride: int = 1,
    padding: int = 0,
) -> np.ndarray:
    """Cross-correlate ``input`` (C_in, H, W) with ``weights`` (C_out, C_in, kH, kW).

    out[o, i, j] = bias[o] + sum_{c,u,v} input[c, i*stride+u-padding, j*stride+v-padding]
                                         * weights[o, c, u, v]

    Out-of-bounds input positions contribute zero. No kernel flip: this is
    the cross-correlation convention mainstream frameworks export weights in.
    """
    x = as_tensor(input)
    w = as_tensor(weights)
    b = as_tensor(bias)
    if x.ndim != 3:
        raise ConfigurationError(f"conv2d: input must be 3-d (C,H,W), got shape {x.shape}")
    if w.ndim != 4:
        raise ConfigurationError(f"conv2d: weights must be 4-d (C_out,C_in,kH,kW), got shape {w.shape}")
    c_in, h, wdt = x.shape
    c_out, wc_in, kh, kw = w.shape
    if wc_in != c_in:
        raise ConfigurationError(
            f"conv2d: input has {c_in} channels but weights expect {wc_in} (weights C_in dimension)"
        )
    if b.shape != (c_out,):
        raise ConfigurationError(f"conv2d: bias must have shape ({c_out},), got {b.shape}")
    if stride < 1:
        raise ConfigurationError(f"conv2d: stride must be positive, got {stride}")
    if padding < 0:
        raise ConfigurationError(f"conv2d: padding must be non-negative, got {padding}")
    h_out = _out_extent("height", h, kh, stride, padding)
    w_out = _out_extent("width", wdt, kw, stride, padding)

    x_pad = np.zeros((c_in, h + 2 * padding, wdt + 2 * padding))
    x_pad[:, padding:padding + h, padding:padding + wdt] = x

    out = np.empty((c_out, h_out, w_out))
    for o in range(c_out):
        # Accumulation order per output element: bias, then (c, u, v) ascending,
        # matching the six-nested-loop definition term for term.
        acc = np.full((h_out, w_out), b[o])
        for c in range(c_in):
            for u in range(kh):
                for v in range(kw):
                    window = x_pad[
                        c,
                        u:u + stride * (h_out - 1) + 1:stride,
                        v:v + stride * (w_out - 1) + 1:stride,
                    ]
                    acc += w[o, c, u, v] * window
        out[o] = acc
    return out


def relu_forward(input: np.ndarray) -> np.ndarray:
    """Elementwise max(0, x); shape preserved."""
    return np.maximum(0.0, as_tensor(input))


def maxpool_forward(
    input: np.ndarray, kernel: int, stride: int
) -> tuple[np.ndarray, np.ndarray]:
    """Max-pool ``input`` (C, H, W) with a square window.

    Returns ``(pooled, argmax)`` where ``argmax[c, i, j]`` is the flat index
    into ``input`` of the window maximum. Ties resolve to the first maximal
    element in row-major window order, which fixes backward routing.
    """
    x = as_tensor(input)
    if x.ndim != 3:
        raise ConfigurationError(f"maxpool: input must be 3-d (C,H,W), got shape {x.shape}")
    if kernel < 1 or stride < 1:
        raise ConfigurationError(f"maxpool: kernel and stride must be positive, got {kernel}, {stride}")
    c, h, w = x.shape
    h_out = _out_extent("height", h, kernel, stride, 0)
    w_out = _out_extent("width", w, kernel, stride, 0)

    windows = sliding_window_view(x, (kernel, kernel), axis=(1, 2))[:, ::stride, ::stride]
    flat = windows.reshape(c, h_out, w_out, kernel * kernel)
    pooled = flat.max(axis=3)
    within = flat.argmax(axis=3)  # first maximum, row-major within the window

    u, v = within // kernel, within % kernel
    abs_i = (np.arange(h_out) * stride)[None, :, None] + u
    abs_j = (np.arange(w_out) * stride)[None, None, :] + v
    argmax = np.arange(c)[:, None, None] * (h * w) + abs_i * w + abs_j
    return pooled, argmax


def dense_forward(input: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Affine map: out[m] = bias[m] + sum_n weights[m, n] * input[n]."""
    x = as_tensor(input)
    w = as_tensor(weights)
    b = as_tensor(bias)
    if x.ndim != 1:
        raise ConfigurationError(f"dense: input must be 1-d, got shape {x.shape}")
    if w.ndim != 2:
        raise ConfigurationError(f"dense: weights must be 2-d (M,N), got shape {w.shape}")
    m, n = w.shape
    if x.shape[0] != n:
        raise ConfigurationError(
            f"dense: input has length {x.shape[0]} but weights expect {n} (weights N dimension)"
        )
    if b.shape != (m,):
        raise ConfigurationError(f"dense: bias must have shape ({m},), got {b.shape}")
    out = b.copy()
    for col in range(n):  # same per-element order as the double-loop definition
        out += w[:, col] * x[col]
    return out


def flatten_forward(input: np.ndarray) -> np.ndarray:
    """Row-major flatten to 1-D."""
    return as_tensor(input).reshape(-1)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Max-shifted softmax; overflow-safe, values in (0, 1], sums to 1."""
    z = as_tensor(logits)
    if z.ndim != 1 or z.shape[0] < 1:
        raise ConfigurationError(f"softmax: logits must be a non-empty 1-d tensor, got shape {z.shape}")
    e = np.exp(z - z.max())
    return e / e.sum()


# ---------------------------------------------------------------------------
# backward kernels (input gradients only; this library does not train)
# ---------------------------------------------------------------------------

def relu_backward(grad_out: np.ndarray, forward_input: np.ndarray) -> np.ndarray:
    """Route gradient where the forward input was strictly positive."""
    return as_tensor(grad_out) * (as_tensor(forward_input) > 0.0)


def maxpool_backward(
    grad_out: np.ndarray, argmax: np.ndarray, input_shape: tuple[int, ...]
) -> np.ndarray:
    """Scatter the output gradient onto the recorded argmax positions.

    Overlapping windows may share an argmax; contributions accumulate, so the
    total routed mass equals the total incoming mass.
    """
    g = as_tensor(grad_out)
    dx = np.zeros(int(np.prod(input_shape)))
    np.add.at(dx, np.asarray(argmax).ravel(), g.ravel())
    return dx.reshape(input_shape)


def dense_backward_input(grad_out: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """grad_in[n] = sum_m weights[m, n] * grad_out[m]."""
    g = as_tensor(grad_out)
    w = as_tensor(weights)
    grad_in = np.zeros(w.shape[1])
    for m in range(w.shape[0]):
        grad_in += w[m] * g[m]
    return grad_in


def conv2d_backward_input(
    grad_out: np.ndarray,
    weights: np.ndarray,
    stride: int,
    padding: int,
    input_shape: tuple[int, int, int],
) -> np.ndarray:
    """Gradient of a conv2d output w.r.t. its input (full transposed scatter)."""
    g = as_tensor(grad_out)
    w = as_tensor(weights)
    c_in, h, wdt = input_shape
    c_out, _, kh, kw = w.shape
    h_out, w_out = g.shape[1], g.shape[2]

    dx_pad = np.zeros((c_in, h + 2 * padding, wdt + 2 * padding))
    for o in range(c_out):
        for c in range(c_in):
            for u in range(kh):
                for v in range(kw):
                    dx_pad[
                        c,
                        u:u + stride * (h_out - 1) + 1:stride,
                        v:v + stride * (w_out - 1) + 1:stride,
                    ] += w[o, c, u, v] * g[o]
    return dx_pad[:, padding:padding + h, padding:padding + wdt]


# ---------------------------------------------------------------------------
# recorded layers and reverse traversal
# ---------------------------------------------------------------------------

@dataclass
class LayerTrace:
    """One executed layer plus the state its backward pass needs.

    Field usage by kind:
      conv2d  -> weights, stride, padding
      relu    -> relu_mask (forward input > 0)
      maxpool -> argmax
      dense   -> weights
      flatten -> (input_shape only)
      softmax -> nothing; only legal as the final trace and skipped on the
                 way back, because gradients are taken at the pre-softmax
                 logits.
    """

    kind: str
    input_shape: tuple[int, ...]
    weights: np.ndarray | None = None
    stride: int = 1
    padding: int = 0
    relu_mask: np.ndarray | None = None
    argmax: np.ndarray | None = field(default=None, repr=False)


def backward_from_seed(traces: list[LayerTrace], seed: np.ndarray) -> np.ndarray:
    """Propagate an arbitrary logit-space gradient back through ``traces``.

    ``seed`` is the gradient w.r.t. the output of the last non-softmax trace.
    Returns the gradient w.r.t. the input of the first trace.
    """
    if traces is None:
        raise UsageError("backward requires cached forward state; run a forward pass first")
    grad = as_tensor(seed)
    for pos, trace in enumerate(reversed(traces)):
        if trace.kind == "softmax":
            if pos != 0:
                raise UsageError("softmax is only supported as the final layer")
            continue  # d(logit)/d(logit): identity
        if trace.kind == "dense":
            if trace.weights is None:
                raise UsageError("dense trace is missing cached weights")
            grad = dense_backward_input(grad, trace.weights)
        elif trace.kind == "relu":
            if trace.relu_mask is None:
                raise UsageError("relu trace is missing its cached sign mask")
            grad = grad * trace.relu_mask
        elif trace.kind == "maxpool":
            if trace.argmax is None:
                raise UsageError("maxpool trace is missing cached argmax indices")
            grad = maxpool_backward(grad, trace.argmax, trace.input_shape)
        elif trace.kind == "flatten":
            grad = grad.reshape(trace.input_shape)
        elif trace.kind == "conv2d":
            if trace.weights is None:
                raise UsageError("conv2d trace is missing cached weights")
            grad = conv2d_backward_input(
                grad, trace.weights, trace.stride, trace.padding, trace.input_shape
            )
        else:
            raise UsageError(f"unknown layer kind in trace: {trace.kind!r}")
    return grad


def backward_to_layer(
    traces: list[LayerTrace], seed_class: int, num_logits: int
) -> np.ndarray:
    """Gradient of the pre-softmax logit ``seed_class`` w.r.t. the input of
    ``traces[0]``.

    ``traces`` is the recorded tail of the network, i.e. every layer executed
    after the activation the gradient is wanted for.
    """
    if not 0 <= seed_class < num_logits:
        raise InputError(f"class index {seed_class} out of range [0, {num_logits})")
    seed = np.zeros(num_logits)
    seed[seed_class] = 1.0
    return backward_from_seed(traces, seed)
