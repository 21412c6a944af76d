"""Differentiable layers with explicit forward/backward passes.

Every layer caches its forward input and exposes accumulated parameter
gradients through ``params()``. A layer instance is single-threaded:
forward and backward mutate the caches.
"""
import numpy as np

from .errors import ConfigError, LayerStateError, ShapeError
from .tensor import col2im, concat_channels, conv_out_size, im2col, negate


class Layer:
    """Base layer: stateless unless a subclass owns parameters."""

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, grad_out):
        raise NotImplementedError

    def params(self):
        """Yield (name, value, grad) triples for learnable parameters."""
        return []

    def zero_grads(self):
        for _, _, g in self.params():
            g[...] = 0.0

    def _require_forward(self, cache):
        if cache is None:
            raise LayerStateError(f"{type(self).__name__}: backward called before forward")

    def kink_signature(self):
        """Bytes identifying the active piece of a piecewise-linear layer.

        Smooth layers return b""; the gradient checker compares
        signatures across perturbations to spot crossings of
        non-differentiable points.
        """
        return b""


class Conv2D(Layer):
    """2-D cross-correlation (no kernel flip) lowered to a GEMM via im2col."""

    def __init__(self, in_channels, filters, kernel_size, stride=1, pad=0,
                 rng=None, init_std=0.01, dtype=np.float64):
        if filters < 1 or in_channels < 1:
            raise ConfigError(f"Conv2D needs positive channel counts, got {in_channels}->{filters}")
        rng = rng or np.random.default_rng()
        self.stride = stride
        self.pad = pad
        self.kh = self.kw = kernel_size
        self.weights = rng.normal(0.0, init_std,
                                  (filters, in_channels, kernel_size, kernel_size)).astype(dtype)
        self.bias = np.zeros(filters, dtype=dtype)
        self.w_grad = np.zeros_like(self.weights)
        self.b_grad = np.zeros_like(self.bias)
        self._cols = None
        self._x_shape = None

    def forward(self, x, train=False):
        f, c, kh, kw = self.weights.shape
        if x.ndim != 4 or x.shape[1] != c:
            raise ShapeError(f"Conv2D: input {x.shape} does not match weights {self.weights.shape}")
        n = x.shape[0]
        ho = conv_out_size(x.shape[2], kh, self.stride, self.pad)
        wo = conv_out_size(x.shape[3], kw, self.stride, self.pad)
        self._x_shape = x.shape
        self._cols = im2col(x, kh, kw, self.stride, self.pad)
        out = self.weights.reshape(f, -1) @ self._cols + self.bias[:, None]
        return out.reshape(f, n, ho, wo).transpose(1, 0, 2, 3)

    def backward(self, grad_out):
        self._require_forward(self._cols)
        f = self.weights.shape[0]
        n, fo, ho, wo = grad_out.shape
        if fo != f:
            raise ShapeError(f"Conv2D backward: grad channels {fo} != filters {f}")
        g = grad_out.transpose(1, 0, 2, 3).reshape(f, -1)
        self.w_grad += (g @ self._cols.T).reshape(self.weights.shape)
        self.b_grad += g.sum(axis=1)
        dcols = self.weights.reshape(f, -1).T @ g
        return col2im(dcols, self._x_shape, self.kh, self.kw, self.stride, self.pad)

    def params(self):
        return [("weights", self.weights, self.w_grad), ("bias", self.bias, self.b_grad)]


class MaxMin(Layer):
    """Concatenate the input with its negation along channels.

    Doubles map depth so that ReLU downstream keeps both strong positive
    and strong negative filter responses. Half ordering is
    [original | negated] and is part of the serialization contract.
    """

    def __init__(self):
        self._channels = None

    def forward(self, x, train=False):
        self._channels = x.shape[1]
        return concat_channels(x, negate(x))

    def backward(self, grad_out):
        self._require_forward(self._channels)
        c2 = grad_out.shape[1]
        if c2 % 2 != 0 or c2 != 2 * self._channels:
            raise ShapeError(
                f"MaxMin backward: expected {2 * self._channels} channels, got {c2}"
            )
        c = self._channels
        return grad_out[:, :c] - grad_out[:, c:]


class ReLU(Layer):
    """max(x, 0); subgradient at exactly 0 is 0."""

    def __init__(self):
        self._mask = None

    def forward(self, x, train=False):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad_out):
        self._require_forward(self._mask)
        return np.where(self._mask, grad_out, 0.0)

    def kink_signature(self):
        return self._mask.tobytes() if self._mask is not None else b""


class MaxPool(Layer):
    """Max pooling with edge-clamped windows.

    Output size is ceil((H - window)/stride) + 1; the last window along
    each axis clamps to the input edge, which preserves the 32->16->8->4
    progression for 3x3 windows at stride 2. Ties route the gradient to
    the first max in row-major window scan order.
    """

    def __init__(self, window=3, stride=2):
        if window < 1 or stride < 1:
            raise ConfigError(f"MaxPool: invalid window {window} / stride {stride}")
        self.window = window
        self.stride = stride
        self._cache = None

    def _out_extent(self, size):
        if size < self.window:
            raise ConfigError(f"MaxPool: window {self.window} exceeds input extent {size}")
        return -((size - self.window) // -self.stride) + 1

    def forward(self, x, train=False):
        n, c, h, w = x.shape
        ho, wo = self._out_extent(h), self._out_extent(w)
        out = np.empty((n, c, ho, wo), dtype=x.dtype)
        arg_i = np.empty((n, c, ho, wo), dtype=np.intp)
        arg_j = np.empty((n, c, ho, wo), dtype=np.intp)
        for i in range(ho):
            hs = min(i * self.stride, h - 1)
            he = min(hs + self.window, h)
            for j in range(wo):
                ws = min(j * self.stride, w - 1)
                we = min(ws + self.window, w)
                win = x[:, :, hs:he, ws:we].reshape(n, c, -1)
                flat = win.argmax(axis=2)
                out[:, :, i, j] = np.take_along_axis(win, flat[:, :, None], axis=2)[:, :, 0]
                arg_i[:, :, i, j] = hs + flat // (we - ws)
                arg_j[:, :, i, j] = ws + flat % (we - ws)
        self._cache = (x.shape, arg_i, arg_j)
        return out

    def backward(self, grad_out):
        self._require_forward(self._cache)
        x_shape, arg_i, arg_j = self._cache
        n, c = x_shape[:2]
        if grad_out.shape != arg_i.shape:
            raise ShapeError(f"MaxPool backward: grad shape {grad_out.shape} != {arg_i.shape}")
        dx = np.zeros(x_shape, dtype=grad_out.dtype)
        nn, cc = np.meshgrid(np.arange(n), np.arange(c), indexing="ij")
        nn = nn[:, :, None, None]
        cc = cc[:, :, None, None]
        np.add.at(dx, (nn, cc, arg_i, arg_j), grad_out)
        return dx

    def kink_signature(self):
        if self._cache is None:
            return b""
        _, arg_i, arg_j = self._cache
        return arg_i.tobytes() + arg_j.tobytes()


class LRN(Layer):
    """Cross-channel response normalization.

    out[c] = x[c] / (k + alpha * sum of x[c']^2 over |c'-c| <= radius)^beta,
    window clipped at channel boundaries. ``groups`` splits the channel
    axis into contiguous groups normalized independently; MaxMin presets
    use groups=2 so the original and negated halves never mix.
    """

    def __init__(self, depth_radius=2, k=1.0, alpha=1e-4, beta=0.75, groups=1):
        if k <= 0:
            raise ConfigError(f"LRN: k must be positive, got {k}")
        if depth_radius < 0:
            raise ConfigError(f"LRN: negative depth_radius {depth_radius}")
        self.radius = depth_radius
        self.k = k
        self.alpha = alpha
        self.beta = beta
        self.groups = groups
        self._cache = None

    def _window_sum(self, q):
        s = np.zeros_like(q)
        c = q.shape[1]
        for d in range(-self.radius, self.radius + 1):
            if d >= 0:
                s[:, :c - d] += q[:, d:]
            else:
                s[:, -d:] += q[:, :c + d]
        return s

    def forward(self, x, train=False):
        if x.shape[1] % self.groups != 0:
            raise ShapeError(f"LRN: {x.shape[1]} channels not divisible into {self.groups} groups")
        parts, cache = [], []
        gc = x.shape[1] // self.groups
        for g in range(self.groups):
            xg = x[:, g * gc:(g + 1) * gc]
            denom = self.k + self.alpha * self._window_sum(xg * xg)
            dpow = denom ** (-self.beta)
            parts.append(xg * dpow)
            cache.append((xg, denom, dpow))
        self._cache = cache
        return np.concatenate(parts, axis=1) if self.groups > 1 else parts[0]

    def backward(self, grad_out):
        self._require_forward(self._cache)
        parts = []
        gc = grad_out.shape[1] // self.groups
        for g, (xg, denom, dpow) in enumerate(self._cache):
            gg = grad_out[:, g * gc:(g + 1) * gc]
            t = gg * xg * dpow / denom
            parts.append(gg * dpow - 2.0 * self.alpha * self.beta * xg * self._window_sum(t))
        return np.concatenate(parts, axis=1) if self.groups > 1 else parts[0]


class Flatten(Layer):
    def __init__(self):
        self._shape = None

    def forward(self, x, train=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out):
        self._require_forward(self._shape)
        return grad_out.reshape(self._shape)


class Dense(Layer):
    """Fully connected layer, out = x @ W.T + b with W of shape (out, in)."""

    def __init__(self, in_features, out_features, rng=None, init_std=0.01, dtype=np.float64):
        rng = rng or np.random.default_rng()
        self.weights = rng.normal(0.0, init_std, (out_features, in_features)).astype(dtype)
        self.bias = np.zeros(out_features, dtype=dtype)
        self.w_grad = np.zeros_like(self.weights)
        self.b_grad = np.zeros_like(self.bias)
        self._x = None

    def forward(self, x, train=False):
        if x.ndim != 2 or x.shape[1] != self.weights.shape[1]:
            raise ShapeError(f"Dense: input {x.shape} does not match weights {self.weights.shape}")
        self._x = x
        return x @ self.weights.T + self.bias

    def backward(self, grad_out):
        self._require_forward(self._x)
        self.w_grad += grad_out.T @ self._x
        self.b_grad += grad_out.sum(axis=0)
        return grad_out @ self.weights

    def params(self):
        return [("weights", self.weights, self.w_grad), ("bias", self.bias, self.b_grad)]


class Dropout(Layer):
    """Inverted dropout: train-time masking with 1/(1-p) rescale, eval identity."""

    def __init__(self, p, rng=None):
        if not 0.0 <= p < 1.0:
            raise ConfigError(f"Dropout: p must be in [0, 1), got {p}")
        self.p = p
        self.rng = rng or np.random.default_rng()
        self._mask = None

    def forward(self, x, train=False):
        if not train or self.p == 0.0:
            self._mask = np.ones_like(x)
            return x
        keep = self.rng.random(x.shape) >= self.p
        self._mask = keep / (1.0 - self.p)
        return x * self._mask

    def backward(self, grad_out):
        self._require_forward(self._mask)
        return grad_out * self._mask


class SoftmaxCrossEntropy:
    """Row-stabilized softmax with mean negative log-likelihood loss."""

    def __init__(self):
        self._probs = None
        self._labels = None

    def forward(self, logits, labels):
        labels = np.asarray(labels)
        k = logits.shape[1]
        if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
            raise ShapeError(f"labels out of range [0, {k})")
        shifted = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        probs = e / e.sum(axis=1, keepdims=True)
        n = logits.shape[0]
        with np.errstate(divide="ignore"):  # inf loss surfaces as divergence upstream
            loss = -np.log(probs[np.arange(n), labels]).mean()
        self._probs = probs
        self._labels = labels
        return loss, probs

    def backward(self):
        if self._probs is None:
            raise LayerStateError("SoftmaxCrossEntropy: backward called before forward")
        n = self._probs.shape[0]
        grad = self._probs.copy()
        grad[np.arange(n), self._labels] -= 1.0
        return grad / n
