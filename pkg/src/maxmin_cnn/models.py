"""Network composition, architecture presets, and weight persistence."""
import dataclasses
import hashlib
import json
import struct

import numpy as np

from . import layers as L
from .errors import ConfigError, ShapeError, WeightFileError

LRN_DEFAULTS = dict(depth_radius=2, k=1.0, alpha=1e-4, beta=0.75)


@dataclasses.dataclass
class NetworkSpec:
    """Ordered layer descriptors plus input geometry.

    Each descriptor is a dict with a ``kind`` key ("conv", "maxmin",
    "relu", "pool", "lrn", "flatten", "dense", "dropout") and that
    layer's hyperparameters. Descriptors are fully explicit (channel
    counts included) so the spec alone determines every tensor shape.
    """
    input_shape: tuple          # (C, H, W)
    num_classes: int
    layers: list

    def to_json(self):
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    def spec_hash(self):
        return hashlib.sha256(self.to_json().encode()).digest()[:8]


class Network:
    """Sequential layer stack with a softmax cross-entropy head."""

    def __init__(self, spec, layer_objs, seed):
        self.spec = spec
        self.layers = layer_objs
        self.seed = seed
        self.loss_layer = L.SoftmaxCrossEntropy()

    def forward(self, x, train=False):
        for layer in self.layers:
            x = layer.forward(x, train=train)
        return x

    def loss(self, x, labels, train=False):
        logits = self.forward(x, train=train)
        loss, probs = self.loss_layer.forward(logits, labels)
        return loss, probs

    def backward(self):
        g = self.loss_layer.backward()
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def zero_grads(self):
        for layer in self.layers:
            layer.zero_grads()

    def params(self):
        """Yield (layer_index, name, value, grad) for every learnable tensor."""
        for i, layer in enumerate(self.layers):
            for name, value, grad in layer.params():
                yield i, name, value, grad

    def param_count(self):
        return sum(v.size for _, _, v, _ in self.params())


def _spatial_after(spec):
    """Walk descriptors and return the flattened feature length."""
    c, h, w = spec.input_shape
    for d in spec.layers:
        kind = d["kind"]
        if kind == "conv":
            if d["in"] != c:
                raise ConfigError(f"conv expects {d['in']} channels, chain provides {c}")
            c = d["filters"]
            h = (h + 2 * d["pad"] - d["kernel"]) // d["stride"] + 1
            w = (w + 2 * d["pad"] - d["kernel"]) // d["stride"] + 1
        elif kind == "maxmin":
            c *= 2
        elif kind == "pool":
            h = -((h - d["window"]) // -d["stride"]) + 1
            w = -((w - d["window"]) // -d["stride"]) + 1
        elif kind == "flatten":
            return c * h * w
    return c * h * w


def build_network(spec, seed=0, dtype=np.float64):
    """Instantiate a spec with seeded Gaussian(0, 0.01) weights, zero biases."""
    rng = np.random.default_rng(seed)
    objs = []
    for d in spec.layers:
        kind = d["kind"]
        if kind == "conv":
            objs.append(L.Conv2D(d["in"], d["filters"], d["kernel"], stride=d["stride"],
                                 pad=d["pad"], rng=rng, dtype=dtype))
        elif kind == "maxmin":
            objs.append(L.MaxMin())
        elif kind == "relu":
            objs.append(L.ReLU())
        elif kind == "pool":
            objs.append(L.MaxPool(window=d["window"], stride=d["stride"]))
        elif kind == "lrn":
            objs.append(L.LRN(depth_radius=d["depth_radius"], k=d["k"],
                              alpha=d["alpha"], beta=d["beta"], groups=d["groups"]))
        elif kind == "flatten":
            objs.append(L.Flatten())
        elif kind == "dense":
            objs.append(L.Dense(d["in"], d["out"], rng=rng, dtype=dtype))
        elif kind == "dropout":
            objs.append(L.Dropout(d["p"], rng=np.random.default_rng(rng.integers(2**63))))
        else:
            raise ConfigError(f"unknown layer kind {kind!r}")
    return Network(spec, objs, seed)


def _lrn_desc(groups):
    return dict(kind="lrn", groups=groups, **LRN_DEFAULTS)


def mnist_spec(kind="baseline", filters=(64, 64, 64)):
    """LeNet-style net: three conv->relu->pool->lrn blocks, one dense head.

    Inputs are 1x32x32 (28x28 digits zero-padded by 2). The maxmin
    variant inserts a MaxMin layer between each conv and its ReLU and
    widens every following layer to accept the doubled depth; LRN runs
    per half so the original and negated maps normalize independently.
    """
    return _conv_net_spec((1, 32, 32), kind, filters, fc_hidden=None)


def cifar_spec(kind="baseline", filters=(32, 32, 64), fc_hidden=64, boost=False):
    """Three conv blocks on 3x32x32 inputs with two dense layers.

    The plain variant has no LRN; ``boost`` appends LRN after each pool
    and dropout(0.5) before each dense layer.
    """
    return _conv_net_spec((3, 32, 32), kind, filters, fc_hidden=fc_hidden,
                          lrn="boost" if boost else "none", dropout=0.5 if boost else None)


def _conv_net_spec(input_shape, kind, filters, fc_hidden, lrn="always", dropout=None):
    if kind not in ("baseline", "maxmin"):
        raise ConfigError(f"unknown architecture kind {kind!r}")
    if any(f < 1 for f in filters):
        raise ConfigError(f"filter counts must be positive, got {filters}")
    maxmin = kind == "maxmin"
    descs = []
    c = input_shape[0]
    for f in filters:
        descs.append(dict(kind="conv", **{"in": c}, filters=f, kernel=5, stride=1, pad=2))
        if maxmin:
            descs.append(dict(kind="maxmin"))
        descs.append(dict(kind="relu"))
        descs.append(dict(kind="pool", window=3, stride=2))
        if lrn in ("always", "boost"):
            descs.append(_lrn_desc(groups=2 if maxmin else 1))
        c = 2 * f if maxmin else f
    descs.append(dict(kind="flatten"))
    spec = NetworkSpec(input_shape=tuple(input_shape), num_classes=10, layers=descs)
    flat = _spatial_after(spec)
    if fc_hidden is not None:
        if dropout:
            descs.append(dict(kind="dropout", p=dropout))
        descs.append(dict(kind="dense", **{"in": flat}, out=fc_hidden))
        descs.append(dict(kind="relu"))
        flat = fc_hidden
    if dropout:
        descs.append(dict(kind="dropout", p=dropout))
    descs.append(dict(kind="dense", **{"in": flat}, out=10))
    return spec


def build_mnist(kind="baseline", filters=(64, 64, 64), seed=0, dtype=np.float64):
    return build_network(mnist_spec(kind, filters), seed=seed, dtype=dtype)


def build_cifar(kind="baseline", filters=(32, 32, 64), fc_hidden=64, boost=False,
                seed=0, dtype=np.float64):
    return build_network(cifar_spec(kind, filters, fc_hidden, boost), seed=seed, dtype=dtype)


def param_count(net):
    return net.param_count()


def matched_maxmin_filters(spec_fn, base_filters, tolerance=0.15, **spec_kwargs):
    """Pick maxmin conv filter counts whose parameter total tracks the baseline.

    Keeps the dense-layer neuron counts fixed and scales only the conv
    filter counts (seeded at half the baseline's), choosing the scale
    whose total parameter count is closest to the baseline's. Raises if
    no scale lands within ``tolerance`` relative difference.
    """
    target = build_network(spec_fn("baseline", tuple(base_filters), **spec_kwargs)).param_count()
    best = None
    for scale_pct in range(40, 101):
        cand = tuple(max(1, round(f * scale_pct / 100)) for f in base_filters)
        count = build_network(spec_fn("maxmin", cand, **spec_kwargs)).param_count()
        rel = abs(count - target) / target
        if best is None or rel < best[0]:
            best = (rel, cand, count)
    if best[0] > tolerance:
        raise ConfigError(
            f"no maxmin filter scaling matches {base_filters} within {tolerance:.0%}"
        )
    return best[1]


# -- reduction pairing ------------------------------------------------------

def baseline_of(spec):
    """Baseline spec reachable from a maxmin spec by dropping the doubling."""
    descs = []
    c_prev = None
    for d in spec.layers:
        d = dict(d)
        if d["kind"] == "maxmin":
            continue
        if d["kind"] == "conv":
            if c_prev is not None:
                d["in"] = c_prev
            c_prev = d["filters"]
        elif d["kind"] == "dense":
            d["in"] = d["in"] // 2 if _consumes_doubled(spec, d) else d["in"]
        elif d["kind"] == "lrn":
            d["groups"] = 1
        descs.append(d)
    out = NetworkSpec(input_shape=spec.input_shape, num_classes=spec.num_classes, layers=descs)
    return out


def _doubled_consumers(spec):
    """Indices of descriptors whose input depth was doubled by a maxmin."""
    doubled = False
    consumers = set()
    for i, d in enumerate(spec.layers):
        if d["kind"] == "maxmin":
            doubled = True
        elif d["kind"] in ("conv", "dense"):
            if doubled:
                consumers.add(i)
            doubled = False
    return consumers


def _consumes_doubled(spec, desc):
    for i, d in enumerate(spec.layers):
        if d is desc or d == desc:
            return i in _doubled_consumers(spec)
    return False


def reduce_to_baseline(maxmin_net, dtype=np.float64):
    """Realize the zero-extra-weights reduction of a maxmin network.

    Returns (reduced, baseline): ``reduced`` is a copy of the maxmin net
    whose weights reading negated-half channels are zeroed; ``baseline``
    is the plain net carrying the surviving first-half weights. The two
    compute identical logits on every input.
    """
    spec = maxmin_net.spec
    reduced = build_network(spec, seed=maxmin_net.seed, dtype=dtype)
    for (_, _, dst, _), (_, _, src, _) in zip(reduced.params(), maxmin_net.params()):
        dst[...] = src
    base = build_network(baseline_of(spec), seed=maxmin_net.seed, dtype=dtype)

    consumers = _doubled_consumers(spec)
    red_layers = [(i, l) for i, l in enumerate(reduced.layers)
                  if isinstance(l, (L.Conv2D, L.Dense))]
    base_layers = [l for l in base.layers if isinstance(l, (L.Conv2D, L.Dense))]
    for (i, rl), bl in zip(red_layers, base_layers):
        half = bl.weights.shape[1]
        if i in consumers:
            rl.weights[:, half:] = 0.0
            bl.weights[...] = rl.weights[:, :half]
        else:
            bl.weights[...] = rl.weights
        bl.bias[...] = rl.bias
    return reduced, base


# -- weight files -----------------------------------------------------------

MAGIC = b"MAXMIN01"


def save_weights(net, path):
    """Little-endian binary: magic, 8-byte spec hash, then per-parameter
    tensors as (rank: u32, dims: u64..., raw float64 data)."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(net.spec.spec_hash())
        for _, _, value, _ in net.params():
            fh.write(struct.pack("<I", value.ndim))
            fh.write(struct.pack(f"<{value.ndim}Q", *value.shape))
            fh.write(value.astype("<f8").tobytes())


def load_weights(path, spec, seed=0, dtype=np.float64):
    """Rebuild a network for ``spec`` and fill it from a weight file."""
    net = build_network(spec, seed=seed, dtype=dtype)
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MAGIC:
        raise WeightFileError(f"{path}: not a weight file (bad magic)")
    if blob[8:16] != spec.spec_hash():
        raise WeightFileError(f"{path}: weight file was saved for a different architecture")
    off = 16
    for _, name, value, _ in net.params():
        try:
            if off + 4 > len(blob):
                raise struct.error("header")
            (rank,) = struct.unpack_from("<I", blob, off)
            off += 4
            dims = struct.unpack_from(f"<{rank}Q", blob, off)
            off += 8 * rank
            nbytes = 8 * int(np.prod(dims, dtype=np.int64))
            if off + nbytes > len(blob):
                raise struct.error("payload")
            data = np.frombuffer(blob, dtype="<f8", count=int(np.prod(dims, dtype=np.int64)),
                                 offset=off)
            off += nbytes
        except struct.error as exc:
            raise WeightFileError(f"{path}: truncated at byte {off} reading {name}") from exc
        if tuple(dims) != value.shape:
            raise WeightFileError(f"{path}: tensor {name} has shape {dims}, expected {value.shape}")
        value[...] = data.reshape(value.shape).astype(dtype)
    if off != len(blob):
        raise WeightFileError(f"{path}: {len(blob) - off} trailing bytes after last tensor")
    return net
