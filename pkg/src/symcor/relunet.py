"""ReLU feed-forward networks as explicit affine algebra.

A network is a stack of dense layers, every hidden layer rectified, the
final layer linear with at least two logits.  Because the rectifier is
piecewise linear, fixing the on/off state of every hidden neuron turns
the whole network into a single affine map; those fixed-activation views
are what the constraint builders downstream consume.

Conventions used throughout:

* a pre-activation of exactly zero counts as *active* (``z >= 0``), and
  the matching subgradient of the rectifier at zero is 1;
* hidden neurons are indexed globally, layer by layer, so neuron ``r``
  of an ``(h0, h1, ...)`` stack lives in the first layer with
  ``r < h0 + ... + hk``;
* ``classify`` breaks argmax ties toward the lowest class index.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

Array = np.ndarray

ACTIVATIONS = ("relu", "linear")


class NetworkFormatError(ValueError):
    """Serialized network data violates the schema; message names the path."""


def _frozen(a) -> Array:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Layer:
    """One dense layer: ``activation(weights @ x + bias)``."""

    weights: Array  # (out, in)
    bias: Array     # (out,)
    activation: str

    def __post_init__(self):
        w = _frozen(self.weights)
        b = _frozen(self.bias)
        if w.ndim != 2 or w.shape[0] < 1 or w.shape[1] < 1:
            raise ValueError("layer weights must be a non-empty matrix")
        if b.shape != (w.shape[0],):
            raise ValueError(
                "bias length %r does not match %d weight rows" % (b.shape, w.shape[0])
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError("unknown activation %r" % (self.activation,))
        if not (np.isfinite(w).all() and np.isfinite(b).all()):
            raise ValueError("layer parameters must be finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class Network:
    """Immutable layer stack; all hidden layers relu, final linear, >= 2 logits."""

    layers: tuple[Layer, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValueError("network needs at least one layer")
        for i in range(1, len(layers)):
            if layers[i].in_dim != layers[i - 1].out_dim:
                raise ValueError(
                    "layer %d expects %d inputs but layer %d emits %d"
                    % (i, layers[i].in_dim, i - 1, layers[i - 1].out_dim)
                )
        for i, layer in enumerate(layers[:-1]):
            if layer.activation != "relu":
                raise ValueError("hidden layer %d must be relu" % i)
        final = layers[-1]
        if final.activation != "linear" or final.out_dim < 2:
            raise ValueError("final layer must be linear with at least 2 logits")
        object.__setattr__(self, "layers", layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def n_logits(self) -> int:
        return self.layers[-1].out_dim

    @property
    def hidden_sizes(self) -> tuple[int, ...]:
        return tuple(layer.out_dim for layer in self.layers[:-1])

    @property
    def n_hidden(self) -> int:
        return sum(self.hidden_sizes)

    def layer_of_neuron(self, r: int) -> tuple[int, int]:
        """Map a global hidden-neuron index to ``(layer, index_in_layer)``."""
        if r < 0:
            raise IndexError("neuron index %d out of range" % r)
        offset = 0
        for j, size in enumerate(self.hidden_sizes):
            if r < offset + size:
                return j, r - offset
            offset += size
        raise IndexError("neuron index %d out of range" % r)


@dataclass(frozen=True)
class AffineMap:
    """``x -> matrix @ x + offset``, applied along the last axis."""

    matrix: Array  # (k, d)
    offset: Array  # (k,)

    def __post_init__(self):
        m = _frozen(self.matrix)
        c = _frozen(self.offset)
        if m.ndim != 2 or c.shape != (m.shape[0],):
            raise ValueError("affine map shapes disagree: %r vs %r" % (m.shape, c.shape))
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "offset", c)

    def __call__(self, x: Array) -> Array:
        x = np.asarray(x, dtype=float)
        return x @ self.matrix.T + self.offset


def forward(net: Network, x: Array) -> Array:
    """Evaluate the network; accepts a single vector or a batch ``(..., d)``."""
    h = np.asarray(x, dtype=float)
    if h.shape[-1] != net.input_dim:
        raise ValueError(
            "input has %d features, network expects %d" % (h.shape[-1], net.input_dim)
        )
    for layer in net.layers:
        z = h @ layer.weights.T + layer.bias
        h = np.maximum(z, 0.0) if layer.activation == "relu" else z
    return h


def classify(net: Network, x: Array) -> int | Array:
    """Argmax label; ties go to the lowest class index (np.argmax semantics)."""
    logits = forward(net, x)
    labels = np.argmax(logits, axis=-1)
    return int(labels) if labels.ndim == 0 else labels


def get_activations(net: Network, x: Array) -> Array:
    """Boolean on/off pattern over all hidden neurons at input ``x``.

    A pre-activation of exactly zero reports True (active).
    """
    h = np.asarray(x, dtype=float)
    if h.shape != (net.input_dim,):
        raise ValueError("expected a single input of shape (%d,)" % net.input_dim)
    bits = []
    for layer in net.layers[:-1]:
        z = layer.weights @ h + layer.bias
        bits.append(z >= 0.0)
        h = np.maximum(z, 0.0)
    return np.concatenate(bits) if bits else np.zeros(0, dtype=bool)


def _check_pattern(net: Network, pattern: Array) -> Array:
    p = np.asarray(pattern, dtype=bool)
    if p.shape != (net.n_hidden,):
        raise ValueError(
            "pattern has %r bits, network has %d hidden neurons" % (p.shape, net.n_hidden)
        )
    return p


def _prefix_maps(net: Network, pattern: Array):
    """Affine maps from the raw input to each hidden layer's input, with all
    shallower layers pinned to ``pattern``.  Yields one (matrix, offset) pair
    per hidden layer; the pair for layer j does not use layer j's own bits.
    """
    d = net.input_dim
    m = np.eye(d)
    c = np.zeros(d)
    offset = 0
    for layer in net.layers[:-1]:
        yield m, c
        gate = pattern[offset : offset + layer.out_dim].astype(float)
        m = gate[:, None] * (layer.weights @ m)
        c = gate * (layer.weights @ c + layer.bias)
        offset += layer.out_dim
    yield m, c  # input to the final layer


def fixed_affine(net: Network, pattern: Array) -> AffineMap:
    """The network as a single affine map with activations pinned to ``pattern``.

    Rows of rectifiers whose pattern bit is False are zeroed; where the
    pattern matches the true activations of a point, this map reproduces
    ``forward`` exactly.
    """
    pattern = _check_pattern(net, pattern)
    *_, (m, c) = _prefix_maps(net, pattern)
    final = net.layers[-1]
    return AffineMap(final.weights @ m, final.weights @ c + final.bias)


def preactivation_matrix(net: Network, pattern: Array) -> AffineMap:
    """Pre-activations of every hidden neuron as one affine map of the input.

    Row ``r`` is neuron r's pre-activation with all layers *shallower* than
    r's layer pinned to ``pattern``; r's own bit is never consulted.
    """
    pattern = _check_pattern(net, pattern)
    rows = []
    offs = []
    maps = _prefix_maps(net, pattern)
    for layer in net.layers[:-1]:
        m, c = next(maps)
        rows.append(layer.weights @ m)
        offs.append(layer.weights @ c + layer.bias)
    if not rows:
        return AffineMap(np.zeros((0, net.input_dim)), np.zeros(0))
    return AffineMap(np.vstack(rows), np.concatenate(offs))


def preactivation_affine(net: Network, pattern: Array, r: int) -> AffineMap:
    """Single-row view of :func:`preactivation_matrix` for neuron ``r``."""
    net.layer_of_neuron(r)  # range check with a precise error
    full = preactivation_matrix(net, pattern)
    return AffineMap(full.matrix[r : r + 1], full.offset[r : r + 1])


def gradient(net: Network, x: Array, objective: tuple[int, int]) -> Array:
    """Gradient of ``logits[c_pos] - logits[c_neg]`` at ``x``.

    Uses the fixed-activation view at x's own pattern, so the rectifier's
    subgradient at zero is 1, matching the active-at-zero convention.
    """
    c_pos, c_neg = objective
    n = net.n_logits
    if not (0 <= c_pos < n and 0 <= c_neg < n):
        raise ValueError("objective classes %r out of range for %d logits" % (objective, n))
    pattern = get_activations(net, x)
    m = fixed_affine(net, pattern).matrix
    return m[c_pos] - m[c_neg]


def save_network(net: Network) -> str:
    """Serialize to the canonical JSON schema (exact float round-trip)."""
    return json.dumps(
        {
            "layers": [
                {
                    "weights": layer.weights.tolist(),
                    "bias": layer.bias.tolist(),
                    "activation": layer.activation,
                }
                for layer in net.layers
            ]
        }
    )


def _load_matrix(raw, path: str) -> Array:
    try:
        arr = np.array(raw, dtype=float)
    except (TypeError, ValueError):
        raise NetworkFormatError("%s: expected a rectangular numeric matrix" % path) from None
    if arr.ndim != 2:
        raise NetworkFormatError("%s: expected a matrix, got %d-d data" % (path, arr.ndim))
    bad = np.argwhere(~np.isfinite(arr))
    if bad.size:
        r, c = bad[0]
        raise NetworkFormatError("%s[%d][%d]: non-finite value" % (path, r, c))
    return arr


def _load_vector(raw, path: str) -> Array:
    try:
        arr = np.array(raw, dtype=float)
    except (TypeError, ValueError):
        raise NetworkFormatError("%s: expected a numeric vector" % path) from None
    if arr.ndim != 1:
        raise NetworkFormatError("%s: expected a vector, got %d-d data" % (path, arr.ndim))
    bad = np.argwhere(~np.isfinite(arr))
    if bad.size:
        raise NetworkFormatError("%s[%d]: non-finite value" % (path, bad[0][0]))
    return arr


def load_network(data: str | bytes) -> Network:
    """Parse the JSON schema, naming the offending path on any violation."""
    if isinstance(data, (bytes, bytearray)):
        data = data.decode("utf-8")
    try:
        obj = json.loads(data)
    except json.JSONDecodeError as exc:
        raise NetworkFormatError("not valid JSON: %s" % exc) from None
    if not isinstance(obj, dict) or "layers" not in obj:
        raise NetworkFormatError("top level: expected an object with a 'layers' array")
    raw_layers = obj["layers"]
    if not isinstance(raw_layers, list) or not raw_layers:
        raise NetworkFormatError("layers: expected a non-empty array")

    layers = []
    prev_out = None
    for i, item in enumerate(raw_layers):
        path = "layers[%d]" % i
        if not isinstance(item, dict):
            raise NetworkFormatError("%s: expected an object" % path)
        for key in ("weights", "bias", "activation"):
            if key not in item:
                raise NetworkFormatError("%s.%s: missing" % (path, key))
        w = _load_matrix(item["weights"], path + ".weights")
        b = _load_vector(item["bias"], path + ".bias")
        act = item["activation"]
        if act not in ACTIVATIONS:
            raise NetworkFormatError(
                "%s.activation: expected 'relu' or 'linear', got %r" % (path, act)
            )
        if b.shape[0] != w.shape[0]:
            raise NetworkFormatError(
                "%s.bias: expected length %d, got %d" % (path, w.shape[0], b.shape[0])
            )
        if prev_out is not None and w.shape[1] != prev_out:
            raise NetworkFormatError(
                "%s.weights: expected %d columns, got %d" % (path, prev_out, w.shape[1])
            )
        prev_out = w.shape[0]
        last = i == len(raw_layers) - 1
        if last and (act != "linear" or w.shape[0] < 2):
            raise NetworkFormatError(
                "%s: final layer must be linear with at least 2 outputs" % path
            )
        if not last and act != "relu":
            raise NetworkFormatError("%s.activation: hidden layers must be 'relu'" % path)
        layers.append(Layer(w, b, act))
    return Network(tuple(layers))
