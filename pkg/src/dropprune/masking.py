"""Pruning state: the binary weight mask, masked training semantics, and
checkpoint serialization.

Flat index convention: weight entries are numbered layer by layer, row-major
within each layer, biases excluded. All mask bookkeeping and the prune engine
use this one index space.

Checkpoint layout (little-endian, documented for external readers):

    magic   4 bytes  b"DPRN"
    version u32      currently 1
    layers  u32      number of dense layers
    per layer: fan_in u32, fan_out u32, activation u8 (0=relu, 1=identity,
               2=softmax), loss handling is implied (cross-entropy)
    weights: per layer, fan_in*fan_out f64 row-major
    biases:  per layer, fan_out f64
    mask:    ceil(weight_count / 8) bytes, packed bits over the flat weight
             index space, least-significant bit first

Round-trips are bitwise lossless.
"""

import struct

import numpy as np

from dropprune.nn import Network, DenseLayer, RELU, IDENTITY, SOFTMAX

_MAGIC = b"DPRN"
_VERSION = 1
_ACT_CODES = {RELU: 0, IDENTITY: 1, SOFTMAX: 2}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}


class Mask:
    """Binary pruning state over the weight entries of a network.

    bits[i] == True means weight i is live (unpruned). The support count is
    tracked incrementally and can be recomputed from scratch for auditing.
    """

    def __init__(self, layer_shapes, bits=None):
        self.layer_shapes = [(int(fi), int(fo)) for fi, fo in layer_shapes]
        sizes = [fi * fo for fi, fo in self.layer_shapes]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        total = int(self.offsets[-1])
        if bits is None:
            self.bits = np.ones(total, dtype=bool)
        else:
            bits = np.asarray(bits, dtype=bool)
            if bits.shape != (total,):
                raise ValueError(f"mask length {bits.shape} != weight count {total}")
            self.bits = bits.copy()
        self._support = int(np.count_nonzero(self.bits))

    @property
    def size(self):
        return int(self.offsets[-1])

    @property
    def num_layers(self):
        return len(self.layer_shapes)

    def copy(self):
        return Mask(self.layer_shapes, self.bits)

    def _check_layer(self, k):
        if not (0 <= k < self.num_layers):
            raise IndexError(f"layer index {k} out of range [0, {self.num_layers})")

    def layer_slice(self, k):
        self._check_layer(k)
        return slice(int(self.offsets[k]), int(self.offsets[k + 1]))

    def layer_view(self, k):
        """Writable [fan_in, fan_out] view of layer k's bits."""
        fi, fo = self.layer_shapes[k]
        return self.bits[self.layer_slice(k)].reshape(fi, fo)

    def support_size(self, layer=None):
        if layer is None:
            return self._support
        return int(np.count_nonzero(self.bits[self.layer_slice(layer)]))

    def recount_support(self):
        """Support recomputed from scratch (should equal support_size())."""
        return int(np.count_nonzero(self.bits))

    def set_bits(self, bits):
        """Replace the whole bit vector (resets the support cache)."""
        bits = np.asarray(bits, dtype=bool)
        if bits.shape != self.bits.shape:
            raise ValueError(f"expected {self.bits.shape} bits, got {bits.shape}")
        self.bits[:] = bits
        self._support = int(np.count_nonzero(self.bits))

    def update(self, away, back):
        """Drop `away` out of the support and revive `back` into it.

        away must be currently live, back currently pruned, and the two
        disjoint; a violation signals an engine bug and raises.
        """
        away = np.asarray(away, dtype=np.int64)
        back = np.asarray(back, dtype=np.int64)
        if away.size and not self.bits[away].all():
            raise ValueError("drop-away indices must be in the current support")
        if back.size and self.bits[back].any():
            raise ValueError("drop-back indices must be currently pruned")
        if away.size and back.size and np.intersect1d(away, back).size:
            raise ValueError("away and back sets must be disjoint")
        self.bits[away] = False
        self.bits[back] = True
        self._support += int(back.size) - int(away.size)


class MaskedModel:
    """A network paired with its pruning state (theta, T).

    Masked weights contribute exactly zero to forward passes and their
    stored values are frozen; a later drop back resumes the frozen value.
    """

    def __init__(self, net, mask=None):
        self.net = net
        self.mask = Mask(net.layer_shapes) if mask is None else mask
        if self.mask.size != net.weight_count:
            raise ValueError(
                f"mask covers {self.mask.size} weights, network has {net.weight_count}"
            )
        if self.mask.layer_shapes != net.layer_shapes:
            raise ValueError("mask layer partition does not match the network")

    def copy(self):
        return MaskedModel(self.net.copy(), self.mask.copy())

    def sparsity(self, layer=None):
        """1 - |support| / |total| over the whole mask or one layer."""
        if layer is None:
            return 1.0 - self.mask.support_size() / self.mask.size
        live = self.mask.support_size(layer)
        total = self.mask.layer_shapes[layer][0] * self.mask.layer_shapes[layer][1]
        return 1.0 - live / total

    def live_weight_count(self, layer=None):
        return self.mask.support_size(layer)

    def effective_network(self):
        """A copy of the network with masked weights zeroed."""
        layers = []
        for k, layer in enumerate(self.net.layers):
            w = layer.weights * self.mask.layer_view(k)
            layers.append(DenseLayer(w, layer.bias.copy(), layer.activation))
        return Network(layers, self.net.loss)

    def masked_forward(self, batch):
        return self.effective_network().forward(batch)

    def masked_backward(self, batch, labels):
        """Gradients taken through the masked forward pass."""
        return self.effective_network().backward(batch, labels)

    def masked_sgd_step(self, grads, lr):
        """Update live weights and all biases; frozen weights stay bitwise."""
        for k, (layer, (dw, db)) in enumerate(zip(self.net.layers, grads)):
            live = self.mask.layer_view(k)
            layer.weights[live] -= lr * dw[live]
            layer.bias -= lr * db

    def apply_mask_updates(self, away, back):
        self.mask.update(away, back)

    def weight_magnitudes(self):
        """Flat |theta| over the weight index space (live and frozen alike)."""
        return np.concatenate([np.abs(l.weights).ravel() for l in self.net.layers])

    def flat_weights(self):
        return np.concatenate([l.weights.ravel() for l in self.net.layers])


def save_checkpoint(model, path):
    """Write (theta, T) in the DPRN binary layout described above."""
    net, mask = model.net, model.mask
    parts = [_MAGIC, struct.pack("<II", _VERSION, len(net.layers))]
    for layer in net.layers:
        parts.append(
            struct.pack("<IIB", layer.fan_in, layer.fan_out, _ACT_CODES[layer.activation])
        )
    for layer in net.layers:
        parts.append(np.ascontiguousarray(layer.weights, dtype="<f8").tobytes())
    for layer in net.layers:
        parts.append(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
    parts.append(np.packbits(mask.bits, bitorder="little").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_checkpoint(path):
    """Read a DPRN checkpoint back into a MaskedModel (bitwise lossless)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise ValueError(f"not a DPRN checkpoint: bad magic {blob[:4]!r}")
    version, n_layers = struct.unpack_from("<II", blob, 4)
    if version != _VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = 12
    shapes = []
    acts = []
    for _ in range(n_layers):
        fi, fo, act = struct.unpack_from("<IIB", blob, off)
        off += 9
        if act not in _ACT_NAMES:
            raise ValueError(f"unknown activation code {act}")
        shapes.append((fi, fo))
        acts.append(_ACT_NAMES[act])
    weights = []
    for fi, fo in shapes:
        count = fi * fo
        w = np.frombuffer(blob, dtype="<f8", count=count, offset=off).reshape(fi, fo)
        weights.append(w.copy())
        off += count * 8
    biases = []
    for fi, fo in shapes:
        bvec = np.frombuffer(blob, dtype="<f8", count=fo, offset=off)
        biases.append(bvec.copy())
        off += fo * 8
    total = sum(fi * fo for fi, fo in shapes)
    packed_len = (total + 7) // 8
    if len(blob) - off != packed_len:
        raise ValueError("checkpoint truncated or trailing bytes in mask section")
    packed = np.frombuffer(blob, dtype=np.uint8, count=packed_len, offset=off)
    bits = np.unpackbits(packed, count=total, bitorder="little").astype(bool)
    layers = [DenseLayer(w, b, a) for w, b, a in zip(weights, biases, acts)]
    return MaskedModel(Network(layers), Mask(shapes, bits))
