"""Minimal dense-network core: forward, backprop, SGD, evaluation.

Everything is float64 numpy. Networks are plain value objects (copyable,
picklable); all training state lives in the caller.
"""

from dataclasses import dataclass

import numpy as np

from dropprune.sampling import make_rng

RELU = "relu"
IDENTITY = "identity"
SOFTMAX = "softmax"
_ACTIVATIONS = (RELU, IDENTITY, SOFTMAX)

CROSS_ENTROPY = "cross_entropy"


class ShapeError(ValueError):
    """Shape mismatch between data and parameters, naming the offending layer."""


@dataclass(frozen=True)
class TrainConfig:
    """SGD hyperparameters for baseline training."""

    lr: float = 0.1
    batch_size: int = 100
    epochs: int = 18
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")


@dataclass(frozen=True)
class EvalResult:
    test_error: float
    mean_loss: float


class DenseLayer:
    """Fully connected layer: out = act(x @ weights + bias)."""

    def __init__(self, weights, bias, activation=RELU):
        weights = np.ascontiguousarray(weights, dtype=np.float64)
        bias = np.ascontiguousarray(bias, dtype=np.float64)
        if weights.ndim != 2:
            raise ShapeError(f"weights must be 2-d [fan_in, fan_out], got {weights.shape}")
        if bias.shape != (weights.shape[1],):
            raise ShapeError(
                f"bias shape {bias.shape} inconsistent with fan_out {weights.shape[1]}"
            )
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.weights = weights
        self.bias = bias
        self.activation = activation

    @property
    def fan_in(self):
        return self.weights.shape[0]

    @property
    def fan_out(self):
        return self.weights.shape[1]

    def copy(self):
        return DenseLayer(self.weights.copy(), self.bias.copy(), self.activation)


def _softmax(z):
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _logsumexp(z):
    m = z.max(axis=1)
    return m + np.log(np.exp(z - m[:, None]).sum(axis=1))


class Network:
    """An ordered stack of dense layers trained with cross-entropy loss.

    The softmax activation is only allowed on the last layer, where it is
    fused with the loss; forward() then returns class probabilities,
    otherwise raw scores.
    """

    def __init__(self, layers, loss=CROSS_ENTROPY):
        if not layers:
            raise ValueError("network needs at least one layer")
        if loss != CROSS_ENTROPY:
            raise ValueError(f"unsupported loss {loss!r}")
        for k in range(len(layers) - 1):
            if layers[k].fan_out != layers[k + 1].fan_in:
                raise ShapeError(
                    f"layer {k} fan_out {layers[k].fan_out} != layer {k + 1} "
                    f"fan_in {layers[k + 1].fan_in}"
                )
            if layers[k].activation == SOFTMAX:
                raise ValueError(f"layer {k}: softmax is only valid on the last layer")
        self.layers = list(layers)
        self.loss = loss

    @classmethod
    def mlp(cls, dims, seed=0):
        """Build a ReLU MLP with a softmax output layer.

        Weights are uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero.
        dims = [784, 300, 100, 10] gives the LeNet-300-100 shape.
        """
        if len(dims) < 2:
            raise ValueError("dims must name at least input and output widths")
        rng = make_rng(seed)
        layers = []
        for k in range(len(dims) - 1):
            fan_in, fan_out = dims[k], dims[k + 1]
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            act = SOFTMAX if k == len(dims) - 2 else RELU
            layers.append(DenseLayer(w, np.zeros(fan_out), act))
        return cls(layers)

    def copy(self):
        return Network([l.copy() for l in self.layers], self.loss)

    @property
    def weight_count(self):
        return sum(l.weights.size for l in self.layers)

    @property
    def param_count(self):
        return sum(l.weights.size + l.bias.size for l in self.layers)

    @property
    def layer_shapes(self):
        return [(l.fan_in, l.fan_out) for l in self.layers]

    def _run(self, batch):
        """Forward pass keeping pre-activations for backprop."""
        x = np.asarray(batch, dtype=np.float64)
        if x.ndim != 2:
            raise ShapeError(f"batch must be 2-d [B, D], got shape {x.shape}")
        inputs = []  # input to each layer
        preacts = []
        for k, layer in enumerate(self.layers):
            if x.shape[1] != layer.fan_in:
                raise ShapeError(
                    f"layer {k}: input width {x.shape[1]} != fan_in {layer.fan_in}"
                )
            inputs.append(x)
            z = x @ layer.weights + layer.bias
            preacts.append(z)
            if layer.activation == RELU:
                x = np.maximum(z, 0.0)
            elif layer.activation == IDENTITY:
                x = z
            else:  # softmax, last layer only
                x = _softmax(z)
        return inputs, preacts, x

    def forward(self, batch):
        """Class scores, or probabilities when the last layer is softmax."""
        return self._run(batch)[2]

    def _logits(self, batch):
        inputs, preacts, out = self._run(batch)
        last = self.layers[-1]
        logits = preacts[-1] if last.activation == SOFTMAX else out
        return inputs, preacts, logits

    def backward(self, batch, labels):
        """Gradients of mean cross-entropy over the batch, plus the loss.

        Returns (grads, loss) where grads is a list of (dW, db) matching
        the layers.
        """
        labels = np.asarray(labels)
        inputs, preacts, logits = self._logits(batch)
        n_out = self.layers[-1].fan_out
        if labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
            raise ShapeError(
                f"labels must be 1-d of length {logits.shape[0]}, got shape {labels.shape}"
            )
        if labels.min() < 0 or labels.max() >= n_out:
            raise ValueError(f"labels must lie in [0, {n_out}), got range "
                             f"[{labels.min()}, {labels.max()}]")
        b = logits.shape[0]
        rows = np.arange(b)
        loss = float(np.mean(_logsumexp(logits) - logits[rows, labels]))

        dlogits = _softmax(logits)
        dlogits[rows, labels] -= 1.0
        dlogits /= b

        last = self.layers[-1]
        if last.activation == RELU:
            dz = dlogits * (preacts[-1] > 0.0)
        else:
            # identity output, or the fused softmax shortcut
            dz = dlogits

        grads = [None] * len(self.layers)
        for k in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[k]
            dw = inputs[k].T @ dz
            db = dz.sum(axis=0)
            grads[k] = (dw, db)
            if k > 0:
                dx = dz @ layer.weights.T
                if self.layers[k - 1].activation == RELU:
                    dz = dx * (preacts[k - 1] > 0.0)
                else:
                    dz = dx
        return grads, loss

    def sgd_step(self, grads, lr):
        """In-place p <- p - lr * g for every parameter."""
        if len(grads) != len(self.layers):
            raise ShapeError(f"expected {len(self.layers)} gradient pairs, got {len(grads)}")
        for k, (layer, (dw, db)) in enumerate(zip(self.layers, grads)):
            if dw.shape != layer.weights.shape or db.shape != layer.bias.shape:
                raise ShapeError(f"layer {k}: gradient shape mismatch")
            layer.weights -= lr * dw
            layer.bias -= lr * db

    def evaluate(self, data, batch_size=1000):
        """Argmax test error and mean cross-entropy over a dataset."""
        inputs, labels = np.asarray(data.inputs), np.asarray(data.labels)
        n = inputs.shape[0]
        if n == 0:
            raise ValueError("cannot evaluate on an empty dataset")
        wrong = 0
        loss_sum = 0.0
        for start in range(0, n, batch_size):
            xb = inputs[start:start + batch_size]
            yb = labels[start:start + batch_size]
            _, _, logits = self._logits(xb)
            rows = np.arange(xb.shape[0])
            loss_sum += float(np.sum(_logsumexp(logits) - logits[rows, yb]))
            wrong += int(np.sum(np.argmax(logits, axis=1) != yb))
        return EvalResult(test_error=wrong / n, mean_loss=loss_sum / n)
