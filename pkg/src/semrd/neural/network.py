"""Small fully connected networks with hand-written forward and backward passes."""

from __future__ import annotations

import numpy as np


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(probs: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. softmax outputs back to the logits."""
    return probs * (grad - np.sum(probs * grad, axis=-1, keepdims=True))


class MLP:
    """Multilayer perceptron: tanh on hidden layers, identity or softmax on the output.

    Parameters
    ----------
    sizes : sequence of int
        Layer widths including input and output, e.g. ``(10, 5, 5, 5)``.
    output : {'identity', 'softmax'}
    seed : int
        Seeds the Glorot-uniform weight draw; biases start at zero.
    """

    def __init__(self, sizes, output: str = "identity", seed: int = 0):
        sizes = tuple(int(s) for s in sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError("need at least an input and an output layer of positive width")
        if output not in ("identity", "softmax"):
            raise ValueError(f"unknown output activation {output!r}")
        self.sizes = sizes
        self.output = output
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def get_params(self) -> np.ndarray:
        """All weights and biases as one vector, layer by layer, weights row-major then bias."""
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(self.weights, self.biases)])

    def set_params(self, flat) -> None:
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got shape {flat.shape}")
        pos = 0
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = flat[pos: pos + w.size].reshape(w.shape).copy()
            pos += w.size
            self.biases[i] = flat[pos: pos + b.size].copy()
            pos += b.size

    def copy(self) -> "MLP":
        out = MLP.__new__(MLP)
        out.sizes, out.output, out.seed = self.sizes, self.output, self.seed
        out.weights = [w.copy() for w in self.weights]
        out.biases = [b.copy() for b in self.biases]
        return out

    def forward(self, inputs):
        """Return the output batch and the activations needed by :meth:`backward`."""
        a = np.atleast_2d(np.asarray(inputs, dtype=float))
        if a.shape[1] != self.sizes[0]:
            raise ValueError(f"input width {a.shape[1]} != {self.sizes[0]}")
        acts = [a]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            if i < last:
                a = np.tanh(z)
            else:
                a = softmax(z) if self.output == "softmax" else z
            acts.append(a)
        return a, acts

    def __call__(self, inputs) -> np.ndarray:
        return self.forward(inputs)[0]

    def backward(self, acts, grad_out):
        """Reverse pass given dLoss/dOutput.

        Returns
        -------
        grad_params : ndarray
            Flat gradient in :meth:`get_params` order.
        grad_input : ndarray
            dLoss/dInput, same shape as the forward input.
        """
        g = np.asarray(grad_out, dtype=float)
        if self.output == "softmax":
            g = softmax_backward(acts[-1], g)
        parts = []
        for i in range(len(self.weights) - 1, -1, -1):
            parts.append((acts[i].T @ g, g.sum(axis=0)))
            g = g @ self.weights[i].T
            if i > 0:
                # tanh' = 1 - tanh^2, evaluated on the stored hidden activation
                g = g * (1.0 - acts[i] ** 2)
        parts.reverse()
        flat = np.concatenate([np.concatenate([dw.ravel(), db]) for dw, db in parts])
        return flat, g


class GenerativeNetwork:
    """Latent-to-reproduction map whose output splits into a semantic head and an observation head.

    The first ``s_dim`` outputs are the semantic reproduction and the remaining
    ones the observation reproduction.  ``s_head='softmax'`` turns the semantic
    block into a probability vector (needed for cross-entropy distortion).
    """

    def __init__(self, layer_sizes, s_dim: int, s_head: str = "identity", seed: int = 0):
        if s_head not in ("identity", "softmax"):
            raise ValueError(f"unknown semantic head {s_head!r}")
        if not 1 <= s_dim < layer_sizes[-1]:
            raise ValueError("output layer must hold both heads")
        self.mlp = MLP(layer_sizes, "identity", seed)
        self.s_dim = int(s_dim)
        self.s_head = s_head

    @property
    def latent_dim(self) -> int:
        return self.mlp.sizes[0]

    @property
    def x_dim(self) -> int:
        return self.mlp.sizes[-1] - self.s_dim

    def get_params(self) -> np.ndarray:
        return self.mlp.get_params()

    def set_params(self, flat) -> None:
        self.mlp.set_params(flat)

    @property
    def n_params(self) -> int:
        return self.mlp.n_params

    def copy(self) -> "GenerativeNetwork":
        out = GenerativeNetwork.__new__(GenerativeNetwork)
        out.mlp, out.s_dim, out.s_head = self.mlp.copy(), self.s_dim, self.s_head
        return out

    def forward(self, z):
        """Return (x_hat, s_hat, cache)."""
        raw, acts = self.mlp.forward(z)
        s_hat = raw[:, : self.s_dim]
        if self.s_head == "softmax":
            s_hat = softmax(s_hat)
        return raw[:, self.s_dim:], s_hat, (acts, s_hat)

    def backward(self, cache, grad_x_hat, grad_s_hat) -> np.ndarray:
        acts, s_hat = cache
        if self.s_head == "softmax":
            grad_s_hat = softmax_backward(s_hat, grad_s_hat)
        grad, _ = self.mlp.backward(acts, np.concatenate([grad_s_hat, grad_x_hat], axis=1))
        return grad


class CascadeNetwork:
    """Generator ``latent -> x_hat`` followed by a classifier ``x_hat -> class probabilities``."""

    def __init__(self, generator_sizes, classifier_sizes, seed: int = 0):
        if generator_sizes[-1] != classifier_sizes[0]:
            raise ValueError("classifier input must match generator output")
        self.generator = MLP(generator_sizes, "identity", seed)
        self.classifier = MLP(classifier_sizes, "softmax", seed + 1)

    @property
    def latent_dim(self) -> int:
        return self.generator.sizes[0]

    @property
    def class_count(self) -> int:
        return self.classifier.sizes[-1]

    def copy(self) -> "CascadeNetwork":
        out = CascadeNetwork.__new__(CascadeNetwork)
        out.generator, out.classifier = self.generator.copy(), self.classifier.copy()
        return out

    def get_params(self) -> np.ndarray:
        return np.concatenate([self.generator.get_params(), self.classifier.get_params()])

    def set_params(self, flat) -> None:
        k = self.generator.n_params
        self.generator.set_params(flat[:k])
        self.classifier.set_params(flat[k:])

    @property
    def n_params(self) -> int:
        return self.generator.n_params + self.classifier.n_params

    def forward(self, z):
        """Return (x_hat, class probabilities, cache)."""
        x_hat, g_acts = self.generator.forward(z)
        probs, f_acts = self.classifier.forward(x_hat)
        return x_hat, probs, (g_acts, f_acts)

    def backward(self, cache, grad_x_hat, grad_probs):
        """Flat gradients for (generator, classifier)."""
        g_acts, f_acts = cache
        grad_f, grad_in = self.classifier.backward(f_acts, grad_probs)
        grad_g, _ = self.generator.backward(g_acts, grad_x_hat + grad_in)
        return grad_g, grad_f
