"""Stacked denoising autoencoders over user/item side information.

A network with layer sizes ``[F, n_1, ..., K, ..., n_1, F]`` maps a
(corrupted) feature row through hidden layers ``h_m = g(W_m h_{m-1} + b_m)``
and produces the reconstruction ``f(W_M h_{M-1} + b_M)``.  The activation of
the middle layer is the representation coupled to a latent factor row.

Rows are processed as batches: inputs are ``(n, F)`` arrays and the weight
matrix of layer ``m`` has shape ``(n_m, n_{m-1})``.
"""
from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import NonFiniteValue, ShapeMismatch


class Activation(enum.Enum):
    SIGMOID = "sigmoid"
    TANH = "tanh"
    RELU = "relu"
    IDENTITY = "identity"

    def __call__(self, z):
        if self is Activation.SIGMOID:
            return expit(z)
        if self is Activation.TANH:
            return np.tanh(z)
        if self is Activation.RELU:
            return np.maximum(z, 0.0)
        return z

    def derivative(self, z, a):
        """Derivative expressed through the pre-activation ``z`` and output ``a``."""
        if self is Activation.SIGMOID:
            return a * (1.0 - a)
        if self is Activation.TANH:
            return 1.0 - a * a
        if self is Activation.RELU:
            return (z > 0).astype(np.float64)
        return np.ones_like(z)


HIDDEN_ACTIVATIONS = frozenset(Activation)
OUTPUT_ACTIVATIONS = frozenset({Activation.IDENTITY, Activation.SIGMOID})


class DenoisingAutoencoder:
    def __init__(self, weights, biases, hidden_activation=Activation.SIGMOID,
                 output_activation=Activation.IDENTITY):
        self.weights = [np.array(W, dtype=np.float64) for W in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]
        self.hidden_activation = Activation(hidden_activation)
        self.output_activation = Activation(output_activation)
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unsupported output activation {self.output_activation.value}")

        M = len(self.weights)
        if M == 0 or M % 2 or len(self.biases) != M:
            raise ShapeMismatch(f"need an even, positive number of layers (got {M} weights, "
                                f"{len(self.biases)} biases)")
        sizes = [self.weights[0].shape[1]]
        for m, (W, b) in enumerate(zip(self.weights, self.biases), start=1):
            if W.ndim != 2 or W.shape[1] != sizes[-1] or b.shape != (W.shape[0],):
                raise ShapeMismatch(f"layer {m}: weight {W.shape} / bias {b.shape} do not chain "
                                    f"from width {sizes[-1]}")
            sizes.append(W.shape[0])
        if sizes[0] != sizes[-1]:
            raise ShapeMismatch(f"output width {sizes[-1]} differs from input width {sizes[0]}")
        self.layer_sizes = tuple(sizes)
        for W, b in zip(self.weights, self.biases):
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise NonFiniteValue("network parameters must be finite")

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def middle(self) -> int:
        return self.depth // 2

    @property
    def K(self) -> int:
        return self.layer_sizes[self.middle]

    @property
    def n_features(self) -> int:
        return self.layer_sizes[0]

    def params(self):
        for m in range(self.depth):
            yield self.weights[m]
            yield self.biases[m]

    def copy(self) -> DenoisingAutoencoder:
        return DenoisingAutoencoder(self.weights, self.biases,
                                    self.hidden_activation, self.output_activation)

    def squared_norm(self) -> float:
        return float(sum(np.sum(p * p) for p in self.params()))

    def digest(self) -> str:
        h = hashlib.sha256()
        for p in self.params():
            h.update(np.ascontiguousarray(p).tobytes())
        return h.hexdigest()

    def __repr__(self):
        return (f"DenoisingAutoencoder({list(self.layer_sizes)}, "
                f"g={self.hidden_activation.value}, f={self.output_activation.value})")


def build_autoencoder(n_features: int, hidden: tuple[int, ...], K: int, rng,
                      hidden_activation=Activation.SIGMOID,
                      output_activation=Activation.IDENTITY) -> DenoisingAutoencoder:
    """Symmetric hourglass ``[F, *hidden, K, *reversed(hidden), F]``.

    Weights are drawn uniformly from ``±1/sqrt(fan_in)``; biases start at zero.
    """
    sizes = [n_features, *hidden, K, *reversed(hidden), n_features]
    if any(s <= 0 for s in sizes):
        raise ShapeMismatch(f"layer widths must be positive, got {sizes}")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return DenoisingAutoencoder(weights, biases, hidden_activation, output_activation)


@dataclass(frozen=True)
class CorruptionSpec:
    """Masking noise: each coordinate is zeroed independently with probability ``rate``."""

    rate: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ValueError(f"corruption rate must lie in [0, 1), got {self.rate}")


def corrupt(p, spec: CorruptionSpec, counter: int = 0) -> np.ndarray:
    """Masked copy of ``p``; deterministic in ``(spec.seed, counter)``."""
    p = np.asarray(p, dtype=np.float64)
    if spec.rate == 0.0:
        return p.copy()
    rng = np.random.default_rng([spec.seed, counter])
    keep = rng.random(p.shape) >= spec.rate
    return np.where(keep, p, 0.0)


@dataclass
class ForwardTrace:
    pre: list        # pre-activations z_1..z_M
    acts: list       # activations a_0 (input) .. a_M (output)
    middle: int

    @property
    def middle_rep(self) -> np.ndarray:
        return self.acts[self.middle]

    @property
    def output(self) -> np.ndarray:
        return self.acts[-1]


def forward(net: DenoisingAutoencoder, x) -> ForwardTrace:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != net.n_features:
        raise ShapeMismatch(f"input width {x.shape[-1]} != {net.n_features}")
    a = x
    pre, acts = [], [x]
    for m, (W, b) in enumerate(zip(net.weights, net.biases), start=1):
        z = a @ W.T + b
        act = net.output_activation if m == net.depth else net.hidden_activation
        a = act(z)
        pre.append(z)
        acts.append(a)
    return ForwardTrace(pre, acts, net.middle)


def reconstruction_loss(net: DenoisingAutoencoder, P, spec: CorruptionSpec | None = None,
                        counter: int = 0) -> float:
    """Sum over rows of ``||p - p_hat||^2`` where ``p_hat`` is computed from the
    corrupted rows and compared with the clean ones."""
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2 or P.shape[1] != net.n_features:
        raise ShapeMismatch(f"side information of shape {P.shape} does not fit {net!r}")
    x = P if spec is None else corrupt(P, spec, counter)
    diff = P - forward(net, x).output
    return float(np.sum(diff * diff))


def coupling_loss(trace: ForwardTrace, targets) -> float:
    diff = np.asarray(targets) - trace.middle_rep
    return float(np.sum(diff * diff))


def net_objective(net, trace: ForwardTrace, clean, targets, recon_weight, coupling_weight,
                  lam) -> float:
    """``½·a·Σ||p - p_hat||² + ½·ρ·Σ||u - h||² + ½·λ·Σ(||W||² + ||b||²)``."""
    diff = np.asarray(clean) - trace.output
    total = 0.5 * recon_weight * float(np.sum(diff * diff))
    if targets is not None:
        total += 0.5 * coupling_weight * coupling_loss(trace, targets)
    return total + 0.5 * lam * net.squared_norm()


@dataclass
class Gradients:
    weights: list
    biases: list

    def params(self):
        for dW, db in zip(self.weights, self.biases):
            yield dW
            yield db


def backward(net: DenoisingAutoencoder, trace: ForwardTrace, clean, targets,
             recon_weight: float, coupling_weight: float, lam: float) -> Gradients:
    """Gradients of :func:`net_objective` for every weight and bias.

    The reconstruction error enters at the output layer, the coupling error
    ``u - h`` at the middle layer, and weight decay on every parameter.
    ``targets=None`` drops the coupling term.
    """
    clean = np.asarray(clean, dtype=np.float64)
    if clean.shape != trace.output.shape:
        raise ShapeMismatch(f"clean target shape {clean.shape} != output {trace.output.shape}")
    if targets is not None:
        targets = np.asarray(targets, dtype=np.float64)
        if targets.shape != trace.middle_rep.shape:
            raise ShapeMismatch(f"coupling target shape {targets.shape} != "
                                f"middle representation {trace.middle_rep.shape}")

    M = net.depth
    dW, db = [None] * M, [None] * M
    # dJ/da for the current layer's activation
    grad_a = -recon_weight * (clean - trace.output)
    for m in range(M, 0, -1):
        if m == net.middle and targets is not None:
            grad_a = grad_a - coupling_weight * (targets - trace.middle_rep)
        act = net.output_activation if m == M else net.hidden_activation
        z, a = trace.pre[m - 1], trace.acts[m]
        delta = grad_a * act.derivative(z, a)
        a_prev = trace.acts[m - 1]
        if delta.ndim == 1:
            dW[m - 1] = np.outer(delta, a_prev) + lam * net.weights[m - 1]
            db[m - 1] = delta + lam * net.biases[m - 1]
        else:
            dW[m - 1] = delta.T @ a_prev + lam * net.weights[m - 1]
            db[m - 1] = delta.sum(axis=0) + lam * net.biases[m - 1]
        grad_a = delta @ net.weights[m - 1]
    return Gradients(dW, db)


def sgd_step(net: DenoisingAutoencoder, grads: Gradients, lr: float) -> DenoisingAutoencoder:
    if len(grads.weights) != net.depth or len(grads.biases) != net.depth:
        raise ShapeMismatch("gradient set does not match network depth")
    weights, biases = [], []
    for W, b, gW, gb in zip(net.weights, net.biases, grads.weights, grads.biases):
        if gW.shape != W.shape or gb.shape != b.shape:
            raise ShapeMismatch(f"gradient shapes {gW.shape}/{gb.shape} vs {W.shape}/{b.shape}")
        weights.append(W - lr * gW)
        biases.append(b - lr * gb)
    return DenoisingAutoencoder(weights, biases, net.hidden_activation, net.output_activation)
