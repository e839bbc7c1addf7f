"""Dense feed-forward Q-network engine with exact backpropagation.

Supports plain linear layers, noisy linear layers whose weight perturbation
is a learned scale times a rank-1 factorized Gaussian sample, and either a
single Q head or a dueling value/advantage head pair recombined as
Q = V + A - mean(A). Gradients are computed analytically for every mu and
sigma parameter with the noise sample held fixed, and applied with a
bias-corrected adaptive-moment (Adam) update.

Forward passes are pure functions of (params, input, noise); a ``None``
noise sample makes every noisy layer behave exactly like its mu-only
plain counterpart.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np

from .errors import NumericError

SIGMA_INIT = 0.5


def signed_sqrt(x):
    """Factorized-noise shaping function: sign(x) * sqrt(|x|)."""
    return np.sign(x) * np.sqrt(np.abs(x))


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # "linear" | "noisy"
    in_dim: int
    out_dim: int
    activation: str = "identity"  # "relu" | "identity"


@dataclass(frozen=True)
class NetworkSpec:
    """Topology of one Q network.

    With ``noisy=True`` the last hidden layer and every head layer are noisy;
    the rest of the trunk stays plain. With ``dueling=True`` the output is a
    scalar value stream plus a per-action advantage stream over the shared
    trunk.
    """

    input_dim: int
    num_actions: int
    hidden_dims: tuple = (64, 64)
    dueling: bool = False
    noisy: bool = False

    def __post_init__(self):
        if self.input_dim < 1 or self.num_actions < 1:
            raise ValueError("input_dim and num_actions must be positive")
        if any(width < 1 for width in self.hidden_dims):
            raise ValueError("hidden widths must be positive")

    def layers(self) -> tuple:
        """(name, LayerSpec) pairs in forward order, trunk then head(s)."""
        return _layer_table(self)

    def noisy_layers(self) -> tuple:
        return tuple((name, spec) for name, spec in self.layers()
                     if spec.kind == "noisy")


@lru_cache(maxsize=None)
def _layer_table(spec: NetworkSpec) -> tuple:
    specs = []
    prev = spec.input_dim
    last = len(spec.hidden_dims) - 1
    for i, width in enumerate(spec.hidden_dims):
        kind = "noisy" if spec.noisy and i == last else "linear"
        specs.append((f"hidden{i}", LayerSpec(kind, prev, width, "relu")))
        prev = width
    head_kind = "noisy" if spec.noisy else "linear"
    if spec.dueling:
        specs.append(("value", LayerSpec(head_kind, prev, 1)))
        specs.append(("advantage", LayerSpec(head_kind, prev, spec.num_actions)))
    else:
        specs.append(("q", LayerSpec(head_kind, prev, spec.num_actions)))
    return tuple(specs)


class NoiseSample:
    """One factorized Gaussian draw per noisy layer.

    ``factors[name]`` holds the raw (eps_in, eps_out) vectors; the effective
    weight perturbation of that layer is sigma_w * outer(f(eps_out), f(eps_in))
    and the bias perturbation sigma_b * f(eps_out), with f = signed_sqrt.
    ``shaped`` caches the f values.
    """

    def __init__(self, factors: dict):
        self.factors = factors
        self.shaped = {name: (signed_sqrt(eps_in), signed_sqrt(eps_out))
                       for name, (eps_in, eps_out) in factors.items()}


def sample_noise(spec: NetworkSpec, rng: np.random.Generator) -> NoiseSample:
    noisy = spec.noisy_layers()
    if not noisy:
        raise ValueError("network spec contains no noisy layers")
    factors = {}
    for name, layer in noisy:
        factors[name] = (
            rng.standard_normal(layer.in_dim),
            rng.standard_normal(layer.out_dim),
        )
    return NoiseSample(factors)


class NetworkParams:
    """Named parameter tensors plus Adam state for one network.

    Tensor keys are ``<layer>.mu_w``, ``<layer>.mu_b`` and, for noisy layers,
    ``<layer>.sigma_w``, ``<layer>.sigma_b``.
    """

    def __init__(self, spec, tensors, adam_m, adam_v, adam_t=0):
        self.spec = spec
        self.tensors = tensors
        self.adam_m = adam_m
        self.adam_v = adam_v
        self.adam_t = adam_t

    def tensor(self, layer: str, part: str) -> np.ndarray:
        return self.tensors[f"{layer}.{part}"]


def init_params(spec: NetworkSpec, rng: np.random.Generator) -> NetworkParams:
    """Uniform +-1/sqrt(in_dim) mu init; sigma filled with SIGMA_INIT/sqrt(in_dim)."""
    tensors = {}
    for name, layer in spec.layers():
        bound = 1.0 / np.sqrt(layer.in_dim)
        tensors[f"{name}.mu_w"] = rng.uniform(-bound, bound, (layer.out_dim, layer.in_dim))
        tensors[f"{name}.mu_b"] = rng.uniform(-bound, bound, layer.out_dim)
        if layer.kind == "noisy":
            tensors[f"{name}.sigma_w"] = np.full((layer.out_dim, layer.in_dim), SIGMA_INIT * bound)
            tensors[f"{name}.sigma_b"] = np.full(layer.out_dim, SIGMA_INIT * bound)
    adam_m = {key: np.zeros_like(val) for key, val in tensors.items()}
    adam_v = {key: np.zeros_like(val) for key, val in tensors.items()}
    return NetworkParams(spec, tensors, adam_m, adam_v, 0)


def _check_noise(spec: NetworkSpec, noise) -> None:
    if noise is None:
        return
    for name, layer in spec.noisy_layers():
        if name not in noise.factors:
            raise ValueError(f"noise sample missing factors for layer {name}")
        eps_in, eps_out = noise.factors[name]
        if len(eps_in) != layer.in_dim or len(eps_out) != layer.out_dim:
            raise ValueError(f"noise factor shapes do not match layer {name}")


def _layer_forward(params, name, layer, x, noise):
    w = params.tensor(name, "mu_w")
    b = params.tensor(name, "mu_b")
    f_in = f_out = None
    if layer.kind == "noisy" and noise is not None:
        f_in, f_out = noise.shaped[name]
        w = w + params.tensor(name, "sigma_w") * np.outer(f_out, f_in)
        b = b + params.tensor(name, "sigma_b") * f_out
    z = x @ w.T + b
    out = np.maximum(z, 0.0) if layer.activation == "relu" else z
    return out, (x, z, w, f_in, f_out)


def _forward_cached(params, x, noise):
    spec = params.spec
    specs = spec.layers()
    n_heads = 2 if spec.dueling else 1
    trunk, heads = specs[:-n_heads], specs[-n_heads:]
    caches = {}
    h = x
    for name, layer in trunk:
        h, caches[name] = _layer_forward(params, name, layer, h, noise)
    if spec.dueling:
        value, caches["value"] = _layer_forward(params, "value", heads[0][1], h, noise)
        adv, caches["advantage"] = _layer_forward(params, "advantage", heads[1][1], h, noise)
        q = value + adv - adv.mean(axis=1, keepdims=True)
    else:
        q, caches["q"] = _layer_forward(params, "q", heads[0][1], h, noise)
    return q, caches


def forward(params: NetworkParams, inputs, noise: NoiseSample | None = None) -> np.ndarray:
    """Q values for one observation vector or a batch of row vectors."""
    x = np.asarray(inputs, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.spec.input_dim:
        raise ValueError(
            f"input must have {params.spec.input_dim} features, got shape {x.shape}"
        )
    _check_noise(params.spec, noise)
    q, _ = _forward_cached(params, x, noise)
    return q[0] if single else q


def _layer_backward(params, name, layer, cache, g_out, grads):
    x, z, w_eff, f_in, f_out = cache
    g_z = g_out * (z > 0.0) if layer.activation == "relu" else g_out
    g_w = g_z.T @ x
    g_b = g_z.sum(axis=0)
    grads[f"{name}.mu_w"] += g_w
    grads[f"{name}.mu_b"] += g_b
    if f_in is not None:
        grads[f"{name}.sigma_w"] += g_w * np.outer(f_out, f_in)
        grads[f"{name}.sigma_b"] += g_b * f_out
    return g_z @ w_eff


def _backward_from_caches(params, caches, output_grad) -> dict:
    spec = params.spec
    specs = spec.layers()
    n_heads = 2 if spec.dueling else 1
    trunk, heads = specs[:-n_heads], specs[-n_heads:]
    g = output_grad
    grads = {key: np.zeros_like(val) for key, val in params.tensors.items()}
    if spec.dueling:
        g_value = g.sum(axis=1, keepdims=True)
        g_adv = g - g.mean(axis=1, keepdims=True)
        g_h = _layer_backward(params, "value", heads[0][1], caches["value"], g_value, grads)
        g_h = g_h + _layer_backward(
            params, "advantage", heads[1][1], caches["advantage"], g_adv, grads
        )
    else:
        g_h = _layer_backward(params, "q", heads[0][1], caches["q"], g, grads)
    for name, layer in reversed(trunk):
        g_h = _layer_backward(params, name, layer, caches[name], g_h, grads)
    return grads


def backward(params: NetworkParams, inputs, noise, output_grad) -> dict:
    """Gradients of sum(output_grad * Q) with respect to every named tensor.

    The noise sample is held fixed; sigma gradients are zero under ``None``
    noise because the output then does not depend on sigma.
    """
    x = np.asarray(inputs, dtype=float)
    g = np.asarray(output_grad, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
        g = g[None, :]
    _check_noise(params.spec, noise)
    q, caches = _forward_cached(params, x, noise)
    if g.shape != q.shape:
        raise ValueError(f"output_grad shape {g.shape} does not match Q shape {q.shape}")
    return _backward_from_caches(params, caches, g)


def adam_step(params: NetworkParams, grads: dict, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected adaptive-moment update, applied in place."""
    for key in params.tensors:
        if not np.all(np.isfinite(grads[key])):
            raise NumericError(f"non-finite gradient for tensor {key}")
    params.adam_t += 1
    t = params.adam_t
    corr1 = 1.0 - beta1 ** t
    corr2 = 1.0 - beta2 ** t
    for key, p in params.tensors.items():
        g = grads[key]
        m = params.adam_m[key]
        v = params.adam_v[key]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / corr1) / (np.sqrt(v / corr2) + eps)


def clone_params(params: NetworkParams) -> NetworkParams:
    """Deep copy; parameters and optimizer state become fully independent."""
    return NetworkParams(
        params.spec,
        {key: val.copy() for key, val in params.tensors.items()},
        {key: val.copy() for key, val in params.adam_m.items()},
        {key: val.copy() for key, val in params.adam_v.items()},
        params.adam_t,
    )


def noise_magnitude(params: NetworkParams, noise) -> float:
    """Mean absolute weight perturbation across noisy layers.

    Uses the factorized structure |pert[o, i]| = sigma[o, i] |f_out[o]| |f_in[i]|
    to average in O(n) via a scale-weighted product of the factor means.
    """
    if noise is None:
        return 0.0
    per_layer = []
    for name, (f_in, f_out) in noise.shaped.items():
        sigma_w = params.tensor(name, "sigma_w")
        row_mean = np.abs(sigma_w) @ np.abs(f_in) / sigma_w.shape[1]
        per_layer.append(float(np.abs(f_out) @ row_mean / sigma_w.shape[0]))
    return float(np.mean(per_layer)) if per_layer else 0.0


def save_params(params: NetworkParams, path) -> None:
    """Checkpoint as JSON: named tensors with shapes plus Adam state.

    Layout: {"spec": {...}, "adam_t": int, "tensors"/"adam_m"/"adam_v":
    {name: {"shape": [...], "data": [flat floats]}}}. Floats round-trip
    exactly through repr, so a reloaded network resumes bit-identically.
    """

    def pack(group):
        return {
            key: {"shape": list(val.shape), "data": val.ravel().tolist()}
            for key, val in group.items()
        }

    payload = {
        "spec": asdict(params.spec) | {"hidden_dims": list(params.spec.hidden_dims)},
        "adam_t": params.adam_t,
        "tensors": pack(params.tensors),
        "adam_m": pack(params.adam_m),
        "adam_v": pack(params.adam_v),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_params(path) -> NetworkParams:
    with open(path) as fh:
        payload = json.load(fh)
    spec_data = dict(payload["spec"])
    spec_data["hidden_dims"] = tuple(spec_data["hidden_dims"])
    spec = NetworkSpec(**spec_data)

    def unpack(group):
        return {
            key: np.array(entry["data"], dtype=float).reshape(entry["shape"])
            for key, entry in group.items()
        }

    return NetworkParams(
        spec,
        unpack(payload["tensors"]),
        unpack(payload["adam_m"]),
        unpack(payload["adam_v"]),
        int(payload["adam_t"]),
    )
