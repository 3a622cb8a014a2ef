"""Fully-connected feed-forward approximator U(x; theta).

Parameter layout (version 1): for each layer in order, the weight matrix of
shape ``(fan_in, fan_out)`` flattened row-major, followed by its bias vector.
Hidden layers apply the activation; the last layer is affine with a scalar
output. A trainable PDE parameter, when present, occupies one trailing slot
that this module never touches.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import DerivativeJet, MultiIndexSet, Record
from .errors import ConfigurationError, NumericError

LAYOUT_VERSION = 1
_MAGIC = "pinnbal-checkpoint"


@dataclass(frozen=True)
class NetworkConfig:
    input_dim: int = 2
    hidden_layers: int = 4
    width: int = 256
    activation: str = "tanh"
    output_dim: int = 1
    # per-dimension (low, high); when set, inputs are mapped affinely to [-1, 1]
    input_bounds: tuple | None = None

    def __post_init__(self):
        if self.hidden_layers < 1 or self.width < 1 or self.input_dim < 1:
            raise ConfigurationError("hidden_layers, width and input_dim must be >= 1")
        if self.activation not in ad.ACTIVATIONS:
            raise ConfigurationError(f"unsupported activation {self.activation!r}")
        if self.output_dim != 1:
            raise ConfigurationError("only scalar outputs are supported")
        if self.input_bounds is not None:
            bounds = tuple(tuple(float(v) for v in b) for b in self.input_bounds)
            if len(bounds) != self.input_dim or any(hi <= lo for lo, hi in bounds):
                raise ConfigurationError("input_bounds must give low < high per input dimension")
            object.__setattr__(self, "input_bounds", bounds)

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim] + [self.width] * self.hidden_layers + [self.output_dim]

    @property
    def n_params(self) -> int:
        sizes = self.layer_sizes
        return sum((a + 1) * b for a, b in zip(sizes[:-1], sizes[1:]))

    def input_transform(self):
        """``(scale, shift)`` such that the network sees ``(x - shift) * scale``."""
        if self.input_bounds is None:
            return np.ones(self.input_dim), np.zeros(self.input_dim)
        lo = np.array([b[0] for b in self.input_bounds])
        hi = np.array([b[1] for b in self.input_bounds])
        return 2.0 / (hi - lo), 0.5 * (hi + lo)

    def to_dict(self):
        d = asdict(self)
        if self.input_bounds is not None:
            d["input_bounds"] = [list(b) for b in self.input_bounds]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("input_bounds") is not None:
            d["input_bounds"] = tuple(tuple(b) for b in d["input_bounds"])
        return cls(**d)


def layer_slices(config: NetworkConfig) -> list[tuple[slice, tuple[int, int], slice]]:
    """``(weight_slice, weight_shape, bias_slice)`` per layer into the flat vector."""
    out = []
    pos = 0
    sizes = config.layer_sizes
    for fin, fout in zip(sizes[:-1], sizes[1:]):
        w = slice(pos, pos + fin * fout)
        pos += fin * fout
        b = slice(pos, pos + fout)
        pos += fout
        out.append((w, (fin, fout), b))
    return out


def unflatten(config: NetworkConfig, theta) -> list[tuple[np.ndarray, np.ndarray]]:
    theta = np.asarray(theta)
    if theta.shape[0] < config.n_params:
        raise ConfigurationError(f"parameter vector has {theta.shape[0]} entries, need {config.n_params}")
    return [(theta[w].reshape(shape), theta[b]) for w, shape, b in layer_slices(config)]


def init_xavier(config: NetworkConfig, seed, extra=()) -> np.ndarray:
    """Glorot-uniform weights, zero biases; ``extra`` values are appended (e.g. mu0)."""
    rng = np.random.default_rng(seed)
    theta = np.zeros(config.n_params + len(extra))
    for w, (fin, fout), _ in layer_slices(config):
        bound = np.sqrt(6.0 / (fin + fout))
        theta[w] = rng.uniform(-bound, bound, size=fin * fout)
    if len(extra):
        theta[config.n_params:] = extra
    return theta


def _check_points(config, points):
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != config.input_dim:
        raise ConfigurationError(f"points have dimension {points.shape[1]}, expected {config.input_dim}")
    return points


def forward(config: NetworkConfig, theta, points) -> np.ndarray:
    """Network output at each row of ``points`` (shape ``(N,)``)."""
    points = _check_points(config, points)
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta[: config.n_params])):
        raise NumericError("non-finite network parameter")
    scale, shift = config.input_transform()
    h = (points - shift) * scale
    layers = unflatten(config, theta)
    act = ad.ACTIVATIONS[config.activation]
    for w, b in layers[:-1]:
        h = act(h @ w + b, 0)[0]
    w, b = layers[-1]
    return (h @ w + b)[:, 0]


def _propagate(config, layers, points, iset):
    """Shared jet propagation; ``layers`` may hold arrays or recorded nodes."""
    scale, shift = config.input_transform()
    jet = ad.input_seed(points, iset, scale, shift)
    for w, b in layers[:-1]:
        jet = ad.jet_activation(ad.jet_affine(jet, w, b), iset, config.activation)
    w, b = layers[-1]
    out = ad.jet_affine(jet, w, b)
    return ad.reshape(out, ad.value_of(out).shape[:2])


def _required_indices(config, max_order, derivatives):
    if derivatives is not None:
        return [tuple(m) for m in derivatives]
    if max_order is None or not 0 <= max_order <= ad.MAX_ORDER:
        raise ConfigurationError(f"max_order must be in 0..{ad.MAX_ORDER}")
    return MultiIndexSet.full(config.input_dim, max_order).indices


def input_jet(config: NetworkConfig, theta, points, max_order=None, derivatives=None,
              labels: Sequence[str] = ()) -> DerivativeJet:
    """Exact input derivatives of the network output.

    Either ``max_order`` (all multi-indices of total degree up to it) or an
    explicit list of ``derivatives`` multi-indices must be given.
    """
    points = _check_points(config, points)
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta[: config.n_params])):
        raise NumericError("non-finite network parameter")
    required = _required_indices(config, max_order, derivatives)
    iset = MultiIndexSet(required, config.input_dim)
    coeffs = _propagate(config, unflatten(config, theta), points, iset)
    return ad.jet_from_coefficients(coeffs, iset, labels, keep=required)


class RecordedNetwork:
    """Network parameters placed on a :class:`Record` as leaves (one per tensor)."""

    def __init__(self, config: NetworkConfig, theta, record: Record):
        self.config = config
        self.record = record
        self.leaves = []
        self.layers = []
        for w, b in unflatten(config, np.asarray(theta, dtype=float)):
            wn, bn = record.variable(w), record.variable(b)
            self.leaves += [wn, bn]
            self.layers.append((wn, bn))

    def jet(self, points, derivatives, labels=()) -> DerivativeJet:
        points = _check_points(self.config, points)
        required = [tuple(m) for m in derivatives]
        iset = MultiIndexSet(required, self.config.input_dim)
        coeffs = _propagate(self.config, self.layers, points, iset)
        return ad.jet_from_coefficients(coeffs, iset, labels, keep=required)

    def __call__(self, points):
        """Recorded network output (no input derivatives)."""
        zero = (0,) * self.config.input_dim
        return self.jet(points, [zero]).value

    def flat_gradient(self, grads) -> np.ndarray:
        """Concatenate per-leaf gradients back into the flat layout."""
        return ad.concatenate_gradients(grads)


# ---------------------------------------------------------------------------
# Checkpoints: one JSON header line, then raw little-endian float64 values
# ---------------------------------------------------------------------------


def save_checkpoint(path, config: NetworkConfig, theta, extra: dict | None = None):
    theta = np.ascontiguousarray(theta, dtype="<f8")
    header = {
        "format": _MAGIC,
        "layout_version": LAYOUT_VERSION,
        "network": config.to_dict(),
        "length": int(theta.size),
        "extra": extra or {},
    }
    path = Path(path)
    with path.open("wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode())
        fh.write(theta.tobytes())
    return path


def load_checkpoint(path):
    """Return ``(config, theta, header)`` from a checkpoint file."""
    with Path(path).open("rb") as fh:
        header = json.loads(fh.readline().decode())
        if header.get("format") != _MAGIC:
            raise ConfigurationError(f"{path} is not a parameter checkpoint")
        if header.get("layout_version") != LAYOUT_VERSION:
            raise ConfigurationError(f"unsupported layout version {header.get('layout_version')}")
        theta = np.frombuffer(fh.read(), dtype="<f8").astype(float)
    if theta.size != header["length"]:
        raise ConfigurationError("checkpoint is truncated")
    return NetworkConfig.from_dict(header["network"]), theta, header
