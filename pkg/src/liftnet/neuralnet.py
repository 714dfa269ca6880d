"""Fully connected lift network written directly in numpy.

ReLU hidden layers, linear output, mean squared vector error, minibatch
SGD with Nesterov momentum and early stopping on validation loss.  Inputs
are z-scored with training-set statistics that travel with the model;
targets are used raw.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError, FormatError, ShapeError, TrainingDivergedError
from .features import FeatureVector, LiftCoefficient

DEFAULT_LAYERS = (6, 256, 128, 64, 2)
MAGIC = b"LIFTNET1"
FORMAT_VERSION = 1


@dataclass
class NetworkParams:
    layer_sizes: list
    weights: list  # W_l has shape (out_l, in_l)
    biases: list
    activations: list
    feature_mean: np.ndarray | None = None
    feature_scale: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.layer_sizes = [int(n) for n in self.layer_sizes]
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ShapeError("need one weight matrix and bias vector per layer transition")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            expect = (self.layer_sizes[i + 1], self.layer_sizes[i])
            if W.shape != expect or b.shape != (expect[0],):
                raise ShapeError(f"layer {i}: weight {W.shape} / bias {b.shape} do not match {expect}")
        if len(self.activations) != len(self.weights):
            raise ShapeError("need one activation tag per layer")

    @property
    def n_in(self):
        return self.layer_sizes[0]

    @property
    def n_out(self):
        return self.layer_sizes[-1]

    def copy(self):
        return NetworkParams(
            list(self.layer_sizes),
            [W.copy() for W in self.weights],
            [b.copy() for b in self.biases],
            list(self.activations),
            None if self.feature_mean is None else self.feature_mean.copy(),
            None if self.feature_scale is None else self.feature_scale.copy(),
            dict(self.provenance),
        )

    def parameters(self):
        """Weights and biases interleaved: [W0, b0, W1, b1, ...] (views)."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def is_finite(self):
        return all(np.all(np.isfinite(p)) for p in self.parameters())


@dataclass
class Gradients:
    weights: list
    biases: list

    def parameters(self):
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 300
    patience: int = 30
    batch_size: int = 256
    learning_rate: float = 1e-3
    momentum: float = 0.9
    seed: int = 0
    standardize_inputs: bool = True
    standardize_targets: bool = False

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.standardize_targets:
            raise ConfigError("target standardisation is not supported; targets are trained raw")


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = 0  # 1-based
    stop_epoch: int = 0
    stop_reason: str = ""

    @property
    def best_val_loss(self):
        return self.val_loss[self.best_epoch - 1]


# ------------------------------------------------------------------ building


def init_network(layer_sizes=DEFAULT_LAYERS, seed=0, output_gain=1.0) -> NetworkParams:
    """He-normal weights (variance 2 / fan_in), zero biases.

    ``output_gain`` scales the standard deviation of the final linear layer;
    values below 1 start the network near zero output, which suits targets
    that are small on the raw scale.
    """
    sizes = [int(n) for n in layer_sizes]
    if len(sizes) < 2 or any(n < 1 for n in sizes):
        raise ConfigError(f"layer sizes must be >= 2 positive widths, got {list(layer_sizes)}")
    rng = np.random.default_rng(seed)
    weights = [rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_out, n_in)) for n_in, n_out in zip(sizes, sizes[1:])]
    weights[-1] *= float(output_gain)
    biases = [np.zeros(n_out) for n_out in sizes[1:]]
    acts = ["relu"] * (len(sizes) - 2) + ["linear"]
    return NetworkParams(sizes, weights, biases, acts)


def _as_inputs(net, f):
    X = f.as_array() if isinstance(f, FeatureVector) else np.asarray(f, float)
    if X.shape[-1] != net.n_in:
        raise ShapeError(f"input width {X.shape[-1]} does not match network input {net.n_in}")
    return X


def _standardize(net, X):
    if net.feature_mean is None:
        return X
    return (X - net.feature_mean) / net.feature_scale


def _activate(tag, h):
    if tag == "relu":
        return np.maximum(h, 0.0)
    if tag == "linear":
        return h
    raise ConfigError(f"unknown activation {tag!r}")


def _forward_all(net, Z):
    """Return pre-activations and activations of every layer (input first)."""
    acts, pres = [Z], []
    a = Z
    for W, b, tag in zip(net.weights, net.biases, net.activations):
        h = a @ W.T + b
        a = _activate(tag, h)
        pres.append(h)
        acts.append(a)
    return pres, acts


def predict(net, X):
    """Raw-input predictions for an (n, n_in) or (n_in,) array."""
    X = _as_inputs(net, X)
    _, acts = _forward_all(net, _standardize(net, np.atleast_2d(X)))
    return acts[-1] if X.ndim > 1 else acts[-1][0]


def forward(net, f):
    """Predict lift coefficients; returns LiftCoefficient for FeatureVector input."""
    out = predict(net, f)
    if isinstance(f, FeatureVector):
        return LiftCoefficient.from_array(out)
    return out


def hidden_activations(net, X):
    """Post-activation outputs of every hidden layer (for diagnostics)."""
    _, acts = _forward_all(net, _standardize(net, np.atleast_2d(_as_inputs(net, X))))
    return acts[1:-1]


def _batch_arrays(net, batch):
    if isinstance(batch, tuple) and len(batch) == 2:
        X, Y = batch
    else:
        from .dataset import to_arrays

        X, Y = to_arrays(list(batch))
    X = np.atleast_2d(_as_inputs(net, X))
    Y = np.atleast_2d(np.asarray(Y, float))
    if len(X) == 0:
        raise DomainError("batch is empty")
    if Y.shape != (len(X), net.n_out):
        raise ShapeError(f"targets of shape {Y.shape} do not match predictions ({len(X)}, {net.n_out})")
    return X, Y


def loss_mse(net, batch):
    """Mean over the batch of the squared L2 prediction error."""
    X, Y = _batch_arrays(net, batch)
    err = predict(net, X) - Y
    return float(np.mean(np.sum(err**2, axis=1)))


def _backward_arrays(net, Z, Y):
    pres, acts = _forward_all(net, Z)
    n = len(Z)
    err = acts[-1] - Y
    loss = float(np.mean(np.sum(err**2, axis=1)))
    delta = 2.0 * err / n
    gW, gb = [None] * len(net.weights), [None] * len(net.weights)
    for l in range(len(net.weights) - 1, -1, -1):
        if net.activations[l] == "relu":
            delta = delta * (pres[l] > 0)
        gW[l] = delta.T @ acts[l]
        gb[l] = delta.sum(axis=0)
        if l:
            delta = delta @ net.weights[l]
    return loss, Gradients(gW, gb)


def backward(net, batch) -> Gradients:
    """Gradient of ``loss_mse`` with respect to every weight and bias."""
    X, Y = _batch_arrays(net, batch)
    return _backward_arrays(net, _standardize(net, X), Y)[1]


# ------------------------------------------------------------------ training


def feature_statistics(X):
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return mean, scale


def train(net, train_set, val_set, cfg: TrainConfig = TrainConfig()):
    """Fit ``net`` and return (best-validation parameters, history)."""
    Xtr, Ytr = _batch_arrays(net, train_set)
    Xva, Yva = _batch_arrays(net, val_set)
    net = net.copy()
    if cfg.standardize_inputs:
        net.feature_mean, net.feature_scale = feature_statistics(Xtr)
    Ztr = _standardize(net, Xtr)
    Zva = _standardize(net, Xva)
    rng = np.random.default_rng(cfg.seed)
    params = net.parameters()
    velocity = [np.zeros_like(p) for p in params]
    lr, mom = cfg.learning_rate, cfg.momentum
    hist = TrainHistory()
    best, best_params, wait = np.inf, net.copy(), 0
    n = len(Ztr)
    for epoch in range(1, cfg.max_epochs + 1):
        perm = rng.permutation(n)
        running = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            # Nesterov: gradient at the look-ahead point theta + mu v
            for p, v in zip(params, velocity):
                p += mom * v
            loss, g = _backward_arrays(net, Ztr[idx], Ytr[idx])
            for p, v, gp in zip(params, velocity, g.parameters()):
                p -= mom * v
                v *= mom
                v -= lr * gp
                p += v
            running += loss * len(idx)
        train_loss = running / n
        val_loss = float(np.mean(np.sum((_forward_all(net, Zva)[1][-1] - Yva) ** 2, axis=1)))
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise TrainingDivergedError(epoch, train_loss if not np.isfinite(train_loss) else val_loss)
        hist.train_loss.append(train_loss)
        hist.val_loss.append(val_loss)
        if val_loss < best:
            best, best_params, wait = val_loss, net.copy(), 0
            hist.best_epoch = epoch
        else:
            wait += 1
        hist.stop_epoch = epoch
        if wait >= cfg.patience:
            hist.stop_reason = "early_stopping"
            break
    else:
        hist.stop_reason = "max_epochs"
    best_params.provenance = {**net.provenance, "train_config": asdict(cfg), "best_epoch": hist.best_epoch,
                              "best_val_loss": best, "n_train": n, "n_val": len(Zva)}
    return best_params, hist


# ------------------------------------------------------------- serialisation


def _blocks(net):
    blocks = []
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        blocks += [(f"W{i}", W), (f"b{i}", b)]
    if net.feature_mean is not None:
        blocks += [("feature_mean", net.feature_mean), ("feature_scale", net.feature_scale)]
    return blocks


def model_bytes(net) -> bytes:
    blocks = _blocks(net)
    header = {
        "format_version": FORMAT_VERSION,
        "layer_sizes": net.layer_sizes,
        "activations": net.activations,
        "standardization": net.feature_mean is not None,
        "blocks": [{"name": name, "shape": list(arr.shape)} for name, arr in blocks],
        "provenance": net.provenance,
    }
    hjson = json.dumps(header, sort_keys=True, separators=(",", ":"), default=_json_default).encode("utf-8")
    body = MAGIC + struct.pack("<I", len(hjson)) + hjson
    body += b"".join(np.ascontiguousarray(arr, dtype="<f8").tobytes() for _, arr in blocks)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def save_model(net, path):
    Path(path).write_bytes(model_bytes(net))


def model_from_bytes(data: bytes) -> NetworkParams:
    if len(data) < len(MAGIC) + 8 or data[: len(MAGIC)] != MAGIC:
        raise FormatError("not a LIFTNET1 model file (bad magic)")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise FormatError("model file checksum mismatch (truncated or corrupted)")
    (hlen,) = struct.unpack("<I", body[8:12])
    try:
        header = json.loads(body[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"model header is not valid JSON: {exc}") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"unsupported model format version {header.get('format_version')!r}")
    offset = 12 + hlen
    arrays = {}
    for blk in header["blocks"]:
        count = int(np.prod(blk["shape"])) if blk["shape"] else 1
        end = offset + 8 * count
        if end > len(body):
            raise FormatError(f"model block {blk['name']} runs past end of file")
        arrays[blk["name"]] = np.frombuffer(body[offset:end], dtype="<f8").reshape(blk["shape"]).astype(float)
        offset = end
    if offset != len(body):
        raise FormatError("trailing bytes after parameter blocks")
    n_layers = len(header["layer_sizes"]) - 1
    try:
        net = NetworkParams(
            header["layer_sizes"],
            [arrays[f"W{i}"] for i in range(n_layers)],
            [arrays[f"b{i}"] for i in range(n_layers)],
            header["activations"],
            arrays.get("feature_mean"),
            arrays.get("feature_scale"),
            header.get("provenance", {}),
        )
    except KeyError as exc:
        raise FormatError(f"model file lacks parameter block {exc}") from None
    except ShapeError as exc:
        raise FormatError(f"model blocks disagree with the header: {exc}") from None
    return net


def load_model(path) -> NetworkParams:
    return model_from_bytes(Path(path).read_bytes())
