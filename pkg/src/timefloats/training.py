"""Backpropagation with every matrix-vector product on the simulated MAC.

Forward activations (``W x``) and backward error propagation (``W^T delta``)
run through :func:`timefloats.pipeline.mac_batch`, one MAC per output row.
The gradient outer products ``delta x^T`` and the weight update are digital.

Weights live twice: float64 master copies take the SGD updates and are
re-encoded (truncating) into Fp8 after every step; the MAC only ever sees the
encoded copy. Each weight matrix carries its bias as the last column, fed by
a constant 1.0 input.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .analog import AnalogConfig, VariabilityModel
from .energy import EnergyTable, mac_energy
from .fp8 import Fp8Array, decode_array, encode_array
from .pipeline import DEFAULT_CONFIG, PipelineConfig, mac_batch

ENGINES = ("timefloats", "float_ref")
ACTIVATIONS = ("sigmoid", "relu", "linear")


def activate(z, kind: str):
    if kind == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "linear":
        return np.asarray(z, dtype=np.float64)
    raise ValueError(f"unknown activation {kind!r}")


def activate_grad(z, kind: str):
    if kind == "sigmoid":
        s = 1.0 / (1.0 + np.exp(-z))
        return s * (1.0 - s)
    if kind == "relu":
        return (np.asarray(z) > 0).astype(np.float64)
    if kind == "linear":
        return np.ones_like(z, dtype=np.float64)
    raise ValueError(f"unknown activation {kind!r}")


@dataclass
class Mlp:
    layer_dims: list[int]
    master_weights: list[np.ndarray]
    activation: str = "sigmoid"
    learning_rate: float = 0.5
    output_activation: str | None = None
    quantized_weights: list[Fp8Array] = field(init=False, repr=False)

    def __post_init__(self):
        if len(self.layer_dims) < 2:
            raise ValueError("need at least an input and an output layer")
        if len(self.master_weights) != len(self.layer_dims) - 1:
            raise ValueError("one weight matrix per layer transition")
        for i, w in enumerate(self.master_weights):
            want = (self.layer_dims[i + 1], self.layer_dims[i] + 1)
            if w.shape != want:
                raise ValueError(f"layer {i} weights have shape {w.shape}, expected {want}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.output_activation is None:
            self.output_activation = self.activation
        if self.learning_rate < 0:
            raise ValueError("learning rate must be nonnegative")
        self.master_weights = [np.array(w, dtype=np.float64) for w in self.master_weights]
        self.requantize()

    @classmethod
    def init(cls, layer_dims, seed: int = 0, **kw) -> "Mlp":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init, biases included."""
        rng = np.random.default_rng(seed)
        ws = []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            lim = 1.0 / np.sqrt(fan_in)
            ws.append(rng.uniform(-lim, lim, size=(fan_out, fan_in + 1)))
        return cls(list(layer_dims), ws, **kw)

    def requantize(self):
        self.quantized_weights = [encode_array(w, "truncate") for w in self.master_weights]

    def layer_activation(self, i: int) -> str:
        return self.output_activation if i == len(self.master_weights) - 1 else self.activation

    def weights_json(self) -> str:
        layers = [
            {"shape": list(q.shape), "codes": q.to_codes()} for q in self.quantized_weights
        ]
        return json.dumps({"layer_dims": self.layer_dims, "layers": layers}, indent=1) + "\n"


class MacEngine:
    """Runs batches of row products on the pipeline and meters them.

    Owns the variability noise stream so one training run draws from a single
    deterministic generator.
    """

    def __init__(
        self,
        cfg: PipelineConfig = DEFAULT_CONFIG,
        analog: AnalogConfig | None = None,
        variability: VariabilityModel | None = None,
        table: EnergyTable | None = None,
    ):
        self.cfg = cfg
        self.analog = analog or AnalogConfig()
        self.variability = variability
        self.table = table or EnergyTable()
        self.rng = np.random.default_rng(variability.seed) if variability else None
        self.mac_count = 0
        self.energy = 0.0
        self._energy_cache: dict[int, float] = {}

    def matvec(self, w: Fp8Array, x) -> np.ndarray:
        """``w @ x`` with ``w`` of shape (rows, n); ``x`` is encoded unless already Fp8."""
        xq = x if isinstance(x, Fp8Array) else encode_array(x, "truncate")
        rows, n = w.shape
        vm = self.variability
        if vm is not None and not vm.is_ideal:
            # same draw order as pipeline.mac: exponent path, then mantissa path
            z_exp = self.rng.standard_normal((rows, n))
            z_man = self.rng.standard_normal((rows, n))
            res = mac_batch(
                xq.reshape(1, n), w, self.cfg, self.analog, vm.sigma_exponent, vm.sigma_mantissa, z_exp, z_man
            )
        else:
            res = mac_batch(xq.reshape(1, n), w, self.cfg, self.analog)
        self.mac_count += rows
        if n not in self._energy_cache:
            self._energy_cache[n] = mac_energy(n, self.table)
        self.energy += rows * self._energy_cache[n]
        return decode_array(res.output)

    def evaluate(self, w: Fp8Array, xs: np.ndarray) -> np.ndarray:
        """Unmetered, noise-free ``xs @ w.T`` for many input rows at once."""
        xq = encode_array(xs, "truncate")
        s, n = xq.shape
        rows = w.shape[0]
        res = mac_batch(xq.reshape(s, 1, n), w.reshape(1, rows, n), self.cfg, self.analog)
        return decode_array(res.output)


def _with_bias(x: np.ndarray) -> np.ndarray:
    return np.concatenate([x, np.ones(x.shape[:-1] + (1,))], axis=-1)


def forward(net: Mlp, x0, engine: str = "float_ref", mac: MacEngine | None = None):
    """Activations ``[x0, x1, ..., xL]`` and pre-activations ``[z1, ..., zL]``.

    In the timefloats engine each layer input is Fp8-encoded before it enters
    the MAC, and the recorded activation is that encoded value.
    """
    x = np.asarray(x0, dtype=np.float64)
    if x.shape != (net.layer_dims[0],):
        raise ValueError(f"input has shape {x.shape}, expected ({net.layer_dims[0]},)")
    if engine not in ENGINES:
        raise ValueError(f"unknown engine {engine!r}")
    if engine == "timefloats" and mac is None:
        mac = MacEngine()
    acts, pre = [], []
    for i, w in enumerate(net.master_weights):
        xb = _with_bias(x)
        if engine == "timefloats":
            xq = encode_array(xb, "truncate")
            xb = decode_array(xq)
            z = mac.matvec(net.quantized_weights[i], xq)
        else:
            z = w @ xb
        acts.append(x if engine == "float_ref" else xb[:-1])
        pre.append(z)
        x = activate(z, net.layer_activation(i))
    acts.append(x)
    return acts, pre


def backward(net: Mlp, acts, pre, target, engine: str = "float_ref", mac: MacEngine | None = None):
    """Per-layer deltas and weight gradients for the loss ``0.5 * ||xL - t||^2``."""
    t = np.asarray(target, dtype=np.float64)
    if t.shape != acts[-1].shape:
        raise ValueError(f"target has shape {t.shape}, expected {acts[-1].shape}")
    if engine == "timefloats" and mac is None:
        mac = MacEngine()
    n_layers = len(net.master_weights)
    deltas = [None] * n_layers
    grads = [None] * n_layers
    delta = (acts[-1] - t) * activate_grad(pre[-1], net.layer_activation(n_layers - 1))
    for i in range(n_layers - 1, -1, -1):
        deltas[i] = delta
        grads[i] = np.outer(delta, _with_bias(acts[i]))
        if i == 0:
            break
        if engine == "timefloats":
            back = mac.matvec(net.quantized_weights[i][:, :-1].T, delta)
        else:
            back = net.master_weights[i][:, :-1].T @ delta
        delta = back * activate_grad(pre[i - 1], net.layer_activation(i - 1))
    return deltas, grads


def loss(output, target) -> float:
    d = np.asarray(output) - np.asarray(target)
    return 0.5 * float(np.sum(d * d))


def two_moons(n: int = 200, noise: float = 0.1, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Two interleaved half circles, centred near the origin; labels 0 and 1."""
    rng = np.random.default_rng(seed)
    n_outer = n // 2
    n_inner = n - n_outer
    t_outer = rng.uniform(0.0, np.pi, n_outer)
    t_inner = rng.uniform(0.0, np.pi, n_inner)
    outer = np.stack([np.cos(t_outer), np.sin(t_outer)], axis=1)
    inner = np.stack([1.0 - np.cos(t_inner), 0.5 - np.sin(t_inner)], axis=1)
    X = np.concatenate([outer, inner]) + rng.normal(0.0, noise, size=(n, 2))
    X -= np.array([0.5, 0.25])
    y = np.concatenate([np.zeros(n_outer), np.ones(n_inner)])
    return X, y


@dataclass(frozen=True)
class TrainRecord:
    epoch: int
    loss: float
    accuracy: float
    total_energy: float
    mac_count: int


def evaluate(net: Mlp, X, y, engine: str, mac: MacEngine | None = None) -> tuple[float, float]:
    """Mean loss and accuracy (output thresholded at 0.5) over a dataset."""
    X = np.asarray(X, dtype=np.float64)
    if engine == "float_ref":
        x = X
        for i, w in enumerate(net.master_weights):
            x = activate(_with_bias(x) @ w.T, net.layer_activation(i))
    else:
        mac = mac or MacEngine()
        x = decode_array(encode_array(X, "truncate"))
        for i, q in enumerate(net.quantized_weights):
            x = activate(mac.evaluate(q, _with_bias(x)), net.layer_activation(i))
    out = x[:, 0] if x.shape[1] == 1 else x
    targets = np.asarray(y, dtype=np.float64)
    if x.shape[1] == 1:
        mean_loss = float(np.mean(0.5 * (out - targets) ** 2))
        acc = float(np.mean((out >= 0.5) == (targets >= 0.5)))
    else:
        onehot = np.eye(x.shape[1])[targets.astype(int)]
        mean_loss = float(np.mean(0.5 * np.sum((x - onehot) ** 2, axis=1)))
        acc = float(np.mean(np.argmax(x, axis=1) == targets))
    return mean_loss, acc


def train(
    net: Mlp,
    X,
    y,
    epochs: int,
    engine: str = "float_ref",
    cfg: PipelineConfig = DEFAULT_CONFIG,
    analog: AnalogConfig | None = None,
    variability: VariabilityModel | None = None,
    table: EnergyTable | None = None,
    seed: int = 0,
) -> list[TrainRecord]:
    """Plain per-sample SGD; record 0 is the untrained network.

    The sample order of every epoch is shuffled from ``seed``. Energy and MAC
    counts cover the training MACs of the timefloats engine only; the
    per-epoch evaluation pass is not metered.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    if engine not in ENGINES:
        raise ValueError(f"unknown engine {engine!r}")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(X) == 0:
        raise ValueError("empty dataset")
    n_out = net.layer_dims[-1]
    targets = y[:, None] if n_out == 1 else np.eye(n_out)[y.astype(int)]
    mac = MacEngine(cfg, analog, variability, table) if engine == "timefloats" else None
    rng = np.random.default_rng(seed)

    records = [TrainRecord(0, *evaluate(net, X, y, engine, mac), 0.0, 0)]
    for epoch in range(1, epochs + 1):
        for k in rng.permutation(len(X)):
            acts, pre = forward(net, X[k], engine, mac)
            _, grads = backward(net, acts, pre, targets[k], engine, mac)
            for w, g in zip(net.master_weights, grads):
                w -= net.learning_rate * g
            net.requantize()
        l, a = evaluate(net, X, y, engine, mac)
        records.append(
            TrainRecord(epoch, l, a, mac.energy if mac else 0.0, mac.mac_count if mac else 0)
        )
    return records


def records_to_csv(records) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["epoch", "loss", "accuracy", "energy_J", "mac_count"])
    for r in records:
        wr.writerow([r.epoch, f"{r.loss:.10g}", f"{r.accuracy:.6g}", f"{r.total_energy:.10g}", r.mac_count])
    return buf.getvalue()
