"""Score network, reverse-mode gradients, Adam, and the training loop.

The network is a plain fully connected MLP on features (q, p, s, t),
trained by denoising score matching: for a kernel draw z_t built from
noise eps3 with conditional precision l_t, the target satisfies
s_theta = -l_t * eps3 at the optimum, which is exactly the s-channel
conditional score. Backpropagation is written out by hand so the whole
pipeline stays dependency-free and bit-reproducible.
"""

from __future__ import annotations

import io
import json
import os
from dataclasses import dataclass

import numpy as np

from .dynamics import DynamicsParams, PhaseState, kernel_sample
from .mat3 import DecompositionError

__all__ = [
    "TrainingError",
    "ScoreNet",
    "TrainConfig",
    "silu",
    "forward_score",
    "loss",
    "AdamState",
    "adam_step",
    "train",
    "save_checkpoint",
    "load_checkpoint",
]

_CKPT_MAGIC = b"TOLD-CKPT-1\n"


class TrainingError(RuntimeError):
    pass


def silu(x):
    """x * sigmoid(x), the smooth gate used on every hidden layer."""
    x = np.asarray(x, dtype=float)
    sg = np.empty_like(x)
    pos = x >= 0
    sg[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    sg[~pos] = ex / (1.0 + ex)
    return x * sg


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class ScoreNet:
    """Fully connected SILU MLP with a zero-initialized linear head.

    Hidden weights draw from the fan-in-scaled uniform
    U(-1/sqrt(fan), 1/sqrt(fan)); the final layer starts at zero so the
    initial model is the zero score and the initial denoising loss sits
    at its known closed-form value.
    """

    activation = "silu"

    def __init__(self, weights, biases):
        self.weights = [np.asarray(w, dtype=float) for w in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]
        dims = [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]
        for i, w in enumerate(self.weights):
            if w.shape != (dims[i], dims[i + 1]) or self.biases[i].shape != (dims[i + 1],):
                raise ValueError("inconsistent layer shapes")
        self.layer_dims = dims

    @classmethod
    def initialize(cls, layer_dims, rng) -> "ScoreNet":
        if len(layer_dims) < 2:
            raise ValueError("need at least input and output dims")
        weights, biases = [], []
        for i in range(len(layer_dims) - 1):
            fan_in, fan_out = layer_dims[i], layer_dims[i + 1]
            if i == len(layer_dims) - 2:
                w = np.zeros((fan_in, fan_out))
            else:
                lim = 1.0 / np.sqrt(fan_in)
                w = rng.uniform(-lim, lim, (fan_in, fan_out))
            weights.append(w)
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @property
    def in_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def out_dim(self) -> int:
        return self.layer_dims[-1]

    def forward(self, x: np.ndarray):
        """Returns (output, cache); cache feeds backward()."""
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(f"expected (batch, {self.in_dim}) input, got {x.shape}")
        acts = [x]
        pre = []
        h = x
        for i in range(len(self.weights) - 1):
            z = h @ self.weights[i] + self.biases[i]
            pre.append(z)
            h = z * _sigmoid(z)
            acts.append(h)
        y = h @ self.weights[-1] + self.biases[-1]
        return y, (acts, pre)

    def backward(self, dy: np.ndarray, cache):
        """Gradients of sum(dy * output) w.r.t. every weight and bias."""
        acts, pre = cache
        n_layers = len(self.weights)
        gw = [None] * n_layers
        gb = [None] * n_layers
        gw[-1] = acts[-1].T @ dy
        gb[-1] = dy.sum(axis=0)
        dh = dy @ self.weights[-1].T
        for i in range(n_layers - 2, -1, -1):
            sg = _sigmoid(pre[i])
            dz = dh * (sg * (1.0 + pre[i] * (1.0 - sg)))
            gw[i] = acts[i].T @ dz
            gb[i] = dz.sum(axis=0)
            if i > 0:
                dh = dz @ self.weights[i].T
        return gw, gb


def features(z: PhaseState, t) -> np.ndarray:
    """Network input columns (q, p, s, t)."""
    n = z.q.shape[0]
    t_col = np.broadcast_to(np.asarray(t, dtype=float), (n,))[:, None]
    return np.concatenate([z.q, z.p, z.s, t_col], axis=1)


def forward_score(net: ScoreNet, z: PhaseState, t) -> np.ndarray:
    """Evaluate the s-channel score estimate at states z, times t."""
    x = features(z, t)
    y, _ = net.forward(x)
    return y


def loss(net: ScoreNet, params: DynamicsParams, q0_batch: np.ndarray, rng,
         t_min: float = 1e-3):
    """One denoising score-matching objective evaluation with gradients.

    Draws one t ~ U(t_min, horizon) per sample, perturbs q0 through the
    kernel, and scores the residual eps3 + s_theta / l_t, averaged over
    the batch (summed over dimensions). Returns (value, (gw, gb)).
    """
    q0_batch = np.asarray(q0_batch, dtype=float)
    if q0_batch.ndim != 2 or q0_batch.shape[0] == 0:
        raise ValueError("q0_batch must be a nonempty (batch, dim) array")
    n = q0_batch.shape[0]
    t = rng.uniform(t_min, params.horizon, n)
    try:
        z, eps3, l_t = kernel_sample(params, q0_batch, t, rng, jitter=True)
    except DecompositionError as e:
        raise TrainingError(f"kernel covariance factorization failed: {e}") from e
    y, cache = net.forward(features(z, t))
    resid = eps3 + y / l_t[:, None]
    value = float((resid ** 2).sum(axis=1).mean())
    dy = 2.0 * resid / l_t[:, None] / n
    return value, net.backward(dy, cache)


class AdamState:
    """First/second moment accumulators plus the bias-correction counter."""

    beta1 = 0.9
    beta2 = 0.999
    eps = 1e-8

    def __init__(self, net: ScoreNet, learning_rate: float):
        self.lr = float(learning_rate)
        self.count = 0
        self.mw = [np.zeros_like(w) for w in net.weights]
        self.vw = [np.zeros_like(w) for w in net.weights]
        self.mb = [np.zeros_like(b) for b in net.biases]
        self.vb = [np.zeros_like(b) for b in net.biases]


def adam_step(state: AdamState, net: ScoreNet, gradients) -> None:
    """Standard bias-corrected Adam update, applied in place."""
    gw, gb = gradients
    state.count += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.count
    c2 = 1.0 - b2 ** state.count
    for i in range(len(net.weights)):
        state.mw[i] = b1 * state.mw[i] + (1.0 - b1) * gw[i]
        state.vw[i] = b2 * state.vw[i] + (1.0 - b2) * gw[i] ** 2
        net.weights[i] -= state.lr * (state.mw[i] / c1) / (np.sqrt(state.vw[i] / c2) + state.eps)
        state.mb[i] = b1 * state.mb[i] + (1.0 - b1) * gb[i]
        state.vb[i] = b2 * state.vb[i] + (1.0 - b2) * gb[i] ** 2
        net.biases[i] -= state.lr * (state.mb[i] / c1) / (np.sqrt(state.vb[i] / c2) + state.eps)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 4096
    n_iterations: int = 5000
    learning_rate: float = 5e-3
    seed: int = 0
    t_min: float = 1e-3
    checkpoint_interval: int = 1000

    def __post_init__(self):
        if self.batch_size < 1 or self.n_iterations < 0:
            raise ValueError("batch_size must be >= 1 and n_iterations >= 0")
        if self.learning_rate <= 0 or self.t_min <= 0 or self.checkpoint_interval < 1:
            raise ValueError("learning_rate, t_min, checkpoint_interval must be positive")


def _write_f64(buf, arr):
    buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def save_checkpoint(path, net: ScoreNet, opt: AdamState, iteration: int,
                    rng, loss_history) -> None:
    """Serialize net + optimizer + RNG state, bit-exact on round-trip.

    Plain container: a magic line, one JSON header line (dims, counters,
    generator state), then raw little-endian float64 blocks in a fixed
    order. Avoids archive formats whose metadata (timestamps) would
    break byte-identical reruns.
    """
    header = {
        "layer_dims": list(net.layer_dims),
        "activation": net.activation,
        "iteration": int(iteration),
        "adam_count": int(opt.count),
        "learning_rate": opt.lr,
        "rng_state": rng.bit_generator.state,
        "n_history": len(loss_history),
    }
    buf = io.BytesIO()
    buf.write(_CKPT_MAGIC)
    buf.write((json.dumps(header, sort_keys=True) + "\n").encode())
    for group in (net.weights, net.biases, opt.mw, opt.vw, opt.mb, opt.vb):
        for arr in group:
            _write_f64(buf, arr)
    _write_f64(buf, np.asarray(loss_history, dtype=float))
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(buf.getvalue())
    os.replace(tmp, path)


def load_checkpoint(path):
    """Returns (net, opt, iteration, rng, loss_history)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_CKPT_MAGIC))
        if magic != _CKPT_MAGIC:
            raise ValueError(f"{path} is not a checkpoint file")
        header = json.loads(fh.readline().decode())
        dims = header["layer_dims"]

        def read_block(shape):
            count = int(np.prod(shape))
            arr = np.frombuffer(fh.read(count * 8), dtype="<f8").astype(float)
            return arr.reshape(shape)

        w_shapes = [(dims[i], dims[i + 1]) for i in range(len(dims) - 1)]
        b_shapes = [(dims[i + 1],) for i in range(len(dims) - 1)]
        weights = [read_block(s) for s in w_shapes]
        biases = [read_block(s) for s in b_shapes]
        net = ScoreNet(weights, biases)
        opt = AdamState(net, header["learning_rate"])
        opt.count = header["adam_count"]
        opt.mw = [read_block(s) for s in w_shapes]
        opt.vw = [read_block(s) for s in w_shapes]
        opt.mb = [read_block(s) for s in b_shapes]
        opt.vb = [read_block(s) for s in b_shapes]
        history = read_block((header["n_history"],)).tolist()
    rng = np.random.default_rng()
    rng.bit_generator.state = header["rng_state"]
    return net, opt, header["iteration"], rng, history


def _write_loss_csv(path, history):
    lines = ["iteration,loss"]
    lines += [f"{i + 1},{v:.17g}" for i, v in enumerate(history)]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def train(params: DynamicsParams, data_source, cfg: TrainConfig, layer_dims,
          checkpoint_dir=None, resume_from=None, log=None):
    """Run the denoising score-matching loop.

    data_source(n, rng) must yield an (n, dim) batch. Per iteration the
    draw order is: data batch, per-sample times, kernel noise; with a
    fixed seed the whole run is bit-reproducible, and resuming from a
    checkpoint continues the identical stream. Returns
    (net, loss_history).
    """
    if resume_from is not None:
        net, opt, start, rng, history = load_checkpoint(resume_from)
        if list(net.layer_dims) != list(layer_dims):
            raise ValueError(
                f"checkpoint layer dims {net.layer_dims} != requested {layer_dims}")
    else:
        rng = np.random.default_rng(cfg.seed)
        net = ScoreNet.initialize(layer_dims, rng)
        opt = AdamState(net, cfg.learning_rate)
        start = 0
        history = []

    if checkpoint_dir is not None:
        os.makedirs(checkpoint_dir, exist_ok=True)

    def emit(iteration):
        if checkpoint_dir is None:
            return
        ckpt = os.path.join(checkpoint_dir, f"ckpt_{iteration:07d}.bin")
        save_checkpoint(ckpt, net, opt, iteration, rng, history)
        _write_loss_csv(os.path.join(checkpoint_dir, "loss.csv"), history)

    for it in range(start + 1, cfg.n_iterations + 1):
        q0 = np.asarray(data_source(cfg.batch_size, rng), dtype=float)
        value, grads = loss(net, params, q0, rng, t_min=cfg.t_min)
        if not np.isfinite(value):
            raise TrainingError(f"non-finite loss at iteration {it}")
        adam_step(opt, net, grads)
        history.append(value)
        if log is not None and (it % 100 == 0 or it == 1):
            log(it, value)
        if it % cfg.checkpoint_interval == 0 or it == cfg.n_iterations:
            emit(it)
    if cfg.n_iterations == 0 and checkpoint_dir is not None:
        emit(0)
    return net, history
