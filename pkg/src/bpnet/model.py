"""Hierarchical dense + recurrent sequence regressor, built from scratch.

Architecture per time step: a time-distributed fully connected layer with
ReLU lifts each 513-feature vector to 128 units; a bidirectional LSTM
(forward and backward cells, outputs concatenated) models temporal context;
a second LSTM stacks on top; a linear head projects each step to (SBP, DBP).

Everything runs in double precision numpy: exact backpropagation through
time, global gradient-norm clipping, and bias-corrected Adam.  All shapes are
parametric so that tiny instances can be verified against finite differences.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from bpnet.segmentation import FEATURE_DIM, ChannelStats, DatasetSplit, TargetPair, standardize_features

DENSE_UNITS = 128
HIDDEN_UNITS = 128
OUTPUT_DIM = 2

MODEL_MAGIC = b"BPNET1"


class ModelError(ValueError):
    pass


class NonFiniteActivation(FloatingPointError):
    """Forward pass overflowed; carries the offending step index."""

    def __init__(self, step: int, layer: str):
        super().__init__(f"non-finite activation at step {step} in {layer}")
        self.step = step
        self.layer = layer


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, batch: int):
        super().__init__(f"training loss became non-finite at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class LstmWeights:
    """One cell's parameters; gate order [input | forget | cell | output]."""

    wx: np.ndarray  # (input_dim, 4H)
    wh: np.ndarray  # (H, 4H)
    b: np.ndarray   # (4H,)

    @property
    def hidden(self) -> int:
        return self.wh.shape[0]


@dataclass
class ModelParams:
    dense_w: np.ndarray
    dense_b: np.ndarray
    fw: LstmWeights
    bw: LstmWeights
    lstm2: LstmWeights
    head_w: np.ndarray
    head_b: np.ndarray

    def arrays(self) -> list[tuple[str, np.ndarray]]:
        return [
            ("dense_w", self.dense_w),
            ("dense_b", self.dense_b),
            ("fw.wx", self.fw.wx),
            ("fw.wh", self.fw.wh),
            ("fw.b", self.fw.b),
            ("bw.wx", self.bw.wx),
            ("bw.wh", self.bw.wh),
            ("bw.b", self.bw.b),
            ("lstm2.wx", self.lstm2.wx),
            ("lstm2.wh", self.lstm2.wh),
            ("lstm2.b", self.lstm2.b),
            ("head_w", self.head_w),
            ("head_b", self.head_b),
        ]

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.dense_w.copy(), self.dense_b.copy(),
            LstmWeights(self.fw.wx.copy(), self.fw.wh.copy(), self.fw.b.copy()),
            LstmWeights(self.bw.wx.copy(), self.bw.wh.copy(), self.bw.b.copy()),
            LstmWeights(self.lstm2.wx.copy(), self.lstm2.wh.copy(), self.lstm2.b.copy()),
            self.head_w.copy(), self.head_b.copy(),
        )

    def zeros_like(self) -> "ModelParams":
        out = self.copy()
        for _, arr in out.arrays():
            arr[...] = 0.0
        return out

    @property
    def input_dim(self) -> int:
        return self.dense_w.shape[0]

    @property
    def dense_units(self) -> int:
        return self.dense_w.shape[1]

    @property
    def hidden(self) -> int:
        return self.fw.hidden

    @property
    def output_dim(self) -> int:
        return self.head_w.shape[1]

    @property
    def count(self) -> int:
        return sum(arr.size for _, arr in self.arrays())


@dataclass
class TrainConfig:
    m: int = 10
    batch_size: int = 128
    learning_rate: float = 0.001
    grad_cap: float = 3.0  # 3.0 for M=10 runs, 5.0 for M=32 runs
    max_epochs: int = 300
    patience: int = 20
    seed: int = 0

    def __post_init__(self) -> None:
        if self.grad_cap <= 0:
            raise ModelError(f"gradient cap must be positive, got {self.grad_cap}")
        if self.batch_size < 1:
            raise ModelError(f"batch size must be >= 1, got {self.batch_size}")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1
    steps: int = 0


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape: tuple) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def _init_lstm(rng: np.random.Generator, input_dim: int, hidden: int) -> LstmWeights:
    # Glorot per gate block; forget-gate bias starts at 1.
    wx = _glorot(rng, input_dim, hidden, (input_dim, 4 * hidden))
    wh = _glorot(rng, hidden, hidden, (hidden, 4 * hidden))
    b = np.zeros(4 * hidden)
    b[hidden : 2 * hidden] = 1.0
    return LstmWeights(wx, wh, b)


def init_params(
    seed: int,
    input_dim: int = FEATURE_DIM,
    dense_units: int = DENSE_UNITS,
    hidden: int = HIDDEN_UNITS,
    output_dim: int = OUTPUT_DIM,
) -> ModelParams:
    """Glorot-uniform weights, zero biases except LSTM forget gates at 1."""
    rng = np.random.default_rng(seed)
    dense_w = _glorot(rng, input_dim, dense_units, (input_dim, dense_units))
    fw = _init_lstm(rng, dense_units, hidden)
    bw = _init_lstm(rng, dense_units, hidden)
    lstm2 = _init_lstm(rng, 2 * hidden, hidden)
    head_w = _glorot(rng, hidden, output_dim, (hidden, output_dim))
    return ModelParams(
        dense_w, np.zeros(dense_units), fw, bw, lstm2, head_w, np.zeros(output_dim)
    )


@dataclass
class LstmCache:
    inputs: np.ndarray  # (B, M, Din)
    gates: np.ndarray   # (B, M, 4H) post-activation
    cells: np.ndarray   # (B, M, H)
    hidden: np.ndarray  # (B, M, H)


def lstm_forward(inputs: np.ndarray, w: LstmWeights, layer: str = "lstm") -> tuple[np.ndarray, LstmCache]:
    """Run one LSTM direction over (B, M, Din) inputs."""
    B, M, _ = inputs.shape
    H = w.hidden
    pre = inputs @ w.wx + w.b
    gates = np.empty((B, M, 4 * H))
    cells = np.empty((B, M, H))
    hidden = np.empty((B, M, H))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    for t in range(M):
        z = pre[:, t] + h @ w.wh
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H : 2 * H])
        g = np.tanh(z[:, 2 * H : 3 * H])
        o = _sigmoid(z[:, 3 * H :])
        c = f * c + i * g
        h = o * np.tanh(c)
        if not np.all(np.isfinite(h)):
            raise NonFiniteActivation(t, layer)
        gates[:, t, :H] = i
        gates[:, t, H : 2 * H] = f
        gates[:, t, 2 * H : 3 * H] = g
        gates[:, t, 3 * H :] = o
        cells[:, t] = c
        hidden[:, t] = h
    return hidden, LstmCache(inputs, gates, cells, hidden)


def lstm_backward(w: LstmWeights, cache: LstmCache, d_hidden: np.ndarray) -> tuple[np.ndarray, LstmWeights]:
    """BPTT through one direction; returns (d_inputs, weight grads)."""
    B, M, H = d_hidden.shape
    gates, cells, hidden = cache.gates, cache.cells, cache.hidden
    d_wx = np.zeros_like(w.wx)
    d_wh = np.zeros_like(w.wh)
    d_b = np.zeros_like(w.b)
    d_inputs = np.empty_like(cache.inputs)
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(M - 1, -1, -1):
        i = gates[:, t, :H]
        f = gates[:, t, H : 2 * H]
        g = gates[:, t, 2 * H : 3 * H]
        o = gates[:, t, 3 * H :]
        tc = np.tanh(cells[:, t])
        dh = d_hidden[:, t] + dh_next
        do = dh * tc
        dc = dc_next + dh * o * (1.0 - tc * tc)
        c_prev = cells[:, t - 1] if t > 0 else np.zeros((B, H))
        h_prev = hidden[:, t - 1] if t > 0 else np.zeros((B, H))
        dz = np.concatenate(
            [
                dc * g * i * (1.0 - i),
                dc * c_prev * f * (1.0 - f),
                dc * i * (1.0 - g * g),
                do * o * (1.0 - o),
            ],
            axis=1,
        )
        d_wx += cache.inputs[:, t].T @ dz
        d_wh += h_prev.T @ dz
        d_b += dz.sum(axis=0)
        d_inputs[:, t] = dz @ w.wx.T
        dh_next = dz @ w.wh.T
        dc_next = dc * f
    return d_inputs, LstmWeights(d_wx, d_wh, d_b)


@dataclass
class ForwardCache:
    x: np.ndarray
    dense_pre: np.ndarray
    dense_out: np.ndarray
    fw_cache: LstmCache
    bw_cache: LstmCache
    bi_out: np.ndarray    # (B, M, 2H) concatenated bidirectional output
    lstm2_cache: LstmCache
    lstm2_out: np.ndarray
    outputs: np.ndarray   # (B, M, out)


def forward_batch(params: ModelParams, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Forward pass over a (B, M, input_dim) batch."""
    if x.ndim != 3 or x.shape[2] != params.input_dim:
        raise ModelError(f"expected (B, M, {params.input_dim}) input, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ModelError("non-finite input features")
    dense_pre = x @ params.dense_w + params.dense_b
    dense_out = np.maximum(dense_pre, 0.0)
    h_fw, fw_cache = lstm_forward(dense_out, params.fw, "forward lstm")
    rev = np.ascontiguousarray(dense_out[:, ::-1])
    h_bw_rev, bw_cache = lstm_forward(rev, params.bw, "backward lstm")
    bi_out = np.concatenate([h_fw, h_bw_rev[:, ::-1]], axis=2)
    h2, lstm2_cache = lstm_forward(bi_out, params.lstm2, "second lstm")
    outputs = h2 @ params.head_w + params.head_b
    return outputs, ForwardCache(
        x, dense_pre, dense_out, fw_cache, bw_cache, bi_out, lstm2_cache, h2, outputs
    )


def forward(params: ModelParams, sequence: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Forward pass over one (M, input_dim) sequence."""
    seq = np.asarray(sequence, dtype=float)
    if seq.ndim != 2:
        raise ModelError(f"expected (M, input_dim) sequence, got shape {seq.shape}")
    outputs, cache = forward_batch(params, seq[None])
    return outputs[0], cache


def backward_batch(
    params: ModelParams, cache: ForwardCache, targets: np.ndarray
) -> tuple[ModelParams, float]:
    """Exact gradients of the mean squared error over all steps and outputs."""
    y = cache.outputs
    if targets.shape != y.shape:
        raise ModelError(f"targets shape {targets.shape} does not match outputs {y.shape}")
    err = y - targets
    loss = float(np.mean(err * err))
    d_y = 2.0 * err / err.size

    d_head_w = np.einsum("bmh,bmo->ho", cache.lstm2_out, d_y)
    d_head_b = d_y.sum(axis=(0, 1))
    d_h2 = d_y @ params.head_w.T

    d_bi, g_lstm2 = lstm_backward(params.lstm2, cache.lstm2_cache, d_h2)
    H = params.hidden
    d_fw_out = np.ascontiguousarray(d_bi[:, :, :H])
    d_bw_out_rev = np.ascontiguousarray(d_bi[:, ::-1, H:])
    d_dense_fw, g_fw = lstm_backward(params.fw, cache.fw_cache, d_fw_out)
    d_dense_bw_rev, g_bw = lstm_backward(params.bw, cache.bw_cache, d_bw_out_rev)
    d_dense = d_dense_fw + d_dense_bw_rev[:, ::-1]

    d_pre = d_dense * (cache.dense_pre > 0)
    d_dense_w = np.einsum("bmd,bmh->dh", cache.x, d_pre)
    d_dense_b = d_pre.sum(axis=(0, 1))

    grads = ModelParams(d_dense_w, d_dense_b, g_fw, g_bw, g_lstm2, d_head_w, d_head_b)
    return grads, loss


def backward(
    params: ModelParams, cache: ForwardCache, targets: np.ndarray
) -> tuple[ModelParams, float]:
    """Gradients for a single-sequence cache from :func:`forward`."""
    tgt = np.asarray(targets, dtype=float)
    if tgt.ndim == 2:
        tgt = tgt[None]
    return backward_batch(params, cache, tgt)


def gradient_norm(grads: ModelParams) -> float:
    return float(np.sqrt(sum(float(np.sum(arr * arr)) for _, arr in grads.arrays())))


def clip_gradient_norm(grads: ModelParams, cap: float) -> ModelParams:
    """Scale all gradients by cap/norm when the global L2 norm exceeds cap."""
    if cap <= 0:
        raise ModelError(f"cap must be positive, got {cap}")
    norm = gradient_norm(grads)
    if norm <= cap:
        return grads
    scaled = grads.copy()
    factor = cap / norm
    for _, arr in scaled.arrays():
        arr *= factor
    return scaled


@dataclass
class AdamState:
    m: ModelParams
    v: ModelParams
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: ModelParams) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like())


def adam_step(
    params: ModelParams, grads: ModelParams, state: AdamState, lr: float = 0.001
) -> tuple[ModelParams, AdamState]:
    """One bias-corrected Adam update; returns fresh params and state."""
    t = state.step + 1
    new_params = params.copy()
    new_m = state.m.copy()
    new_v = state.v.copy()
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for (_, p), (_, g), (_, m), (_, v) in zip(
        new_params.arrays(), grads.arrays(), new_m.arrays(), new_v.arrays()
    ):
        m[...] = state.beta1 * m + (1.0 - state.beta1) * g
        v[...] = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        p[...] = p - lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return new_params, AdamState(new_m, new_v, t, state.beta1, state.beta2, state.eps)


def _dataset_arrays(samples) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([s.input_array() for s in samples])
    y = np.stack([s.target_array() for s in samples])
    return x, y


def _mean_loss(params: ModelParams, x: np.ndarray, y: np.ndarray, chunk: int = 256) -> float:
    total = 0.0
    for lo in range(0, x.shape[0], chunk):
        xb, yb = x[lo : lo + chunk], y[lo : lo + chunk]
        outputs, _ = forward_batch(params, xb)
        total += float(np.sum((outputs - yb) ** 2))
    return total / y.size


def train(
    dataset: DatasetSplit,
    config: TrainConfig,
    params: Optional[ModelParams] = None,
) -> tuple[ModelParams, TrainHistory]:
    """Mini-batch training with gradient clipping, Adam, and early stopping.

    Batches reshuffle each epoch under the seeded generator; the parameters
    with the best validation MSE are returned together with the per-epoch
    loss history.
    """
    if not dataset.train or not dataset.validation:
        raise ModelError("train and validation partitions must be non-empty")
    x_train, y_train = _dataset_arrays(dataset.train)
    x_val, y_val = _dataset_arrays(dataset.validation)

    rng = np.random.default_rng(config.seed)
    if params is None:
        params = init_params(config.seed, input_dim=x_train.shape[2])
    state = AdamState.for_params(params)
    history = TrainHistory()
    best_val = np.inf
    best_params = params.copy()
    since_best = 0

    n = x_train.shape[0]
    for epoch in range(config.max_epochs):
        order = rng.permutation(n)
        epoch_losses = []
        for bi, lo in enumerate(range(0, n, config.batch_size)):
            idx = order[lo : lo + config.batch_size]
            try:
                outputs, cache = forward_batch(params, x_train[idx])
                grads, loss = backward_batch(params, cache, y_train[idx])
            except NonFiniteActivation as exc:
                raise TrainingDiverged(epoch, bi) from exc
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch, bi)
            grads = clip_gradient_norm(grads, config.grad_cap)
            params, state = adam_step(params, grads, state, config.learning_rate)
            epoch_losses.append(loss)
            history.steps += 1
        history.train_loss.append(float(np.mean(epoch_losses)))

        val = _mean_loss(params, x_val, y_val)
        if not np.isfinite(val):
            raise TrainingDiverged(epoch, -1)
        history.val_loss.append(val)
        if val < best_val:
            best_val = val
            best_params = params.copy()
            history.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break
    return best_params, history


def predict(params: ModelParams, sequence: np.ndarray) -> TargetPair:
    """Final-step (SBP, DBP) for one standardized sequence."""
    outputs, _ = forward(params, sequence)
    sbp, dbp = float(outputs[-1, 0]), float(outputs[-1, 1])
    if not (np.isfinite(sbp) and np.isfinite(dbp)):
        raise ModelError("non-finite prediction")
    return TargetPair(sbp, dbp)


@dataclass
class TrainedModel:
    """Inference bundle: weights plus the training-time configuration."""

    params: ModelParams
    m: int
    stats: ChannelStats

    def predict(self, sequence: np.ndarray, standardized: bool = True) -> TargetPair:
        seq = np.asarray(sequence, dtype=float)
        if seq.ndim != 2 or seq.shape[0] != self.m:
            raise ModelError(
                f"sequence shape {seq.shape} does not match trained M={self.m}"
            )
        if not standardized:
            seq = standardize_features(seq, self.stats)
        return predict(self.params, seq)

    def predict_batch(self, x: np.ndarray) -> np.ndarray:
        """Final-step outputs for (N, M, input_dim) standardized sequences."""
        if x.shape[1] != self.m:
            raise ModelError(f"batch M={x.shape[1]} does not match trained M={self.m}")
        outputs, _ = forward_batch(self.params, x)
        return outputs[:, -1, :]


def save_model(model: TrainedModel, path) -> None:
    """Write the BPNET1 container: magic, dims, channel stats, f64 payload."""
    p = model.params
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(
            struct.pack(
                "<IIIII", model.m, p.input_dim, p.dense_units, p.hidden, p.output_dim
            )
        )
        fh.write(
            struct.pack(
                "<dddd", model.stats.ecg_mean, model.stats.ecg_std,
                model.stats.ppg_mean, model.stats.ppg_std,
            )
        )
        for _, arr in p.arrays():
            fh.write(arr.astype("<f8").tobytes())


def load_model(path) -> TrainedModel:
    with open(path, "rb") as fh:
        magic = fh.read(6)
        if magic != MODEL_MAGIC:
            raise ModelError(f"bad model magic {magic!r}")
        m, input_dim, dense_units, hidden, output_dim = struct.unpack("<IIIII", fh.read(20))
        stats = ChannelStats(*struct.unpack("<dddd", fh.read(32)))
        payload = fh.read()
    params = init_params(0, input_dim, dense_units, hidden, output_dim)
    offset = 0
    for _, arr in params.arrays():
        block = np.frombuffer(payload, dtype="<f8", count=arr.size, offset=offset)
        arr[...] = block.reshape(arr.shape)
        offset += arr.size * 8
    if offset != len(payload):
        raise ModelError("model payload size mismatch")
    return TrainedModel(params, m, stats)
