"""From-scratch undercomplete autoencoder for activation reduction.

Architecture: single code layer, relu encoder, linear decoder, mean squared
error loss. Weights are stored float32; every forward/gradient computation
upcasts to float64 so reductions are reproducible at large input widths.

Serialized form ("DSAE1"): magic, u32 input_dim, u32 code_dim, the training
snapshot (u32 epochs, u32 batch_size, f64 learning_rate, u64 seed), then the
weight payloads W1, b1, W2, b2 as little-endian float32 in that order.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._binio import Reader, f32_bytes, u32, u64, f64 as pack_f64
from .dataio import ActivationMatrix

__all__ = [
    "TrainReport",
    "TrainedAutoencoder",
    "TrainingDivergedError",
    "ae_grad",
    "ae_forward",
    "ae_init",
    "ae_reduce",
    "ae_reduce_batch",
    "ae_train",
    "batch_loss",
    "load_autoencoder",
    "save_autoencoder",
]

MAGIC = b"DSAE1"

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class TrainingDivergedError(RuntimeError):
    """Training loss became non-finite; carries the report up to the last good epoch."""

    def __init__(self, message: str, report: "TrainReport"):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class TrainReport:
    epoch_losses: tuple[float, ...]
    final_loss: float


@dataclass(frozen=True)
class TrainedAutoencoder:
    """Weights plus the training snapshot that produced them."""

    w1: np.ndarray  # (code_dim, input_dim) float32
    b1: np.ndarray  # (code_dim,)
    w2: np.ndarray  # (input_dim, code_dim)
    b2: np.ndarray  # (input_dim,)
    epochs: int
    batch_size: int
    learning_rate: float
    seed: int

    def __post_init__(self):
        for name in ("w1", "b1", "w2", "b2"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float32)
            if not np.isfinite(arr).all():
                raise ValueError(f"autoencoder weight {name} contains non-finite values")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if self.w1.shape != (self.code_dim, self.input_dim):
            raise ValueError("w1 shape inconsistent")
        if self.w2.shape != (self.input_dim, self.code_dim):
            raise ValueError("w2 shape does not mirror w1")
        if self.b1.shape != (self.code_dim,) or self.b2.shape != (self.input_dim,):
            raise ValueError("bias shapes inconsistent with weights")

    @property
    def input_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def code_dim(self) -> int:
        return self.w1.shape[0]


def _init_from_rng(rng: np.random.Generator, input_dim: int, code_dim: int, seed: int) -> TrainedAutoencoder:
    bound = np.sqrt(6.0 / (input_dim + code_dim))
    w1 = rng.uniform(-bound, bound, size=(code_dim, input_dim))
    w2 = rng.uniform(-bound, bound, size=(input_dim, code_dim))
    return TrainedAutoencoder(
        w1=w1.astype(np.float32),
        b1=np.zeros(code_dim, dtype=np.float32),
        w2=w2.astype(np.float32),
        b2=np.zeros(input_dim, dtype=np.float32),
        epochs=0,
        batch_size=0,
        learning_rate=0.0,
        seed=seed,
    )


def ae_init(input_dim: int, code_dim: int, seed: int) -> TrainedAutoencoder:
    """Untrained autoencoder: Glorot-uniform weights, zero biases, deterministic per seed."""
    if not 0 < code_dim < input_dim:
        raise ValueError(
            f"code_dim must satisfy 0 < code_dim < input_dim, got {code_dim} vs {input_dim}"
        )
    return _init_from_rng(np.random.default_rng(seed), input_dim, code_dim, seed)


def _forward64(w1, b1, w2, b2, x):
    """Forward pass in float64 on a batch (rows are instances)."""
    z1 = x @ w1.T + b1
    r = np.maximum(z1, 0.0)
    xhat = r @ w2.T + b2
    return z1, r, xhat


def _as_params64(ae: TrainedAutoencoder):
    return (
        ae.w1.astype(np.float64),
        ae.b1.astype(np.float64),
        ae.w2.astype(np.float64),
        ae.b2.astype(np.float64),
    )


def batch_loss(w1, b1, w2, b2, batch) -> float:
    """Mean squared reconstruction error of a batch, computed in float64."""
    x = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    _, _, xhat = _forward64(
        np.asarray(w1, dtype=np.float64),
        np.asarray(b1, dtype=np.float64),
        np.asarray(w2, dtype=np.float64),
        np.asarray(b2, dtype=np.float64),
        x,
    )
    return float(np.mean((xhat - x) ** 2))


def ae_forward(ae: TrainedAutoencoder, x) -> tuple[np.ndarray, np.ndarray, float]:
    """Return (code, reconstruction, mse loss) for a single instance."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (ae.input_dim,):
        raise ValueError(f"input has shape {x.shape}, expected ({ae.input_dim},)")
    w1, b1, w2, b2 = _as_params64(ae)
    _, r, xhat = _forward64(w1, b1, w2, b2, x[None, :])
    loss = float(np.mean((xhat[0] - x) ** 2))
    return r[0], xhat[0], loss


def _gradients64(w1, b1, w2, b2, x):
    """Analytic gradients of the batch-mean MSE loss; relu subgradient at 0 is 0."""
    n, dim = x.shape
    z1, r, xhat = _forward64(w1, b1, w2, b2, x)
    delta2 = 2.0 * (xhat - x) / (n * dim)  # dL/dxhat
    gw2 = delta2.T @ r
    gb2 = delta2.sum(axis=0)
    delta1 = (delta2 @ w2) * (z1 > 0.0)
    gw1 = delta1.T @ x
    gb1 = delta1.sum(axis=0)
    return gw1, gb1, gw2, gb2


def ae_grad(ae: TrainedAutoencoder, batch) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of the batch-mean MSE loss w.r.t. (w1, b1, w2, b2), float64."""
    x = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if x.shape[0] == 0:
        raise ValueError("gradient of an empty batch")
    if x.shape[1] != ae.input_dim:
        raise ValueError(f"batch dim {x.shape[1]} != input_dim {ae.input_dim}")
    return _gradients64(*_as_params64(ae), x)


def ae_train(
    data,
    code_dim: int,
    epochs: int,
    batch_size: int,
    learning_rate: float,
    seed: int,
) -> tuple[TrainedAutoencoder, TrainReport]:
    """Mini-batch Adam training with a deterministic per-seed shuffle.

    With epochs=0 the returned weights equal ae_init(input_dim, code_dim, seed).
    Divergence (non-finite loss) raises TrainingDivergedError carrying the
    per-epoch losses recorded so far.
    """
    x = data.data if isinstance(data, ActivationMatrix) else np.asarray(data)
    x = x.astype(np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("training data must be a non-empty 2-D matrix")
    n, input_dim = x.shape
    if not 0 < code_dim < input_dim:
        raise ValueError(
            f"code_dim must satisfy 0 < code_dim < input_dim, got {code_dim} vs {input_dim}"
        )
    if epochs < 0 or batch_size < 1 or learning_rate <= 0:
        raise ValueError("hyperparameters must be positive (epochs may be 0)")

    rng = np.random.default_rng(seed)
    init = _init_from_rng(rng, input_dim, code_dim, seed)
    params = list(_as_params64(init))
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    step = 0

    epoch_losses: list[float] = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        batch_losses: list[float] = []
        for start in range(0, n, batch_size):
            xb = x[order[start : start + batch_size]]
            # overflow here is the divergence signal, not an error
            with np.errstate(over="ignore", invalid="ignore"):
                z1 = xb @ params[0].T + params[1]
                r = np.maximum(z1, 0.0)
                xhat = r @ params[2].T + params[3]
                err = xhat - xb
                loss = float(np.mean(err**2))
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"loss became non-finite in epoch {epoch + 1}; "
                    f"last good epoch: {len(epoch_losses)}",
                    TrainReport(tuple(epoch_losses), epoch_losses[-1] if epoch_losses else float("nan")),
                )
            batch_losses.append(loss)
            grads = _gradients64(*params, xb)
            step += 1
            for i, g in enumerate(grads):
                m[i] = ADAM_BETA1 * m[i] + (1 - ADAM_BETA1) * g
                v[i] = ADAM_BETA2 * v[i] + (1 - ADAM_BETA2) * g**2
                m_hat = m[i] / (1 - ADAM_BETA1**step)
                v_hat = v[i] / (1 - ADAM_BETA2**step)
                params[i] = params[i] - learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        epoch_losses.append(float(np.mean(batch_losses)))

    trained = TrainedAutoencoder(
        w1=params[0].astype(np.float32),
        b1=params[1].astype(np.float32),
        w2=params[2].astype(np.float32),
        b2=params[3].astype(np.float32),
        epochs=epochs,
        batch_size=batch_size,
        learning_rate=learning_rate,
        seed=seed,
    )
    final_loss = batch_loss(trained.w1, trained.b1, trained.w2, trained.b2, x)
    return trained, TrainReport(tuple(epoch_losses), final_loss)


def ae_reduce(ae: TrainedAutoencoder, f) -> np.ndarray:
    """Encoder output (the reduced code) for one flattened activation vector."""
    r, _, _ = ae_forward(ae, f)
    return r


def ae_reduce_batch(ae: TrainedAutoencoder, batch) -> np.ndarray:
    """Row-wise ae_reduce over a 2-D matrix (or ActivationMatrix)."""
    x = batch.data if isinstance(batch, ActivationMatrix) else np.asarray(batch)
    x = np.atleast_2d(x).astype(np.float64)
    if x.shape[1] != ae.input_dim:
        raise ValueError(f"batch dim {x.shape[1]} != input_dim {ae.input_dim}")
    w1, b1, _, _ = _as_params64(ae)
    return np.maximum(x @ w1.T + b1, 0.0)


def encode_autoencoder(ae: TrainedAutoencoder) -> bytes:
    parts = [
        MAGIC,
        u32(ae.input_dim),
        u32(ae.code_dim),
        u32(ae.epochs),
        u32(ae.batch_size),
        pack_f64(ae.learning_rate),
        u64(ae.seed),
        f32_bytes(ae.w1),
        f32_bytes(ae.b1),
        f32_bytes(ae.w2),
        f32_bytes(ae.b2),
    ]
    return b"".join(parts)


def decode_autoencoder(blob: bytes, source: str = "<bytes>") -> TrainedAutoencoder:
    r = Reader(blob, source)
    r.magic(MAGIC)
    input_dim = r.u32()
    code_dim = r.u32()
    epochs = r.u32()
    batch_size = r.u32()
    learning_rate = r.f64()
    seed = r.u64()
    w1 = r.f32_array(code_dim * input_dim).reshape(code_dim, input_dim)
    b1 = r.f32_array(code_dim)
    w2 = r.f32_array(input_dim * code_dim).reshape(input_dim, code_dim)
    b2 = r.f32_array(input_dim)
    r.finish()
    return TrainedAutoencoder(w1, b1, w2, b2, epochs, batch_size, learning_rate, seed)


def save_autoencoder(ae: TrainedAutoencoder, path) -> None:
    Path(path).write_bytes(encode_autoencoder(ae))


def load_autoencoder(path) -> TrainedAutoencoder:
    path = Path(path)
    return decode_autoencoder(path.read_bytes(), str(path))
