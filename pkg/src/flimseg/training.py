"""Decoder-only training: CE + soft Dice loss with hand-derived gradients,
Adam, linear learning-rate decay. Encoders stay frozen throughout."""
from __future__ import annotations

import io as _io
import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, StaleCacheError
from .sunet import DecoderCache, DecoderParams, SUNet, decoder_forward, encoder_features, softmax
from .volume import LabelVolume, Volume

FOREGROUND = (1, 2, 3)


@dataclass
class TrainConfig:
    lr0: float = 2.5e-3
    epochs: int = 100
    batch: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    dice_smooth: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch != 1:
            raise ValueError("only batch size 1 is supported")


def _as_logits(logits) -> np.ndarray:
    return logits.data if isinstance(logits, Volume) else np.asarray(logits)


def _as_labels(gt) -> np.ndarray:
    return gt.labels if isinstance(gt, LabelVolume) else np.asarray(gt)


def _check_pair(z: np.ndarray, y: np.ndarray):
    if z.shape[1:] != y.shape:
        raise ShapeError(f"logit dims {z.shape[1:]} vs label dims {y.shape}")
    if y.max(initial=0) >= z.shape[0]:
        raise ValueError(f"label {int(y.max())} outside {z.shape[0]} classes")


def _onehot(y: np.ndarray, n_classes: int, dtype) -> np.ndarray:
    out = np.zeros((n_classes,) + y.shape, dtype=dtype)
    for c in range(n_classes):
        out[c][y == c] = 1
    return out


def ce_loss(logits, gt) -> tuple[float, np.ndarray]:
    """Mean voxel cross-entropy; gradient w.r.t. logits = (softmax - onehot)/N."""
    z = _as_logits(logits)
    y = _as_labels(gt)
    _check_pair(z, y)
    p = softmax(z)
    n = y.size
    flat_p = p.reshape(p.shape[0], -1)
    picked = flat_p[y.ravel(), np.arange(n)]
    loss = float(-np.log(np.maximum(picked, 1e-30)).mean())
    grad = (p - _onehot(y, z.shape[0], z.dtype)) / n
    return loss, grad.astype(z.dtype, copy=False)


def soft_dice_loss(logits, gt, smooth: float = 1e-5) -> tuple[float, np.ndarray]:
    """1 - mean over foreground classes of (2·sum(p·g)+eps)/(sum p + sum g + eps),
    with the analytic gradient routed back through the softmax."""
    z = _as_logits(logits)
    y = _as_labels(gt)
    _check_pair(z, y)
    p = softmax(z)
    g = _onehot(y, z.shape[0], z.dtype)
    dl_dp = np.zeros_like(p)
    total = 0.0
    for c in FOREGROUND:
        num = 2.0 * float((p[c] * g[c]).sum()) + smooth
        den = float(p[c].sum()) + float(g[c].sum()) + smooth
        total += num / den
        # d(num/den)/dp_c[v] = (2 g - num/den) / den
        dl_dp[c] = -(2.0 * g[c] - num / den) / den / len(FOREGROUND)
    loss = float(1.0 - total / len(FOREGROUND))
    # softmax backward: dz_k = p_k (dp_k - sum_j dp_j p_j)
    inner = (dl_dp * p).sum(axis=0, keepdims=True)
    grad = p * (dl_dp - inner)
    return loss, grad.astype(z.dtype, copy=False)


def combined_loss(logits, gt, smooth: float = 1e-5) -> tuple[float, np.ndarray]:
    ce, g_ce = ce_loss(logits, gt)
    dc, g_dc = soft_dice_loss(logits, gt, smooth)
    return 0.5 * ce + 0.5 * dc, 0.5 * g_ce + 0.5 * g_dc


def block_sum2(g: np.ndarray) -> np.ndarray:
    """Adjoint of nearest-neighbor x2 upsampling: sum each 2-per-axis block."""
    for axis in range(1, g.ndim):
        shape = list(g.shape)
        if shape[axis] % 2:
            raise ShapeError(f"axis {axis} extent {shape[axis]} not divisible by 2")
        shape[axis] //= 2
        shape.insert(axis + 1, 2)
        g = g.reshape(shape).sum(axis=axis + 1)
    return g


def backward_decoder(params: DecoderParams, cache: DecoderCache, g_logits: np.ndarray) -> DecoderParams:
    """Reverse-mode gradients for every decoder tensor.

    Route: final pointwise conv, then per level relu mask, pointwise conv,
    concat split (the encoder-skip branch dead-ends), and the upsample
    adjoint, which block-sums the gradient. Returns a DecoderParams-shaped
    container of gradients.
    """
    if cache.revision != params.revision:
        raise StaleCacheError("forward cache predates a parameter update")
    wf, _ = params.final
    flat = lambda a: a.reshape(a.shape[0], -1)
    dwf = flat(g_logits) @ flat(cache.x_final).T
    dbf = flat(g_logits).sum(axis=1)
    g = np.tensordot(wf.T, g_logits, axes=(1, 0))
    dlevels = [None] * len(params.levels)
    for lvl in range(len(params.levels) - 1, -1, -1):
        w, _ = params.levels[lvl]
        g = g * (cache.zs[lvl] > 0)
        dw = flat(g) @ flat(cache.xs[lvl]).T
        db = flat(g).sum(axis=1)
        dlevels[lvl] = (dw.astype(w.dtype, copy=False), db.astype(w.dtype, copy=False))
        g = np.tensordot(w.T, g, axes=(1, 0))
        g = block_sum2(g[: cache.up_channels[lvl]])
    return DecoderParams(
        levels=dlevels,
        final=(dwf.astype(wf.dtype, copy=False), dbf.astype(wf.dtype, copy=False)),
    )


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: DecoderParams) -> "AdamState":
        return cls(
            m=[np.zeros_like(t) for t in params.tensors()],
            v=[np.zeros_like(t) for t in params.tensors()],
        )


def adam_step(
    params: DecoderParams,
    grads: DecoderParams,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
):
    """Standard bias-corrected Adam, in place; bumps the params revision."""
    tensors = params.tensors()
    gtensors = grads.tensors()
    state.step += 1
    t = state.step
    for i, (w, g) in enumerate(zip(tensors, gtensors)):
        if w.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} vs weight shape {w.shape}")
        state.m[i] = beta1 * state.m[i] + (1 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1 - beta2) * g * g
        m_hat = state.m[i] / (1 - beta1**t)
        v_hat = state.v[i] / (1 - beta2**t)
        w -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(w.dtype, copy=False)
    params.revision += 1


def lr_at(epoch: int, config: TrainConfig) -> float:
    """Linear decay: lr0 * (1 - epoch/epochs)."""
    if epoch < 0 or epoch >= config.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.epochs})")
    return config.lr0 * (1.0 - epoch / config.epochs)


@dataclass
class EpochLog:
    epoch: int
    mean_loss: float
    lr: float


def loss_log_csv(log: list[EpochLog]) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf)
    w.writerow(["epoch", "mean_loss", "lr"])
    for row in log:
        w.writerow([row.epoch, f"{row.mean_loss:.8f}", f"{row.lr:.8g}"])
    return buf.getvalue()


def train_decoder(
    net: SUNet,
    dataset: list[tuple[Volume, Volume, LabelVolume]],
    config: TrainConfig,
    progress=None,
) -> list[EpochLog]:
    """Epochs of per-image (batch 1) steps over seeded shuffles.

    Encoder features are computed once per image up front; only the decoder
    sees gradient updates. Returns the per-epoch loss log; the net's decoder
    is updated in place.
    """
    if not dataset:
        raise ValueError("training dataset is empty")
    feats = []
    labels = []
    for flair, t1gd, gt in dataset:
        if gt.dims != flair.dims:
            raise ShapeError(f"GT dims {gt.dims} vs image dims {flair.dims}")
        skips = encoder_features(net, flair, t1gd)
        feats.append([s.data for s in skips])
        labels.append(gt.labels)
    rng = np.random.default_rng(config.seed)
    state = AdamState.for_params(net.decoder)
    log: list[EpochLog] = []
    for epoch in range(config.epochs):
        lr = lr_at(epoch, config)
        order = rng.permutation(len(dataset))
        losses = []
        for idx in order:
            logits, cache = decoder_forward(net.decoder, feats[idx], want_cache=True)
            loss, g = combined_loss(logits, labels[idx], config.dice_smooth)
            grads = backward_decoder(net.decoder, cache, g)
            adam_step(
                net.decoder, grads, state, lr,
                beta1=config.beta1, beta2=config.beta2, eps=config.adam_eps,
            )
            losses.append(loss)
        log.append(EpochLog(epoch=epoch, mean_loss=float(np.mean(losses)), lr=lr))
        if progress is not None:
            progress(log[-1])
    return log
