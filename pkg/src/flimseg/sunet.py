"""Dual-encoder small U-Net.

Two frozen three-layer encoders (FLAIR and T1Gd) feed concatenated skip
connections; a pointwise-conv decoder climbs back to full resolution and a
final 1-extent conv emits the four class channels (BG, ED, ET, NC).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .flim import EncoderLayer, LayerSpec, run_encoder
from .kernels import concat_channels, upsample_nearest
from .volume import LabelVolume, Volume

N_CLASSES = 4


@dataclass
class ArchSpec:
    encoder_flair: list[LayerSpec]
    encoder_t1gd: list[LayerSpec]
    decoder_widths: tuple[int, ...] = (64, 32)
    n_classes: int = N_CLASSES

    def __post_init__(self):
        if self.n_classes != N_CLASSES:
            raise ValueError(f"n_classes must be {N_CLASSES}")
        if len(self.encoder_flair) != len(self.encoder_t1gd):
            raise ShapeError("encoders must have the same number of layers")
        if any(w < 1 for w in self.decoder_widths):
            raise ValueError("decoder widths must be >= 1")


@dataclass
class DecoderParams:
    """Per-level pointwise weights (out, in) with biases, plus the final
    class-emitting pointwise conv. revision bumps on every in-place update
    so a forward cache can detect staleness."""

    levels: list[tuple[np.ndarray, np.ndarray]]
    final: tuple[np.ndarray, np.ndarray]
    revision: int = 0

    def tensors(self) -> list[np.ndarray]:
        out = []
        for w, b in self.levels:
            out.extend((w, b))
        out.extend(self.final)
        return out

    def astype(self, dtype) -> "DecoderParams":
        return DecoderParams(
            levels=[(w.astype(dtype), b.astype(dtype)) for w, b in self.levels],
            final=(self.final[0].astype(dtype), self.final[1].astype(dtype)),
        )

    def copy(self) -> "DecoderParams":
        return self.astype(self.final[0].dtype)

    def n_params(self) -> int:
        return int(sum(t.size for t in self.tensors()))


@dataclass
class SUNet:
    encoder_flair: list[EncoderLayer]
    encoder_t1gd: list[EncoderLayer]
    decoder: DecoderParams
    arch: ArchSpec


def _glorot(rng, n_out: int, n_in: int, dtype=np.float32) -> np.ndarray:
    a = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-a, a, size=(n_out, n_in)).astype(dtype)


def skip_widths(enc_flair: list[EncoderLayer], enc_t1gd: list[EncoderLayer]) -> list[int]:
    return [f.bank.count + t.bank.count for f, t in zip(enc_flair, enc_t1gd)]


def assemble(
    enc_flair: list[EncoderLayer],
    enc_t1gd: list[EncoderLayer],
    arch: ArchSpec,
    seed: int = 0,
) -> SUNet:
    """Wire the two frozen encoders to a fresh Glorot-initialized decoder."""
    if len(enc_flair) != len(arch.encoder_flair) or len(enc_t1gd) != len(arch.encoder_t1gd):
        raise ShapeError("encoder layer count does not match the architecture spec")
    for i, (f, t) in enumerate(zip(enc_flair, enc_t1gd)):
        if f.pool_window != t.pool_window or f.pool_stride != t.pool_stride:
            raise ShapeError(f"pooling geometry differs between encoders at layer {i}")
    n_levels = len(enc_flair) - 1
    if len(arch.decoder_widths) != n_levels:
        raise ShapeError(
            f"decoder needs {n_levels} levels for {len(enc_flair)}-layer encoders, "
            f"got widths {arch.decoder_widths}"
        )
    widths = skip_widths(enc_flair, enc_t1gd)
    rng = np.random.default_rng(seed)
    levels = []
    in_ch = widths[-1]
    for lvl, out_ch in enumerate(arch.decoder_widths):
        skip_ch = widths[-2 - lvl]
        w = _glorot(rng, out_ch, in_ch + skip_ch)
        levels.append((w, np.zeros(out_ch, dtype=np.float32)))
        in_ch = out_ch
    final_w = _glorot(rng, arch.n_classes, in_ch)
    decoder = DecoderParams(levels=levels, final=(final_w, np.zeros(arch.n_classes, dtype=np.float32)))
    return SUNet(encoder_flair=enc_flair, encoder_t1gd=enc_t1gd, decoder=decoder, arch=arch)


def encoder_features(net: SUNet, flair: Volume, t1gd: Volume) -> list[Volume]:
    """Concatenated per-level skip features; frozen, so cacheable per image."""
    if flair.dims != t1gd.dims:
        raise ShapeError(f"FLAIR dims {flair.dims} vs T1Gd dims {t1gd.dims}")
    out_f = run_encoder(flair, net.encoder_flair)
    out_t = run_encoder(t1gd, net.encoder_t1gd)
    return [concat_channels(f, t) for f, t in zip(out_f.pre_pools, out_t.pre_pools)]


@dataclass
class DecoderCache:
    """Intermediates needed by the backward pass."""

    revision: int
    skip_data: list[np.ndarray]
    xs: list[np.ndarray] = field(default_factory=list)   # conv inputs, post-concat
    zs: list[np.ndarray] = field(default_factory=list)   # pre-relu conv outputs
    x_final: np.ndarray | None = None
    up_channels: list[int] = field(default_factory=list)


def _affine(w: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    y = np.tensordot(w, x, axes=(1, 0))
    return y + b.reshape((-1,) + (1,) * (x.ndim - 1))


def _upsample2(x: np.ndarray) -> np.ndarray:
    for axis in range(1, x.ndim):
        x = np.repeat(x, 2, axis=axis)
    return x


def decoder_forward(
    params: DecoderParams, skips: list[np.ndarray], want_cache: bool = False
) -> tuple[np.ndarray, DecoderCache | None]:
    """Pure decoder pass over raw skip arrays; dtype follows the inputs, so a
    float64 copy of the parameters gives a float64 graph for gradient checks."""
    cache = DecoderCache(revision=params.revision, skip_data=skips) if want_cache else None
    x = skips[-1]
    for lvl, (w, b) in enumerate(params.levels):
        up = _upsample2(x)
        skip = skips[-2 - lvl]
        if up.shape[1:] != skip.shape[1:]:
            raise ShapeError(
                f"decoder level {lvl}: upsampled dims {up.shape[1:]} do not match "
                f"skip dims {skip.shape[1:]}; input dims must be divisible by the pooling chain"
            )
        xin = np.concatenate([up, skip], axis=0)
        if xin.shape[0] != w.shape[1]:
            raise ShapeError(
                f"decoder level {lvl}: {xin.shape[0]} input channels vs weight fan-in {w.shape[1]}"
            )
        z = _affine(w, b, xin)
        x = np.maximum(z, 0)
        if want_cache:
            cache.up_channels.append(up.shape[0])
            cache.xs.append(xin)
            cache.zs.append(z)
    if want_cache:
        cache.x_final = x
    logits = _affine(params.final[0], params.final[1], x)
    return logits, cache


def forward(net: SUNet, flair: Volume, t1gd: Volume) -> tuple[Volume, DecoderCache]:
    skips = encoder_features(net, flair, t1gd)
    logits, cache = decoder_forward(
        net.decoder, [s.data for s in skips], want_cache=True
    )
    return Volume(logits.astype(np.float32, copy=False), spacing=flair.spacing), cache


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=0, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=0, keepdims=True)


def predict(net: SUNet, flair: Volume, t1gd: Volume) -> LabelVolume:
    logits, _ = forward(net, flair, t1gd)
    p = softmax(logits.data.astype(np.float64))
    labels = np.argmax(p, axis=0).astype(np.uint8)
    return LabelVolume(labels, spacing=flair.spacing)
