"""Estimator-style facade over filter learning and the sU-Net.

These wrappers exist so the core algorithms compose with scikit-learn
tooling (clone, pipelines, grid search over widths). The interactive
selection loop does not fit the fit/predict mold and lives in Session.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from . import training
from .flim import LayerSpec, MarkerSet, downscale_markers, learn_layer, run_encoder, run_layer
from .metrics import dsc_report
from .sunet import ArchSpec, assemble, predict
from .volume import LabelVolume, Volume


def _check_images(X, name="X"):
    if not isinstance(X, (list, tuple)) or not X:
        raise ValueError(f"{name} must be a non-empty list of volumes")
    ndim = None
    for i, vol in enumerate(X):
        if not isinstance(vol, Volume):
            raise TypeError(f"{name}[{i}] is {type(vol).__name__}, expected Volume")
        if ndim is None:
            ndim = vol.ndim
        elif vol.ndim != ndim:
            raise ValueError(f"{name}[{i}] has {vol.ndim} spatial axes, others have {ndim}")
    return list(X)


def _check_markers(markers, n, dims_of):
    if not isinstance(markers, (list, tuple)) or len(markers) != n:
        raise ValueError(f"markers must align with the {n} images")
    for i, ms in enumerate(markers):
        if not isinstance(ms, MarkerSet):
            raise TypeError(f"markers[{i}] is {type(ms).__name__}, expected MarkerSet")
        ms.validate_bounds(dims_of(i))
    return list(markers)


def _fit_layers(images, markers, specs, seed):
    layers = [learn_layer(images, markers, specs[0], seed)]
    cur_imgs, cur_mss = images, markers
    for spec in specs[1:]:
        nxt_imgs, nxt_mss = [], []
        for img, ms in zip(cur_imgs, cur_mss):
            _, pooled = run_layer(img, layers[-1])
            nxt_imgs.append(pooled)
            nxt_mss.append(downscale_markers(ms, layers[-1].pool_stride, pooled.dims))
        cur_imgs, cur_mss = nxt_imgs, nxt_mss
        layers.append(learn_layer(cur_imgs, cur_mss, spec, seed))
    return layers


class FlimEncoder(BaseEstimator, TransformerMixin):
    """Learns a stack of conv layers from marker voxels; no backprop.

    fit(X, markers=...) consumes single-modality volumes plus aligned
    marker sets; transform(X) returns the final pooled feature volume per
    image. encode(x) exposes every pre-pool map for skip wiring.
    """

    def __init__(self, layer_specs=None, seed=0):
        self.layer_specs = layer_specs
        self.seed = seed

    def _specs(self):
        if self.layer_specs is not None:
            return list(self.layer_specs)
        return [LayerSpec(total_filters=t) for t in (32, 64, 64)]

    def fit(self, X, y=None, *, markers=None):
        if markers is None:
            raise ValueError("fit requires markers= (aligned MarkerSet list)")
        X = _check_images(X)
        markers = _check_markers(markers, len(X), lambda i: X[i].dims)
        self.layers_ = _fit_layers(X, markers, self._specs(), self.seed)
        return self

    def _fitted(self):
        if not hasattr(self, "layers_"):
            raise NotFittedError("this FlimEncoder is not fitted yet; call fit first")
        return self.layers_

    def encode(self, x: Volume):
        layers = self._fitted()
        return run_encoder(x, layers)

    def transform(self, X):
        layers = self._fitted()
        return [run_encoder(x, layers).pooled for x in _check_images(X)]

    @property
    def n_filters_(self):
        return [layer.bank.count for layer in self._fitted()]


class SUNetSegmenter(BaseEstimator):
    """Dual-modality segmenter: frozen marker-learned encoders, trained decoder.

    X is a list of (flair, t1gd) Volume pairs; y a list of LabelVolumes;
    markers= one MarkerSet per training pair.
    """

    def __init__(self, arch=None, lr0=2.5e-3, epochs=100, seed=0):
        self.arch = arch
        self.lr0 = lr0
        self.epochs = epochs
        self.seed = seed

    def _arch(self) -> ArchSpec:
        if self.arch is not None:
            return self.arch
        def stack():
            return [LayerSpec(total_filters=t) for t in (32, 64, 64)]
        return ArchSpec(encoder_flair=stack(), encoder_t1gd=stack())

    @staticmethod
    def _split_pairs(X):
        if not isinstance(X, (list, tuple)) or not X:
            raise ValueError("X must be a non-empty list of (flair, t1gd) pairs")
        flair, t1gd = [], []
        for i, pair in enumerate(X):
            if not isinstance(pair, (list, tuple)) or len(pair) != 2:
                raise ValueError(f"X[{i}] must be a (flair, t1gd) pair")
            flair.append(pair[0])
            t1gd.append(pair[1])
        return _check_images(flair, "flair"), _check_images(t1gd, "t1gd")

    def fit(self, X, y, *, markers=None, progress=None):
        if markers is None:
            raise ValueError("fit requires markers= (aligned MarkerSet list)")
        flair, t1gd = self._split_pairs(X)
        if not isinstance(y, (list, tuple)) or len(y) != len(flair):
            raise ValueError("y must align with X")
        for i, gt in enumerate(y):
            if not isinstance(gt, LabelVolume):
                raise TypeError(f"y[{i}] is {type(gt).__name__}, expected LabelVolume")
            if gt.dims != flair[i].dims:
                raise ValueError(f"y[{i}] dims {gt.dims} do not match X[{i}] {flair[i].dims}")
        markers = _check_markers(markers, len(flair), lambda i: flair[i].dims)
        arch = self._arch()
        enc_f = _fit_layers(flair, markers, arch.encoder_flair, self.seed)
        enc_t = _fit_layers(t1gd, markers, arch.encoder_t1gd, self.seed)
        self.net_ = assemble(enc_f, enc_t, arch, seed=self.seed)
        config = training.TrainConfig(lr0=self.lr0, epochs=self.epochs, seed=self.seed)
        dataset = list(zip(flair, t1gd, y))
        self.loss_log_ = training.train_decoder(self.net_, dataset, config, progress=progress)
        return self

    def _fitted(self):
        if not hasattr(self, "net_"):
            raise NotFittedError("this SUNetSegmenter is not fitted yet; call fit first")
        return self.net_

    def predict(self, X):
        net = self._fitted()
        flair, t1gd = self._split_pairs(X)
        return [predict(net, f, t) for f, t in zip(flair, t1gd)]

    def score(self, X, y):
        """Mean of the three region-mean Dice scores (ET, TC, WT)."""
        preds = self.predict(X)
        report = dsc_report(preds, list(y))
        return float(np.mean([report.mean(r) for r in ("ET", "TC", "WT")]))
