"""BiLSTM + dense softmax classifier with exact BPTT gradients."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from adc.nn import _kernels
from adc.rng import Stream

N_CLASSES = 3


class ShapeError(ValueError):
    pass


@dataclass
class LstmParams:
    """One LSTM direction. Rows of ``Wx``, ``Wh`` and ``b`` are stacked as
    (input, forget, candidate, output) gate blocks of ``H`` rows each."""

    Wx: np.ndarray
    Wh: np.ndarray
    b: np.ndarray

    @property
    def input_size(self) -> int:
        return self.Wx.shape[1]

    @property
    def hidden_size(self) -> int:
        return self.Wh.shape[1]

    def validate(self) -> None:
        H, I = self.hidden_size, self.input_size
        if self.Wx.shape != (4 * H, I) or self.Wh.shape != (4 * H, H) or self.b.shape != (4 * H,):
            raise ShapeError(
                f"LSTM shapes Wx{self.Wx.shape} Wh{self.Wh.shape} b{self.b.shape} inconsistent"
            )

    @classmethod
    def zeros(cls, I: int, H: int) -> "LstmParams":
        return cls(np.zeros((4 * H, I)), np.zeros((4 * H, H)), np.zeros(4 * H))


@dataclass
class BiLstmParams:
    forward: LstmParams
    backward: LstmParams

    def validate(self) -> None:
        self.forward.validate()
        self.backward.validate()
        if (self.forward.input_size, self.forward.hidden_size) != (
            self.backward.input_size,
            self.backward.hidden_size,
        ):
            raise ShapeError("forward and backward directions differ in shape")


@dataclass
class DenseParams:
    W: np.ndarray
    b: np.ndarray


@dataclass
class Model:
    """Trainable classifier. :meth:`arrays` lists parameters in checkpoint order."""

    lstm: BiLstmParams
    dense: DenseParams

    @property
    def input_size(self) -> int:
        return self.lstm.forward.input_size

    @property
    def hidden_size(self) -> int:
        return self.lstm.forward.hidden_size

    @property
    def n_classes(self) -> int:
        return self.dense.W.shape[0]

    def arrays(self) -> list[np.ndarray]:
        f, b = self.lstm.forward, self.lstm.backward
        return [f.Wx, f.Wh, f.b, b.Wx, b.Wh, b.b, self.dense.W, self.dense.b]

    @classmethod
    def from_arrays(cls, arrays) -> "Model":
        a = [np.array(x, dtype=np.float64) for x in arrays]
        m = cls(
            BiLstmParams(LstmParams(a[0], a[1], a[2]), LstmParams(a[3], a[4], a[5])),
            DenseParams(a[6], a[7]),
        )
        m.validate()
        return m

    def copy(self) -> "Model":
        return Model.from_arrays([x.copy() for x in self.arrays()])

    def validate(self) -> None:
        self.lstm.validate()
        H = self.hidden_size
        if self.dense.W.ndim != 2 or self.dense.W.shape[1] != 2 * H:
            raise ShapeError(f"dense W must have {2 * H} columns, got shape {self.dense.W.shape}")
        if self.dense.b.shape != (self.dense.W.shape[0],):
            raise ShapeError("dense bias length must equal the number of classes")

    @classmethod
    def zeros(cls, I: int, H: int, C: int = N_CLASSES) -> "Model":
        return cls(
            BiLstmParams(LstmParams.zeros(I, H), LstmParams.zeros(I, H)),
            DenseParams(np.zeros((C, 2 * H)), np.zeros(C)),
        )


def init_params(I: int, H: int, seed: int, C: int = N_CLASSES) -> Model:
    """Uniform(-1/sqrt(H), 1/sqrt(H)) weights; zero biases except forget gate = 1."""
    if I < 1 or H < 1:
        raise ShapeError("input and hidden sizes must be >= 1")
    rng = Stream(seed).substream("init")
    k = 1.0 / math.sqrt(H)

    def draw(*shape):
        return rng.uniform(-k, k, size=int(np.prod(shape))).reshape(shape)

    def direction():
        b = np.zeros(4 * H)
        b[H : 2 * H] = 1.0
        return LstmParams(draw(4 * H, I), draw(4 * H, H), b)

    fwd = direction()
    bwd = direction()
    return Model(BiLstmParams(fwd, bwd), DenseParams(draw(C, 2 * H), np.zeros(C)))


def _as_sequence(sequence, I: int) -> np.ndarray:
    x = np.ascontiguousarray(sequence, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != I or x.shape[0] < 1:
        raise ShapeError(f"sequence must have shape (T>=1, {I}), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("sequence contains non-finite values")
    return x


def _as_batch(X, I: int) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 3 or X.shape[2] != I or X.shape[1] < 1:
        raise ShapeError(f"batch must have shape (B, T>=1, {I}), got {X.shape}")
    return X


@dataclass
class LstmCache:
    x: np.ndarray  # (T, I, 1) lane layout
    hs: np.ndarray  # (T+1, H, 1), index 0 is the zero initial state
    cs: np.ndarray
    tcs: np.ndarray  # tanh of cs
    gates: np.ndarray  # (T, 4H, 1) post-activation


def lstm_forward(params: LstmParams, sequence) -> tuple[np.ndarray, np.ndarray, LstmCache]:
    """Run one direction over ``sequence`` (T, I).

    Returns hidden states (T, H), cell states (T, H) and the cache needed by
    :func:`lstm_backward`.
    """
    params.validate()
    x = _as_sequence(sequence, params.input_size)
    T, H = x.shape[0], params.hidden_size
    lanes = _kernels.to_lanes(x[None], False)
    hs, cs, tcs = (np.empty((T + 1, H, 1)) for _ in range(3))
    gates = np.empty((T, 4 * H, 1))
    _kernels.forward(params.Wx, params.Wh, params.b, lanes, hs, cs, tcs, gates)
    return hs[1:, :, 0].copy(), cs[1:, :, 0].copy(), LstmCache(lanes, hs, cs, tcs, gates)


def lstm_backward(params: LstmParams, cache: LstmCache, dh_last) -> LstmParams:
    """Gradient of a loss on the final hidden state w.r.t. one direction's parameters."""
    g = LstmParams.zeros(params.input_size, params.hidden_size)
    dh = np.asarray(dh_last, dtype=np.float64).reshape(params.hidden_size, 1)
    _kernels.backward(params.Wh, cache.x, cache.hs, cache.cs, cache.tcs, cache.gates, dh, g.Wx, g.Wh, g.b)
    return g


def bilstm_forward(params: BiLstmParams, sequence) -> tuple[np.ndarray, tuple[LstmCache, LstmCache]]:
    """Concatenate the final forward state and the final state of the
    backward direction run over the reversed sequence -> length 2H."""
    params.validate()
    x = _as_sequence(sequence, params.forward.input_size)
    hf, _, cf = lstm_forward(params.forward, x)
    hb, _, cb = lstm_forward(params.backward, x[::-1])
    return np.concatenate([hf[-1], hb[-1]]), (cf, cb)


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def classify(dense: DenseParams, features) -> np.ndarray:
    """Class probabilities softmax(W @ features + b); accepts (2H,) or (B, 2H)."""
    f = np.asarray(features, dtype=np.float64)
    if f.shape[-1] != dense.W.shape[1]:
        raise ShapeError(f"features have {f.shape[-1]} entries, dense layer expects {dense.W.shape[1]}")
    if not np.all(np.isfinite(f)):
        raise ValueError("features contain non-finite values")
    return softmax(f @ dense.W.T + dense.b)


def features(model: Model, X) -> np.ndarray:
    """BiLSTM features for a batch (B, T, I) -> (B, 2H)."""
    X = _as_batch(X, model.input_size)
    f, b = model.lstm.forward, model.lstm.backward
    return _kernels.batch_features(f.Wx, f.Wh, f.b, b.Wx, b.Wh, b.b, X)


def predict_proba(model: Model, X) -> np.ndarray:
    return classify(model.dense, features(model, X))


def loss_and_grads(model: Model, X, y, train_scope: str = "all") -> tuple[float, list[np.ndarray]]:
    loss, _, grads = loss_grads_correct(model, X, y, train_scope)
    return loss, grads


def loss_grads_correct(model: Model, X, y, train_scope: str = "all"):
    """Mean cross-entropy over the batch and its gradients.

    Gradients come back as a list aligned with :meth:`Model.arrays`. With
    ``train_scope="dense_only"`` the BiLSTM gradients are zero.
    """
    if train_scope not in ("all", "dense_only"):
        raise ValueError(f"train_scope must be 'all' or 'dense_only', got {train_scope!r}")
    X = _as_batch(X, model.input_size)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] == 0 or y.shape != (X.shape[0],):
        raise ShapeError("batch must be non-empty with one label per sequence")
    if y.min() < 0 or y.max() >= model.n_classes:
        raise ValueError(f"labels must lie in [0, {model.n_classes})")
    f, b = model.lstm.forward, model.lstm.backward
    out = _kernels.batch_loss_grads(
        f.Wx, f.Wh, f.b, b.Wx, b.Wh, b.b, model.dense.W, model.dense.b, X, y,
        train_scope == "all",
    )
    return float(out[0]), int(out[1]), list(out[2:])
