"""Sparse-code features and a one-hidden-layer perceptron trained by conjugate gradient."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .coding import Dictionary, batch_encode
from .errors import ConfigError, DataError, DivergenceError, ShapeError

log = logging.getLogger(__name__)

ARMIJO_C = 1e-4
MAX_HALVINGS = 40
MAX_DOUBLINGS = 8


# --- features ---------------------------------------------------------------

def featurize(X, artifact, q: int) -> np.ndarray:
    """Sparse-code features, one row per segment.

    ``artifact`` is either a structured dictionary (features are the full
    code vectors) or something unpacking to ``(dictionary, selected_rows)``
    (codes against the full dictionary, restricted to the selected rows).
    """
    values = np.asarray(getattr(X, "values", X), dtype=np.float64)
    if isinstance(artifact, Dictionary):
        D, rows = artifact, None
    elif hasattr(artifact, "class_of_atom"):
        D, rows = artifact.dictionary, None
    else:
        try:
            D, rows = artifact
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"cannot build features from {type(artifact).__name__}") from exc
        rows = np.asarray(rows, dtype=np.intp)
        if rows.size == 0 or rows.min() < 0 or rows.max() >= D.n_atoms:
            raise ShapeError(f"selected rows must index the {D.n_atoms} dictionary atoms")
    if values.ndim != 2 or values.shape[0] != D.n_features:
        raise ShapeError(f"segments of shape {values.shape} do not match atoms of length {D.n_features}")
    coef = batch_encode(values, D, q).coefficients
    if rows is not None:
        coef = coef[rows]
    return np.ascontiguousarray(coef.T)


def one_hot(labels, classes) -> np.ndarray:
    labels = np.asarray(labels)
    index = {c: i for i, c in enumerate(classes)}
    out = np.zeros((labels.size, len(classes)))
    try:
        out[np.arange(labels.size), [index[l] for l in labels.tolist()]] = 1.0
    except KeyError as exc:
        raise DataError(f"label {exc.args[0]!r} not in classes {tuple(classes)}") from None
    return out


# --- model ------------------------------------------------------------------

@dataclass
class MlpModel:
    """``scores = W2 tanh(W1 z + b1) + b2`` with ``z`` the standardised input."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    classes: tuple = ()
    seed: int = 0
    train_config: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("w1", "b1", "w2", "b2", "mean", "scale"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise DivergenceError(-1, f"parameter {name} is not finite")
            setattr(self, name, arr)
        h, d = self.w1.shape
        k = self.w2.shape[0]
        if self.b1.shape != (h,) or self.w2.shape != (k, h) or self.b2.shape != (k,):
            raise ShapeError("inconsistent layer shapes")
        if self.mean.shape != (d,) or self.scale.shape != (d,):
            raise ShapeError("input normalisation does not match the input size")
        if self.classes and len(self.classes) != k:
            raise ShapeError(f"{k} outputs but {len(self.classes)} class names")
        self.classes = tuple(self.classes)

    @property
    def n_inputs(self) -> int:
        return self.w1.shape[1]

    @property
    def n_hidden(self) -> int:
        return self.w1.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.w2.shape[0]

    @property
    def n_params(self) -> int:
        return self.w1.size + self.b1.size + self.w2.size + self.b2.size

    def standardize(self, features) -> np.ndarray:
        F = np.asarray(features, dtype=np.float64)
        if F.ndim != 2 or F.shape[1] != self.n_inputs:
            raise ShapeError(f"expected features with {self.n_inputs} columns, got shape {F.shape}")
        return (F - self.mean) / self.scale

    def hidden(self, features) -> np.ndarray:
        return np.tanh(self.standardize(features) @ self.w1.T + self.b1)

    def scores(self, features) -> np.ndarray:
        return self.hidden(features) @ self.w2.T + self.b2

    def to_json(self) -> dict:
        return {
            "dims": {"input": self.n_inputs, "hidden": self.n_hidden, "output": self.n_outputs},
            "classes": list(self.classes),
            "w1": [repr(float(v)) for v in self.w1.ravel()],
            "b1": [repr(float(v)) for v in self.b1],
            "w2": [repr(float(v)) for v in self.w2.ravel()],
            "b2": [repr(float(v)) for v in self.b2],
            "input_mean": [repr(float(v)) for v in self.mean],
            "input_scale": [repr(float(v)) for v in self.scale],
            "seed": self.seed,
            "train_config": self.train_config,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MlpModel":
        try:
            d, h, k = obj["dims"]["input"], obj["dims"]["hidden"], obj["dims"]["output"]
            arr = lambda key: np.array([float(v) for v in obj[key]])
            return cls(arr("w1").reshape(h, d), arr("b1"), arr("w2").reshape(k, h), arr("b2"),
                       arr("input_mean"), arr("input_scale"), tuple(obj.get("classes", ())),
                       obj.get("seed", 0), obj.get("train_config", {}))
        except (KeyError, ValueError, TypeError) as exc:
            raise DataError(f"malformed model document: {exc}") from exc

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "MlpModel":
        try:
            with open(path) as fh:
                return cls.from_json(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read model {path}: {exc}") from exc


# --- flat parameter vector --------------------------------------------------

def _unpack(theta, d, h, k):
    i = 0
    w1 = theta[i:i + h * d].reshape(h, d); i += h * d
    b1 = theta[i:i + h]; i += h
    w2 = theta[i:i + k * h].reshape(k, h); i += k * h
    b2 = theta[i:i + k]
    return w1, b1, w2, b2


def _pack(w1, b1, w2, b2):
    return np.concatenate([w1.ravel(), b1, w2.ravel(), b2])


def loss_and_grad(theta, Z, Y, n_hidden):
    """MSE (mean over samples and outputs) and its gradient in ``theta``."""
    n, d = Z.shape
    k = Y.shape[1]
    w1, b1, w2, b2 = _unpack(theta, d, n_hidden, k)
    H = np.tanh(Z @ w1.T + b1)
    err = H @ w2.T + b2 - Y
    loss = float(np.mean(err * err))
    dout = (2.0 / err.size) * err
    dH = (dout @ w2) * (1.0 - H * H)
    grad = _pack(dH.T @ Z, dH.sum(axis=0), dout.T @ H, dout.sum(axis=0))
    return loss, grad


def mse_loss(theta, Z, Y, n_hidden):
    n, d = Z.shape
    w1, b1, w2, b2 = _unpack(theta, d, n_hidden, Y.shape[1])
    err = np.tanh(Z @ w1.T + b1) @ w2.T + b2 - Y
    return float(np.mean(err * err))


# --- training ---------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    hidden: int = 500
    max_epochs: int = 500
    patience: int = 25
    seed: int = 0

    def validate(self) -> None:
        for name in ("hidden", "max_epochs", "patience"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v}")


@dataclass
class TrainReport:
    epochs_run: int
    train_mse: list
    validation_mse: list
    best_epoch: int
    seed: int
    restarts: int = 0

    def to_json(self) -> dict:
        return asdict(self)


def init_params(d: int, h: int, k: int, seed: int) -> np.ndarray:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    a1 = np.sqrt(6.0 / (d + h))
    a2 = np.sqrt(6.0 / (h + k))
    return _pack(rng.uniform(-a1, a1, (h, d)), np.zeros(h), rng.uniform(-a2, a2, (k, h)), np.zeros(k))


def _line_search(theta, f0, g0, direction, step, Z, Y, h):
    """Backtracking Armijo search that also expands while the loss keeps falling."""
    slope = float(g0 @ direction)
    for _ in range(MAX_HALVINGS):
        f = mse_loss(theta + step * direction, Z, Y, h)
        if np.isfinite(f) and f <= f0 + ARMIJO_C * step * slope:
            break
        step *= 0.5
    else:
        return 0.0, f0
    for _ in range(MAX_DOUBLINGS):
        f2 = mse_loss(theta + 2 * step * direction, Z, Y, h)
        if not (np.isfinite(f2) and f2 < f):
            break
        step, f = 2 * step, f2
    return step, f


def train(features, labels, val_features, val_labels, cfg: TrainConfig = TrainConfig(),
          classes=None):
    """Full-batch Polak-Ribiere conjugate gradient on the MSE.

    ``labels`` are one-hot rows (or class names when ``classes`` is given).
    The search direction restarts at steepest descent every ``n_params``
    iterations, whenever it fails to be a descent direction, and whenever
    the Polak-Ribiere coefficient goes negative.  Training stops after
    ``cfg.patience`` epochs without a validation improvement, and the
    parameters of the best validation epoch are returned.
    """
    cfg.validate()
    F = np.asarray(features, dtype=np.float64)
    Fv = np.asarray(val_features, dtype=np.float64)
    if classes is not None:
        Y, Yv = one_hot(labels, classes), one_hot(val_labels, classes)
    else:
        Y, Yv = np.asarray(labels, dtype=np.float64), np.asarray(val_labels, dtype=np.float64)
        classes = tuple(str(i) for i in range(Y.shape[1]))
    if F.ndim != 2 or Y.ndim != 2 or F.shape[0] != Y.shape[0] or F.shape[0] == 0:
        raise ShapeError(f"features {F.shape} and labels {Y.shape} do not align")
    if Fv.ndim != 2 or Fv.shape[1] != F.shape[1] or Yv.shape != (Fv.shape[0], Y.shape[1]) or Fv.shape[0] == 0:
        raise ShapeError(f"validation features {Fv.shape} / labels {Yv.shape} do not match training data")
    if not (np.all(np.isfinite(F)) and np.all(np.isfinite(Fv))):
        raise DataError("features contain non-finite values")

    mean = F.mean(axis=0)
    scale = F.std(axis=0)
    scale[scale == 0] = 1.0
    Z, Zv = (F - mean) / scale, (Fv - mean) / scale
    d, h, k = F.shape[1], int(cfg.hidden), Y.shape[1]
    theta = init_params(d, h, k, cfg.seed)
    n_params = theta.size

    f, g = loss_and_grad(theta, Z, Y, h)
    fv = mse_loss(theta, Zv, Yv, h)
    if not np.isfinite(f):
        raise DivergenceError(0, "initial loss is not finite")
    train_trace, val_trace = [f], [fv]
    best, best_val, best_epoch = theta.copy(), fv, 0
    direction = -g
    step = 1.0 / max(np.linalg.norm(g), 1e-12)
    since_restart, restarts, epoch = 0, 0, 0
    for epoch in range(1, int(cfg.max_epochs) + 1):
        step, f_new = _line_search(theta, f, g, direction, step, Z, Y, h)
        if step == 0.0:
            if since_restart == 0:
                epoch -= 1
                break
            # stalled along a conjugate direction: retry steepest descent
            direction, since_restart, restarts = -g, 0, restarts + 1
            step = 1.0 / max(np.linalg.norm(g), 1e-12)
            step, f_new = _line_search(theta, f, g, direction, step, Z, Y, h)
            if step == 0.0:
                epoch -= 1
                break
        theta = theta + step * direction
        f_new, g_new = loss_and_grad(theta, Z, Y, h)
        if not np.isfinite(f_new):
            raise DivergenceError(epoch, "training loss became non-finite")
        fv = mse_loss(theta, Zv, Yv, h)
        if not np.isfinite(fv):
            raise DivergenceError(epoch, "validation loss became non-finite")
        train_trace.append(f_new)
        val_trace.append(fv)
        if fv < best_val:
            best, best_val, best_epoch = theta.copy(), fv, epoch
        elif epoch - best_epoch >= cfg.patience:
            break

        beta = float(g_new @ (g_new - g)) / max(float(g @ g), 1e-300)
        since_restart += 1
        slope_prev = float(g @ direction)
        if beta <= 0 or since_restart >= n_params:
            beta, since_restart = 0.0, 0
            restarts += 1
        new_dir = -g_new + beta * direction
        if float(g_new @ new_dir) >= 0:
            new_dir, since_restart = -g_new, 0
            restarts += 1
        # initial step for the next search from the previous decrease rate
        step = step * slope_prev / min(float(g_new @ new_dir), -1e-300)
        f, g, direction = f_new, g_new, new_dir

    w1, b1, w2, b2 = _unpack(best, d, h, k)
    model = MlpModel(w1.copy(), b1.copy(), w2.copy(), b2.copy(), mean, scale, tuple(classes),
                     cfg.seed, asdict(cfg))
    report = TrainReport(epoch, train_trace, val_trace, best_epoch, cfg.seed, restarts)
    log.info("training stopped after %d epochs; best validation MSE %.6g at epoch %d",
             epoch, best_val, best_epoch)
    return model, report


def predict(model: MlpModel, features):
    """``(class indices, scores)``; ties go to the smallest class index."""
    s = model.scores(features)
    return np.argmax(s, axis=1), s
