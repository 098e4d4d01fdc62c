"""Token-demand forecasting: persistence baseline and a small LSTM.

The LSTM reads the last ``H`` intervals of ``[n_t, g_t]`` and predicts the
next interval's total ``n + g``.  It is a single layer with the usual
input/forget/cell/output gates and an affine head, written in numpy with
hand-derived backpropagation through time over the ``H``-step window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ForecastError, TrainingError

FORMAT_VERSION = 1
PARAM_ORDER = ("Wx", "Wh", "b", "wy", "by")


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class ForecastModel:
    kind: str
    lookback: int
    hidden: int = 0
    params: dict = field(default_factory=dict)
    x_mean: np.ndarray = field(default_factory=lambda: np.zeros(2))
    x_std: np.ndarray = field(default_factory=lambda: np.ones(2))
    y_mean: float = 0.0
    y_std: float = 1.0
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("naive", "lstm"):
            raise ValueError(f"unknown forecaster kind {self.kind!r}")
        if self.lookback < 1:
            raise ValueError("lookback must be at least 1")


def naive_model(lookback=1):
    return ForecastModel("naive", lookback)


def init_params(hidden, n_in=2, seed=0):
    rng = np.random.default_rng(seed)
    k = 1.0 / math.sqrt(hidden)
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = 1.0  # forget gate starts open
    return {
        "Wx": rng.uniform(-k, k, size=(4 * hidden, n_in)),
        "Wh": rng.uniform(-k, k, size=(4 * hidden, hidden)),
        "b": b,
        "wy": rng.uniform(-k, k, size=hidden),
        "by": np.zeros(1),
    }


def flatten(params):
    return np.concatenate([np.ravel(params[k]) for k in PARAM_ORDER])


def unflatten(vec, hidden, n_in=2):
    shapes = {"Wx": (4 * hidden, n_in), "Wh": (4 * hidden, hidden), "b": (4 * hidden,),
              "wy": (hidden,), "by": (1,)}
    out, pos = {}, 0
    for k in PARAM_ORDER:
        size = int(np.prod(shapes[k]))
        out[k] = np.array(vec[pos:pos + size], dtype=float).reshape(shapes[k])
        pos += size
    if pos != len(vec):
        raise ValueError("parameter vector has the wrong length")
    return out


def lstm_forward(params, X):
    """Run the LSTM over ``X`` of shape (batch, steps, inputs).

    Returns predictions of shape (batch,) and the cache used by
    :func:`lstm_backward`.
    """
    Wx, Wh, b = params["Wx"], params["Wh"], params["b"]
    n_hid = Wh.shape[1]
    B, T, _ = X.shape
    h = np.zeros((B, n_hid))
    c = np.zeros((B, n_hid))
    cache = []
    for t in range(T):
        z = X[:, t, :] @ Wx.T + h @ Wh.T + b
        i = _sigmoid(z[:, :n_hid])
        f = _sigmoid(z[:, n_hid:2 * n_hid])
        g = np.tanh(z[:, 2 * n_hid:3 * n_hid])
        o = _sigmoid(z[:, 3 * n_hid:])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        cache.append((X[:, t, :], h, c, i, f, g, o, tc))
        h = o * tc
        c = c_new
    y = h @ params["wy"] + params["by"][0]
    return y, (cache, h)


def lstm_backward(params, cache, dy):
    """Gradients of a scalar loss given ``dy = dL/dy`` for each sample."""
    steps, h_last = cache
    Wh = params["Wh"]
    n_hid = Wh.shape[1]
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    grads["wy"] = h_last.T @ dy
    grads["by"] = np.array([dy.sum()])
    dh = np.outer(dy, params["wy"])
    dc = np.zeros_like(dh)
    for x, h_prev, c_prev, i, f, g, o, tc in reversed(steps):
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        dz = np.empty((len(dy), 4 * n_hid))
        dz[:, :n_hid] = dc * g * i * (1.0 - i)
        dz[:, n_hid:2 * n_hid] = dc * c_prev * f * (1.0 - f)
        dz[:, 2 * n_hid:3 * n_hid] = dc * i * (1.0 - g * g)
        dz[:, 3 * n_hid:] = do * o * (1.0 - o)
        grads["Wx"] += dz.T @ x
        grads["Wh"] += dz.T @ h_prev
        grads["b"] += dz.sum(axis=0)
        dh = dz @ Wh
        dc = dc * f
    return grads


def mse_loss_and_grad(params, X, y):
    """Mean squared error over the batch and its parameter gradients."""
    pred, cache = lstm_forward(params, X)
    err = pred - y
    loss = float(np.mean(err * err))
    return loss, lstm_backward(params, cache, 2.0 * err / len(y))


def _channels(series):
    return np.array([[s.n_t, s.g_t] for s in series], dtype=float).reshape(-1, 2)


def make_windows(series, lookback):
    """Inputs ``(count, H, 2)`` and next-interval totals ``(count,)``."""
    data = _channels(series)
    count = len(data) - lookback
    if count < 1:
        return np.zeros((0, lookback, 2)), np.zeros(0)
    X = np.stack([data[k:k + lookback] for k in range(count)])
    y = data[lookback:, 0] + data[lookback:, 1]
    return X, y


def _std(values):
    s = float(np.std(values))
    return s if s > 1e-12 else 1.0


def train_forecaster(series, lookback=16, hidden=32, epochs=300, lr=0.01, seed=0,
                     val_fraction=0.2):
    """Fit an LSTM forecaster with full-batch Adam over truncated-BPTT windows.

    The last ``val_fraction`` of the windows is held out for the validation
    loss curve.  Input and target standardisation statistics come from the
    training part and are stored on the model.
    """
    if len(series) <= lookback + 1:
        raise ForecastError(f"need more than {lookback + 1} intervals, got {len(series)}")
    X, y = make_windows(series, lookback)
    n_val = int(len(y) * val_fraction)
    n_train = len(y) - n_val
    if n_train < 1:
        raise ForecastError("no training windows left after the validation split")
    data = _channels(series)
    train_rows = data[:n_train + lookback]
    x_mean = train_rows.mean(axis=0)
    x_std = np.array([_std(train_rows[:, 0]), _std(train_rows[:, 1])])
    y_mean = float(np.mean(y[:n_train]))
    y_std = _std(y[:n_train])
    Xs = (X - x_mean) / x_std
    ys = (y - y_mean) / y_std
    params = init_params(hidden, seed=seed)
    model = ForecastModel("lstm", lookback, hidden, params, x_mean, x_std, y_mean, y_std)
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v = {k: np.zeros_like(v) for k, v in params.items()}
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    for epoch in range(1, epochs + 1):
        loss, grads = mse_loss_and_grad(params, Xs[:n_train], ys[:n_train])
        if not math.isfinite(loss):
            raise TrainingError(f"loss became non-finite at epoch {epoch}; try a smaller learning rate")
        for k in params:
            m[k] = beta1 * m[k] + (1 - beta1) * grads[k]
            v[k] = beta2 * v[k] + (1 - beta2) * grads[k] ** 2
            m_hat = m[k] / (1 - beta1 ** epoch)
            v_hat = v[k] / (1 - beta2 ** epoch)
            params[k] = params[k] - lr * m_hat / (np.sqrt(v_hat) + eps)
        model.train_loss.append(loss)
        if n_val:
            pred, _ = lstm_forward(params, Xs[n_train:])
            model.val_loss.append(float(np.mean((pred - ys[n_train:]) ** 2)))
    if not all(np.all(np.isfinite(p)) for p in params.values()):
        raise TrainingError("weights became non-finite; try a smaller learning rate")
    return model


def forecast_next(model, history):
    """Predicted total tokens for the interval after ``history`` (never negative)."""
    if len(history) < model.lookback:
        raise ForecastError(f"need {model.lookback} intervals of history, got {len(history)}")
    if model.kind == "naive":
        return max(0.0, history[-1].total)
    window = _channels(history[-model.lookback:])
    X = ((window - model.x_mean) / model.x_std)[None, :, :]
    pred, _ = lstm_forward(model.params, X)
    return max(0.0, float(pred[0]) * model.y_std + model.y_mean)


def forecast_series(model, series):
    """One-step-ahead forecasts for every interval after the first ``lookback``."""
    return np.array([forecast_next(model, series[:k]) for k in range(model.lookback, len(series))])


def save_model(model, path):
    """Write the model as a flat numeric text file with a header block."""
    lines = [
        f"# rackctl-forecast version={FORMAT_VERSION}",
        f"# kind={model.kind} lookback={model.lookback} hidden={model.hidden}",
        "# x_mean=" + " ".join(repr(float(x)) for x in model.x_mean),
        "# x_std=" + " ".join(repr(float(x)) for x in model.x_std),
        f"# y_mean={model.y_mean!r} y_std={model.y_std!r}",
    ]
    if model.kind == "lstm":
        lines.extend(repr(float(x)) for x in flatten(model.params))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path):
    header, values, key = {}, [], None
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("#"):
                for tok in line[1:].split():
                    if "=" in tok:
                        key, val = tok.split("=", 1)
                        header[key] = val
                    elif key in header:  # continuation of a multi-value field
                        header[key] += " " + tok
            elif line:
                values.append(float(line))
    if int(header.get("version", -1)) != FORMAT_VERSION:
        raise ValueError(f"unsupported forecaster file version {header.get('version')}")
    hidden = int(header["hidden"])
    model = ForecastModel(
        header["kind"], int(header["lookback"]), hidden,
        unflatten(np.array(values), hidden) if header["kind"] == "lstm" else {},
        np.array([float(x) for x in header["x_mean"].split()]),
        np.array([float(x) for x in header["x_std"].split()]),
        float(header["y_mean"]), float(header["y_std"]))
    return model


@dataclass(frozen=True)
class ForecastScore:
    mae: float
    mape: float


def score(pred, actual):
    pred = np.asarray(pred, dtype=float)
    actual = np.asarray(actual, dtype=float)
    mae = float(np.mean(np.abs(pred - actual))) if len(actual) else 0.0
    nz = actual != 0
    mape = float(np.mean(np.abs(pred[nz] - actual[nz]) / np.abs(actual[nz])) * 100) if nz.any() else 0.0
    return ForecastScore(mae, mape)
