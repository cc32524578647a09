"""LSTM behaviour classifier written directly in numpy.

Sequence input (features x 30) -> LSTM (150 hidden units) -> fully connected
(hidden -> 3) -> softmax, trained with cross-entropy. The classification
head reads the hidden state of the last time step.

Gate layout in the stacked weight matrices is (input, forget, cell, output).
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)

CLASSES = ("LCL", "LCR", "LK")
N_CLASSES = 3
SENSING_ROWS = 21
FULL_ROWS = SENSING_ROWS + 4
POS_ROWS = tuple(range(0, SENSING_ROWS, 3))
INCENTIVE_ROWS = [SENSING_ROWS + 2, SENSING_ROWS + 3]
MODES = {"with_characteristics": FULL_ROWS, "sensing_only": SENSING_ROWS}
FORMAT_VERSION = 1
PROB_FLOOR = 1e-12


class ModelFormatError(ValueError):
    pass


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class NetworkParams:
    """Weights plus the input standardization fitted on the training split."""

    Wx: np.ndarray  # (4H, D)
    Wh: np.ndarray  # (4H, H)
    b: np.ndarray  # (4H,)
    Wy: np.ndarray  # (C, H)
    by: np.ndarray  # (C,)
    mode: str = "with_characteristics"
    feature_mean: Optional[np.ndarray] = None
    feature_std: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    BLOCKS = ("Wx", "Wh", "b", "Wy", "by")

    @property
    def input_dim(self) -> int:
        return self.Wx.shape[1]

    @property
    def hidden(self) -> int:
        return self.Wh.shape[1]

    @classmethod
    def zeros(cls, input_dim: int = FULL_ROWS, hidden: int = 150, n_classes: int = N_CLASSES, **kw) -> "NetworkParams":
        H = hidden
        return cls(np.zeros((4 * H, input_dim)), np.zeros((4 * H, H)), np.zeros(4 * H), np.zeros((n_classes, H)), np.zeros(n_classes), **kw)

    @classmethod
    def init(cls, input_dim: int = FULL_ROWS, hidden: int = 150, n_classes: int = N_CLASSES, seed: int = 0, **kw) -> "NetworkParams":
        rng = np.random.default_rng(seed)
        k = 1.0 / np.sqrt(hidden)
        H = hidden
        p = cls(
            rng.uniform(-k, k, (4 * H, input_dim)),
            rng.uniform(-k, k, (4 * H, H)),
            np.zeros(4 * H),
            rng.uniform(-k, k, (n_classes, H)),
            np.zeros(n_classes),
            **kw,
        )
        p.b[H : 2 * H] = 1.0  # forget gate starts open
        return p

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            *(getattr(self, n).copy() for n in self.BLOCKS),
            mode=self.mode,
            feature_mean=None if self.feature_mean is None else self.feature_mean.copy(),
            feature_std=None if self.feature_std is None else self.feature_std.copy(),
            meta=json.loads(json.dumps(self.meta)),
        )

    def check(self) -> None:
        H, D = self.hidden, self.input_dim
        shapes = {"Wx": (4 * H, D), "Wh": (4 * H, H), "b": (4 * H,), "Wy": (self.Wy.shape[0], H), "by": (self.Wy.shape[0],)}
        for name, shape in shapes.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ModelFormatError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ModelFormatError(f"{name} contains non-finite values")


@dataclass
class PredictionOutput:
    probs: np.ndarray
    label: str


def _as_batch(x: np.ndarray, input_dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[1] != input_dim:
        raise ValueError(f"input of shape {x.shape[-2:]} does not match {input_dim} x T")
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains non-finite values")
    return x


def forward(params: NetworkParams, x: np.ndarray, seq_len: Optional[int] = None):
    """Run the network on ``(features, T)`` or ``(batch, features, T)`` input.

    Returns ``(probs, cache)``; ``probs`` has shape ``(batch, 3)``.
    """
    x = _as_batch(x, params.input_dim)
    if seq_len is not None and x.shape[2] != seq_len:
        raise ValueError(f"sequence length {x.shape[2]} != {seq_len}")
    B, _, T = x.shape
    H = params.hidden
    xs = np.transpose(x, (2, 0, 1))  # (T, B, D)
    h = np.zeros((T + 1, B, H))
    c = np.zeros((T + 1, B, H))
    gates = np.zeros((T, B, 4 * H))
    pre_x = xs @ params.Wx.T + params.b
    for t in range(T):
        z = pre_x[t] + h[t] @ params.Wh.T
        g = np.empty_like(z)
        g[:, : 2 * H] = sigmoid(z[:, : 2 * H])
        g[:, 2 * H : 3 * H] = np.tanh(z[:, 2 * H : 3 * H])
        g[:, 3 * H :] = sigmoid(z[:, 3 * H :])
        gates[t] = g
        c[t + 1] = g[:, H : 2 * H] * c[t] + g[:, :H] * g[:, 2 * H : 3 * H]
        h[t + 1] = g[:, 3 * H :] * np.tanh(c[t + 1])
    logits = h[T] @ params.Wy.T + params.by
    probs = softmax(logits)
    return probs, {"xs": xs, "h": h, "c": c, "gates": gates, "probs": probs}


def loss(probs: np.ndarray, label: int) -> float:
    """Cross-entropy of one distribution; the probability is floored at 1e-12."""
    return float(-np.log(max(float(probs[label]), PROB_FLOOR)))


def backward(params: NetworkParams, cache: dict, labels, weights=None) -> dict[str, np.ndarray]:
    """Gradient of the (weighted) summed batch loss with respect to every block."""
    xs, h, c, gates, probs = cache["xs"], cache["h"], cache["c"], cache["gates"], cache["probs"]
    T, B, _ = xs.shape
    H = params.hidden
    labels = np.atleast_1d(np.asarray(labels, dtype=int))
    w = np.ones(B) if weights is None else np.asarray(weights, dtype=float)

    dlogits = probs.copy()
    dlogits[np.arange(B), labels] -= 1.0
    dlogits *= w[:, None]
    grads = {
        "Wy": dlogits.T @ h[T],
        "by": dlogits.sum(axis=0),
        "Wx": np.zeros_like(params.Wx),
        "Wh": np.zeros_like(params.Wh),
        "b": np.zeros_like(params.b),
    }
    dh = dlogits @ params.Wy
    dc = np.zeros((B, H))
    dz = np.empty((B, 4 * H))
    for t in reversed(range(T)):
        g = gates[t]
        i, f, gg, o = g[:, :H], g[:, H : 2 * H], g[:, 2 * H : 3 * H], g[:, 3 * H :]
        tc = np.tanh(c[t + 1])
        dc = dc + dh * o * (1.0 - tc * tc)
        dz[:, :H] = dc * gg * i * (1.0 - i)
        dz[:, H : 2 * H] = dc * c[t] * f * (1.0 - f)
        dz[:, 2 * H : 3 * H] = dc * i * (1.0 - gg * gg)
        dz[:, 3 * H :] = dh * tc * o * (1.0 - o)
        grads["Wx"] += dz.T @ xs[t]
        grads["Wh"] += dz.T @ h[t]
        grads["b"] += dz.sum(axis=0)
        dh = dz @ params.Wh
        dc = dc * f
    return grads


# ------------------------------------------------------------- inputs


def prepare_input(stacked: np.ndarray, mode: str = "with_characteristics") -> np.ndarray:
    """Raw (25, T) sample -> network features before standardization.

    The target's position becomes its displacement since the first frame;
    every other vehicle's position becomes its offset from the target.
    Incentives are compressed with a signed log1p so the missing-lane
    sentinel does not swamp the scale of physical values.
    """
    x = np.array(stacked, dtype=float)
    if x.shape[0] != FULL_ROWS:
        raise ValueError(f"expected {FULL_ROWS} feature rows, got {x.shape[0]}")
    target_pos = x[0].copy()
    for r in POS_ROWS[1:]:
        x[r] -= target_pos
    x[0] = target_pos - target_pos[0]
    inc = x[INCENTIVE_ROWS]
    x[INCENTIVE_ROWS] = np.sign(inc) * np.log1p(np.abs(inc))
    return x[: MODES[mode]]


def fit_standardizer(xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature mean/std over samples and time of a ``(N, D, T)`` stack."""
    mean = xs.mean(axis=(0, 2))
    std = xs.std(axis=(0, 2))
    std = np.where(std > 1e-9, std, 1.0)
    return mean, std


def standardize(params: NetworkParams, x: np.ndarray) -> np.ndarray:
    if params.feature_mean is None:
        return x
    return (x - params.feature_mean[:, None]) / params.feature_std[:, None]


def predict_label(probs: np.ndarray) -> str:
    # np.argmax returns the first maximum, which is the LCL < LCR < LK tie order
    return CLASSES[int(np.argmax(probs))]


def predict(params: NetworkParams, sensing: np.ndarray, characteristics: Optional[np.ndarray] = None) -> PredictionOutput:
    """Classify one raw window (21 x T sensing, optional 4 x T characteristics)."""
    sensing = np.asarray(sensing, dtype=float)
    if params.mode == "with_characteristics":
        if characteristics is None:
            raise ValueError("model was trained with characteristics; none given")
        stacked = np.vstack([sensing, characteristics])
    else:
        stacked = np.vstack([sensing, np.zeros((FULL_ROWS - SENSING_ROWS, sensing.shape[1]))])
    x = standardize(params, prepare_input(stacked, params.mode))
    probs, _ = forward(params, x)
    return PredictionOutput(probs[0], predict_label(probs[0]))


def predict_batch(params: NetworkParams, stacked: np.ndarray) -> np.ndarray:
    """Probabilities for a ``(N, 25, T)`` stack of raw samples."""
    x = np.stack([standardize(params, prepare_input(s, params.mode)) for s in stacked])
    probs, _ = forward(params, x)
    return probs


# ----------------------------------------------------------- training


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    batch_size: int = 16
    learning_rate: float = 0.01
    gradient_clip_norm: float = 5.0
    rng_seed: int = 0
    train_fraction: float = 0.75
    hidden: int = 150
    class_weighting: bool = False

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError(f"train_fraction must be in (0, 1), got {self.train_fraction}")


@dataclass
class TrainResult:
    params: NetworkParams
    log: list[dict]
    train_idx: np.ndarray
    test_idx: np.ndarray


def stratified_split(labels: Sequence[str], groups: Sequence[str], fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Split indices so no group straddles the split, stratified by class.

    A group is assigned the rarest class among its samples.
    """
    rng = np.random.default_rng(seed)
    members: dict[str, list[int]] = {}
    for i, g in enumerate(groups):
        members.setdefault(str(g), []).append(i)
    rank = {c: k for k, c in enumerate(CLASSES)}
    by_class: dict[str, list[str]] = {c: [] for c in CLASSES}
    for g, idx in members.items():
        cls = min((labels[i] for i in idx), key=lambda c: rank[c])
        by_class[cls].append(g)
    train, test = [], []
    for c in CLASSES:
        gs = by_class[c]
        order = rng.permutation(len(gs))
        n_train = int(round(fraction * len(gs)))
        if len(gs) >= 2:
            n_train = min(max(n_train, 1), len(gs) - 1)
        for k, j in enumerate(order):
            (train if k < n_train else test).extend(members[gs[j]])
    return np.array(sorted(train), dtype=int), np.array(sorted(test), dtype=int)


def _clip(grads: dict, max_norm: float) -> None:
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > max_norm > 0:
        for g in grads.values():
            g *= max_norm / norm


def _evaluate(params, x, y) -> tuple[float, float]:
    if len(y) == 0:
        return float("nan"), float("nan")
    probs, _ = forward(params, x)
    losses = -np.log(np.maximum(probs[np.arange(len(y)), y], PROB_FLOOR))
    return float(losses.mean()), float(np.mean(np.argmax(probs, axis=1) == y))


def train(
    stacked: np.ndarray,
    labels: Sequence[str],
    groups: Sequence[str],
    config: TrainConfig = TrainConfig(),
    mode: str = "with_characteristics",
    split: Optional[tuple[np.ndarray, np.ndarray]] = None,
) -> TrainResult:
    """Train on raw ``(N, 25, T)`` samples.

    Raises:
        ValueError: if fewer than two classes are present.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    labels = list(labels)
    if len(labels) == 0:
        raise ValueError("empty corpus")
    if len(set(labels)) < 2:
        raise ValueError(f"corpus holds a single class ({labels[0]}); nothing to discriminate")
    y_all = np.array([CLASSES.index(l) for l in labels])
    train_idx, test_idx = split if split is not None else stratified_split(labels, groups, config.train_fraction, config.rng_seed)

    feats = np.stack([prepare_input(s, mode) for s in stacked])
    mean, std = fit_standardizer(feats[train_idx])
    feats = (feats - mean[None, :, None]) / std[None, :, None]

    params = NetworkParams.init(MODES[mode], config.hidden, seed=config.rng_seed, mode=mode, feature_mean=mean, feature_std=std)
    x_tr, y_tr = feats[train_idx], y_all[train_idx]
    x_te, y_te = feats[test_idx], y_all[test_idx]

    if config.class_weighting:
        counts = np.bincount(y_tr, minlength=N_CLASSES).astype(float)
        cw = np.where(counts > 0, len(y_tr) / (N_CLASSES * np.maximum(counts, 1)), 0.0)
        w_tr = cw[y_tr]
    else:
        w_tr = np.ones(len(y_tr))

    rng = np.random.default_rng(config.rng_seed + 1)
    history = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(y_tr))
        for start in range(0, len(order), config.batch_size):
            bi = order[start : start + config.batch_size]
            _, cache = forward(params, x_tr[bi])
            grads = backward(params, cache, y_tr[bi], w_tr[bi])
            scale = 1.0 / w_tr[bi].sum()
            for g in grads.values():
                g *= scale
            _clip(grads, config.gradient_clip_norm)
            for name in NetworkParams.BLOCKS:
                getattr(params, name)[...] -= config.learning_rate * grads[name]
        tr_loss, tr_acc = _evaluate(params, x_tr, y_tr)
        va_loss, va_acc = _evaluate(params, x_te, y_te)
        history.append({"epoch": epoch, "train_loss": tr_loss, "train_acc": tr_acc, "val_loss": va_loss, "val_acc": va_acc})
        log.debug("epoch %d loss %.4f acc %.3f val %.4f/%.3f", epoch, tr_loss, tr_acc, va_loss, va_acc)
    return TrainResult(params, history, train_idx, test_idx)


# -------------------------------------------------------------- storage


def _payload(params: NetworkParams) -> dict:
    blocks = {}
    for name in NetworkParams.BLOCKS:
        arr = getattr(params, name)
        blocks[name] = {"shape": list(arr.shape), "data": [float(v) for v in arr.ravel()]}
    for name in ("feature_mean", "feature_std"):
        arr = getattr(params, name)
        blocks[name] = None if arr is None else {"shape": list(arr.shape), "data": [float(v) for v in arr.ravel()]}
    return {"mode": params.mode, "blocks": blocks, "meta": params.meta}


def _digest(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def save_params(params: NetworkParams, path) -> None:
    payload = _payload(params)
    doc = {"format": "drivechar-lstm", "version": FORMAT_VERSION, "sha256": _digest(payload), "payload": payload}
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(doc, sort_keys=True))
    tmp.replace(path)


def load_params(path) -> NetworkParams:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: unreadable model file ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != "drivechar-lstm":
        raise ModelFormatError(f"{path}: not a model file")
    if doc.get("version") != FORMAT_VERSION:
        raise ModelFormatError(f"{path}: format version {doc.get('version')} is incompatible with {FORMAT_VERSION}")
    payload = doc["payload"]
    if _digest(payload) != doc.get("sha256"):
        raise ModelFormatError(f"{path}: checksum mismatch")

    def arr(block):
        if block is None:
            return None
        a = np.array(block["data"], dtype=float)
        if a.size != int(np.prod(block["shape"])):
            raise ModelFormatError(f"{path}: block size does not match its shape")
        return a.reshape(block["shape"])

    b = payload["blocks"]
    params = NetworkParams(
        *(arr(b[n]) for n in NetworkParams.BLOCKS),
        mode=payload["mode"],
        feature_mean=arr(b["feature_mean"]),
        feature_std=arr(b["feature_std"]),
        meta=payload.get("meta", {}),
    )
    params.check()
    return params
