"""Synthetic transduction task and a small windowed frame classifier.

Each token ``u`` owns ``frames_per_token`` consecutive frames whose features
are the token's template vector plus Gaussian noise, so the reference event
of token ``u`` starts on frame ``(u - 1) * frames_per_token + 1``. The model
sees a window of ``2w + 1`` frames, which is enough context to move a token's
spike a few frames ahead of its evidence.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .align import greedy_path, trim_point
from . import _kernels
from .errors import DivergedLoss, InfeasibleAlignment
from .lattice import PosteriorGrid, ctc_loss, extend_labels, is_feasible, log_softmax
from .latency import utterance_latency
from .risk import _KIND_CODES, DEFAULT_CLAMP_FLOOR, RiskSpec

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ToyTaskConfig:
    vocab_size: int = 4
    frames_per_token: int = 6
    noise_scale: float = 0.15
    num_train: int = 200
    num_eval: int = 50
    seed: int = 0
    feature_dim: int = 8
    min_tokens: int = 3
    max_tokens: int = 5

    def __post_init__(self):
        for name in ("vocab_size", "frames_per_token", "num_train", "num_eval", "feature_dim", "min_tokens"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.max_tokens < self.min_tokens:
            raise ValueError("max_tokens must be >= min_tokens")
        if self.vocab_size < 2 and self.max_tokens > 1:
            raise ValueError("adjacent tokens differ, so multi-token utterances need vocab_size >= 2")


@dataclass(frozen=True)
class Utterance:
    features: np.ndarray
    labels: tuple[int, ...]
    ref_starts: tuple[int, ...]

    @property
    def T(self) -> int:
        return self.features.shape[0]


def token_templates(cfg: ToyTaskConfig) -> np.ndarray:
    rng = np.random.default_rng([cfg.seed, 1])
    templates = rng.normal(size=(cfg.vocab_size + 1, cfg.feature_dim))
    templates /= np.linalg.norm(templates, axis=1, keepdims=True)
    templates[0] = 0.0  # row 0 unused: blank has no template
    return templates


def gen_dataset(cfg: ToyTaskConfig) -> tuple[list[Utterance], list[Utterance]]:
    """Deterministic (train, eval) splits. Adjacent tokens never repeat, since
    two identical back-to-back segments carry no boundary evidence."""
    templates = token_templates(cfg)
    rng = np.random.default_rng([cfg.seed, 2])
    utts = []
    for _ in range(cfg.num_train + cfg.num_eval):
        U = int(rng.integers(cfg.min_tokens, cfg.max_tokens + 1))
        labels = []
        for _ in range(U):
            choices = [k for k in range(1, cfg.vocab_size + 1) if not labels or k != labels[-1]]
            labels.append(int(rng.choice(choices)))
        frames = np.repeat(templates[labels], cfg.frames_per_token, axis=0)
        noise = rng.normal(size=frames.shape) * cfg.noise_scale
        starts = tuple(u * cfg.frames_per_token + 1 for u in range(U))
        utts.append(Utterance(frames + noise, tuple(labels), starts))
    return utts[: cfg.num_train], utts[cfg.num_train :]


def windowed(features: np.ndarray, w: int) -> np.ndarray:
    """Stack frames ``t-w .. t+w`` (zero padded) into one row per frame."""
    T, F = features.shape
    padded = np.concatenate([np.zeros((w, F)), features, np.zeros((w, F))])
    return np.concatenate([padded[i : i + T] for i in range(2 * w + 1)], axis=1)


@dataclass
class ToyModel:
    """``logits = tanh(window @ W1 + b1) @ W2 + b2``."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    window: int

    @classmethod
    def init(cls, feature_dim: int, vocab_size: int, window: int = 4, hidden: int = 32, seed: int = 0) -> "ToyModel":
        rng = np.random.default_rng([seed, 3])
        fan_in = (2 * window + 1) * feature_dim
        return cls(
            W1=rng.normal(size=(fan_in, hidden)) / np.sqrt(fan_in),
            b1=np.zeros(hidden),
            W2=rng.normal(size=(hidden, vocab_size + 1)) / np.sqrt(hidden),
            b2=np.zeros(vocab_size + 1),
            window=window,
        )

    def params(self) -> dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def logits(self, features: np.ndarray) -> np.ndarray:
        h = np.tanh(windowed(features, self.window) @ self.W1 + self.b1)
        return h @ self.W2 + self.b2

    def posterior(self, features: np.ndarray) -> PosteriorGrid:
        return PosteriorGrid(log_softmax(self.logits(features)))

    def save(self, path) -> None:
        """Write an ``.npz`` checkpoint carrying ``format_version``."""
        np.savez(path, format_version=CHECKPOINT_VERSION, window=self.window, **self.params())

    @classmethod
    def load(cls, path) -> "ToyModel":
        with np.load(path) as data:
            version = int(data["format_version"])
            if version != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {version}")
            return cls(W1=data["W1"], b1=data["b1"], W2=data["W2"], b2=data["b2"], window=int(data["window"]))


@dataclass
class TrainResult:
    model: ToyModel
    loss_trace: list[float] = field(default_factory=list)


def train(
    model: ToyModel,
    dataset: list[Utterance],
    spec: RiskSpec,
    epochs: int = 200,
    lr: float = 0.15,
) -> TrainResult:
    """Full-batch gradient descent on the mean per-utterance objective.

    The model is updated in place and also returned. Gradients are reduced
    in dataset order, so runs are bit-for-bit reproducible.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    X = np.concatenate([windowed(u.features, model.window) for u in dataset])
    bounds = np.cumsum([0] + [u.T for u in dataset])
    n = len(dataset)
    for utt in dataset:
        if not is_feasible(utt.T, utt.labels):
            raise InfeasibleAlignment(f"utterance with T={utt.T} cannot carry labels {utt.labels}")
    # validated once here; the loop calls the fused kernel directly
    ext = [extend_labels(u.labels).symbols for u in dataset]
    kind = _KIND_CODES[spec.kind]
    trace = []
    for epoch in range(epochs):
        pre = X @ model.W1 + model.b1
        h = np.tanh(pre)
        logp = log_softmax(h @ model.W2 + model.b2)
        dlogits = np.empty_like(logp)
        total = 0.0
        for i, utt in enumerate(dataset):
            sl = slice(bounds[i], bounds[i + 1])
            value, g, _ = _kernels.objective(logp[sl], ext[i], kind, spec.lam, spec.clamp_floor, True)
            total += value
            dlogits[sl] = g
        mean_loss = total / n
        if not np.isfinite(mean_loss):
            raise DivergedLoss(f"objective became {mean_loss} at epoch {epoch}")
        trace.append(mean_loss)
        logger.debug("epoch %d loss %.6f", epoch, mean_loss)
        dlogits /= n
        dW2 = h.T @ dlogits
        db2 = dlogits.sum(axis=0)
        dpre = (dlogits @ model.W2.T) * (1.0 - h * h)
        dW1 = X.T @ dpre
        db1 = dpre.sum(axis=0)
        model.W1 -= lr * dW1
        model.b1 -= lr * db1
        model.W2 -= lr * dW2
        model.b2 -= lr * db2
    return TrainResult(model=model, loss_trace=trace)


def edit_distance(a, b) -> int:
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, z in enumerate(b, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != z))
        prev = cur
    return prev[-1]


def evaluate_spikes(
    model: ToyModel,
    dataset: list[Utterance],
    threshold: float = 0.99,
    margin: int = 5,
    frame_ms: float = 1.0,
) -> dict:
    """Alignment, trimming and drift statistics over ``dataset``.

    Returns ``{"utterances": [...], "summary": {...}}``; drift latency is in
    frames when ``frame_ms`` is 1.
    """
    rows = []
    errors = ref_total = 0
    for idx, utt in enumerate(dataset):
        y = model.posterior(utt.features)
        ali = greedy_path(y)
        nonblank = [t for t, s in enumerate(ali.path, start=1) if s != 0]
        report = trim_point(y, threshold, margin, num_tokens=len(utt.labels))
        lat = utterance_latency(ali, utt.labels, utt.ref_starts, frame_ms)
        dist = edit_distance(ali.labels, utt.labels)
        errors += dist
        ref_total += len(utt.labels)
        rows.append(
            {
                "index": idx,
                "T": utt.T,
                "hyp": list(ali.labels),
                "ref": list(utt.labels),
                "edits": dist,
                "last_spike": nonblank[-1] if nonblank else 0,
                "emission_frames": list(ali.end_frames),
                "ref_starts": list(utt.ref_starts),
                "dsf": report.dsf,
                "oracle_dsf": report.oracle_dsf,
                "dl": lat.dl,
                "ctc_loss": ctc_loss(y, utt.labels).neg_log_objective,
            }
        )
    dls = [r["dl"] for r in rows if r["dl"] is not None]
    summary = {
        "num_utterances": len(rows),
        "ter": errors / ref_total,
        "mean_dsf": float(np.mean([r["dsf"] for r in rows])),
        "mean_oracle_dsf": float(np.mean([r["oracle_dsf"] for r in rows])),
        "mean_last_spike": float(np.mean([r["last_spike"] for r in rows])),
        "mean_dl": float(np.mean(dls)) if dls else None,
        "mean_ctc_loss": float(np.mean([r["ctc_loss"] for r in rows])),
    }
    return {"utterances": rows, "summary": summary}


DEFAULT_LAMBDA = {"vanilla": 0.0, "downsample": 10.0, "early_emission": 20.0}

# optimizer and model settings used when a config leaves them out
DEFAULT_TRAINING = {
    "risk": "vanilla",
    "lambda": None,
    "clamp_floor": DEFAULT_CLAMP_FLOOR,
    "epochs": 200,
    "lr": 0.15,
    "window": 4,
    "hidden": 32,
}


def run_experiment(
    cfg: ToyTaskConfig,
    spec: RiskSpec,
    epochs: int = DEFAULT_TRAINING["epochs"],
    lr: float = DEFAULT_TRAINING["lr"],
    window: int = DEFAULT_TRAINING["window"],
    hidden: int = DEFAULT_TRAINING["hidden"],
) -> tuple[TrainResult, dict]:
    """Generate data, train from a seeded init, evaluate on the eval split."""
    train_set, eval_set = gen_dataset(cfg)
    model = ToyModel.init(cfg.feature_dim, cfg.vocab_size, window, hidden, seed=cfg.seed)
    result = train(model, train_set, spec, epochs=epochs, lr=lr)
    return result, evaluate_spikes(result.model, eval_set)
