"""Training loops for the CNN baselines and the semi-supervised GANs,
plus evaluation, cross-validation, and the loss/metrics record formats.

One training worker owns all mutable state.  Every stochastic choice
(init, shuffling, label masking, dropout, noise) draws from a generator
seeded by (config seed, validation fold, purpose tag), so a run is a pure
function of (config, bundle) and reruns are byte-identical.

Normalization statistics are always fitted on the training folds only and
travel with the checkpoint; validation data never influences them.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import losses, models, nn, optim
from .bundle import SegmentBundle
from .corpus import NUM_MODES, FoldAssignment, NormStats, assign_folds
from .layers import Network
from .nn import Tensor

logger = logging.getLogger(__name__)

COLLAPSE_STD = 1e-4
COLLAPSE_PATIENCE = 100


class NumericAbortError(RuntimeError):
    """Training hit a non-finite loss or gradient."""


@dataclass(frozen=True)
class TrainConfig:
    model: str = "A"
    batch_size: int = 16
    epochs: int = 30
    label_fraction: float = 1.0
    smoothing_target: float = 0.9
    clip_norm: float = 5.0
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    k_folds: int = 5
    eval_every: int | None = None  # steps between validations; None = per epoch
    generator_loss_mode: str = "nonsaturating"
    supervised_renormalize: bool = True

    def __post_init__(self):
        if self.model not in models.MODEL_IDS:
            raise ValueError(f"unknown model '{self.model}'")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (batchnorm needs it)")
        if not 0.0 < self.label_fraction <= 1.0:
            raise ValueError("label_fraction must be in (0, 1]")
        if not 0.0 < self.smoothing_target <= 1.0:
            raise ValueError("smoothing_target must be in (0, 1]")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.k_folds < 2:
            raise ValueError("k_folds must be >= 2")
        if self.generator_loss_mode not in ("nonsaturating", "feature_matching"):
            raise ValueError(f"unknown generator loss '{self.generator_loss_mode}'")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    def digest(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


@dataclass
class Metrics:
    model: str
    fold: int
    accuracy: float
    precision: list[float]
    recall: list[float]
    confusion: list[list[int]]  # [true class][predicted class]
    support: int
    config_digest: str = ""
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "fold": self.fold,
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "confusion": self.confusion,
            "support": self.support,
            "config_digest": self.config_digest,
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


@dataclass
class LossTrace:
    """Per-step loss curves; the CSV is the plotting source."""

    steps: list[int] = field(default_factory=list)
    supervised: list[float] = field(default_factory=list)
    unsupervised: list[float] = field(default_factory=list)
    total: list[float] = field(default_factory=list)
    generator: list[float] = field(default_factory=list)

    def append(self, step: int, sup: float, unsup: float, gen: float) -> None:
        self.steps.append(step)
        self.supervised.append(sup)
        self.unsupervised.append(unsup)
        self.total.append(sup + unsup)
        self.generator.append(gen)

    def to_csv(self) -> str:
        lines = ["step,supervised,unsupervised,total,generator"]
        for i, step in enumerate(self.steps):
            lines.append(
                f"{step},{self.supervised[i]!r},{self.unsupervised[i]!r},"
                f"{self.total[i]!r},{self.generator[i]!r}"
            )
        return "\n".join(lines) + "\n"

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")


@dataclass
class TrainResult:
    networks: dict[str, Network]
    trace: LossTrace
    metrics: Metrics
    norm_stats: NormStats
    adam_scalars: dict
    rng_state: dict = field(default_factory=dict)  # final stream states


# ---------------------------------------------------------------------------
# data plumbing

def fit_stats_arrays(values: np.ndarray, valid_lens: np.ndarray) -> NormStats:
    """Per-channel mean/std over valid rows of stacked segment arrays."""
    mask = np.arange(values.shape[1])[None, :] < valid_lens[:, None]
    rows = values[mask].astype(np.float64)
    if rows.size == 0:
        raise ValueError("no valid rows to fit stats on")
    return NormStats(rows.mean(axis=0), np.maximum(rows.std(axis=0), 1e-8))


def normalize_arrays(values: np.ndarray, valid_lens: np.ndarray,
                     stats: NormStats) -> np.ndarray:
    """Z-score valid rows; padding rows stay exactly zero."""
    mask = (np.arange(values.shape[1])[None, :] < valid_lens[:, None])
    z = (values.astype(np.float64) - stats.mean) / stats.std
    z *= mask[:, :, None]
    return z.astype(nn.get_default_dtype())


def mask_labels(labels: np.ndarray, fraction: float,
                rng: np.random.Generator) -> np.ndarray:
    """Keep labels on a seeded random fraction of labeled rows; rest -> -1."""
    out = np.full_like(labels, -1)
    labeled = np.flatnonzero(labels >= 0)
    n_keep = int(round(fraction * len(labeled)))
    keep = rng.permutation(labeled)[:n_keep]
    out[keep] = labels[keep]
    return out


class _CyclingSampler:
    """Reshuffling cyclic batch sampler over a fixed index pool."""

    def __init__(self, indices: np.ndarray, batch_size: int,
                 rng: np.random.Generator):
        if len(indices) < batch_size:
            raise ValueError(
                f"pool of {len(indices)} rows cannot fill batches of {batch_size}"
            )
        self.indices = np.asarray(indices)
        self.batch_size = batch_size
        self.rng = rng
        self._order = rng.permutation(self.indices)
        self._pos = 0

    def next(self) -> np.ndarray:
        if self._pos + self.batch_size > len(self._order):
            self._order = self.rng.permutation(self.indices)
            self._pos = 0
        batch = self._order[self._pos : self._pos + self.batch_size]
        self._pos += self.batch_size
        return batch


def _rng(config: TrainConfig, fold: int, tag: int) -> np.random.Generator:
    return np.random.default_rng([config.seed, fold, tag])


_TAG_INIT, _TAG_SHUFFLE, _TAG_DROPOUT, _TAG_MASK, _TAG_NOISE = range(5)


def _check_finite(value: float, what: str, step: int) -> float:
    if not np.isfinite(value):
        raise NumericAbortError(f"non-finite {what} at step {step}: {value}")
    return value


def _snapshot(nets: dict[str, Network]) -> dict:
    return {
        name: (
            [p.data.copy() for p in net.params()],
            [b.copy() for _, b in net.named_buffers()],
        )
        for name, net in nets.items()
    }


def _restore(nets: dict[str, Network], snap: dict) -> None:
    for name, net in nets.items():
        params, buffers = snap[name]
        for p, saved in zip(net.params(), params):
            p.data = saved.copy()
        for (_, b), saved in zip(net.named_buffers(), buffers):
            b[...] = saved


# ---------------------------------------------------------------------------
# evaluation

def predict_classes(net: Network, values: np.ndarray,
                    batch_size: int = 512) -> np.ndarray:
    """Argmax over the real-class logits (a GAN's fake logit is ignored)."""
    preds = []
    for start in range(0, values.shape[0], batch_size):
        chunk = values[start : start + batch_size]
        logits = net(Tensor(chunk.astype(nn.get_default_dtype())), train=False)
        preds.append(np.argmax(logits.data[:, :NUM_MODES], axis=1))
    return np.concatenate(preds)


def metrics_from_predictions(y_true: np.ndarray, y_pred: np.ndarray,
                             model: str, fold: int) -> Metrics:
    confusion = np.zeros((NUM_MODES, NUM_MODES), dtype=np.int64)
    np.add.at(confusion, (y_true, y_pred), 1)
    support = int(confusion.sum())
    accuracy = float(np.trace(confusion) / support)
    col = confusion.sum(axis=0)
    row = confusion.sum(axis=1)
    precision = [float(confusion[i, i] / col[i]) if col[i] else 0.0
                 for i in range(NUM_MODES)]
    recall = [float(confusion[i, i] / row[i]) if row[i] else 0.0
              for i in range(NUM_MODES)]
    return Metrics(model, fold, accuracy, precision, recall,
                   confusion.tolist(), support)


def evaluate(net: Network, values: np.ndarray, labels: np.ndarray,
             model: str, fold: int, *, trips: list[str] | None = None,
             per_trip: bool = False) -> Metrics:
    """Segment-level metrics on a validation split (eval mode throughout).

    With ``per_trip`` and a trip id per row, predictions are aggregated by
    majority vote per trip before scoring (ties pick the lowest class).
    """
    keep = labels >= 0
    if not keep.any():
        raise ValueError("cannot evaluate an empty (or fully unlabeled) fold")
    values, labels = values[keep], labels[keep]
    preds = predict_classes(net, values)
    if per_trip:
        if trips is None:
            raise ValueError("per-trip evaluation needs trip ids")
        trips = [t for t, k in zip(trips, keep) if k]
        y_true, y_pred = [], []
        by_trip: dict[str, list[int]] = {}
        label_of: dict[str, int] = {}
        for t, p, y in zip(trips, preds, labels):
            by_trip.setdefault(t, []).append(int(p))
            label_of[t] = int(y)
        for t, votes in by_trip.items():
            counts = np.bincount(votes, minlength=NUM_MODES)
            y_pred.append(int(np.argmax(counts)))
            y_true.append(label_of[t])
        return metrics_from_predictions(np.array(y_true), np.array(y_pred),
                                        model, fold)
    return metrics_from_predictions(labels, preds, model, fold)


# ---------------------------------------------------------------------------
# CNN training

def train_cnn(config: TrainConfig, bundle: SegmentBundle,
              folds: FoldAssignment, val_fold: int) -> TrainResult:
    """Minibatch cross-entropy training of a CNN baseline (models A-C).

    The parameter state with the best validation accuracy is the one
    returned; the loss trace keeps the supervised column and carries
    zeros for the adversarial columns.
    """
    spec = models.build_model(config.model)
    if spec.is_gan:
        raise ValueError(f"model {config.model} is adversarial; use train_sgan")

    train_idx = folds.train_indices(val_fold)
    val_idx = folds.val_indices(val_fold)
    stats = fit_stats_arrays(bundle.values[train_idx], bundle.valid_lens[train_idx])
    x_train = normalize_arrays(bundle.values[train_idx],
                               bundle.valid_lens[train_idx], stats)
    x_val = normalize_arrays(bundle.values[val_idx],
                             bundle.valid_lens[val_idx], stats)
    y_val = bundle.labels[val_idx]

    y_train = mask_labels(bundle.labels[train_idx], config.label_fraction,
                          _rng(config, val_fold, _TAG_MASK))
    labeled = np.flatnonzero(y_train >= 0)
    if len(labeled) < config.batch_size:
        raise ValueError(
            f"{len(labeled)} labeled training segments cannot fill a batch "
            f"of {config.batch_size}"
        )

    nets = models.build_networks(spec, seed=config.seed, salt=val_fold)
    net = nets["classifier"]
    state = optim.adam_init(net.params(), lr=config.lr, beta1=config.beta1,
                            beta2=config.beta2, eps=config.eps)
    shuffle_rng = _rng(config, val_fold, _TAG_SHUFFLE)
    drop_rng = _rng(config, val_fold, _TAG_DROPOUT)

    trace = LossTrace()
    best = (-1.0, None, None)  # accuracy, snapshot, metrics
    step = 0
    steps_per_epoch = len(labeled) // config.batch_size
    if steps_per_epoch == 0:
        raise ValueError("not enough labeled data for a single step")

    def validate():
        nonlocal best
        m = evaluate(net, x_val, y_val, config.model, val_fold)
        if m.accuracy > best[0]:
            best = (m.accuracy, _snapshot(nets), m)

    for _ in range(config.epochs):
        order = shuffle_rng.permutation(labeled)
        for s in range(steps_per_epoch):
            batch = order[s * config.batch_size : (s + 1) * config.batch_size]
            x = Tensor(x_train[batch])
            logits = net(x, train=True, rng=drop_rng)
            loss = losses.supervised_loss(
                logits, y_train[batch], renormalize=config.supervised_renormalize
            )
            value = _check_finite(loss.item(), "loss", step)
            loss.backward()
            grads = optim.clip_gradients([p.grad for p in net.params()],
                                         config.clip_norm)
            optim.adam_step(net.params(), grads, state)
            net.zero_grad()
            trace.append(step, value, 0.0, 0.0)
            step += 1
            if config.eval_every and step % config.eval_every == 0:
                validate()
        validate()

    _restore(nets, best[1])
    metrics = best[2]
    metrics.config_digest = config.digest()
    metrics.seed = config.seed
    rng_state = {
        "shuffle": shuffle_rng.bit_generator.state,
        "dropout": drop_rng.bit_generator.state,
    }
    return TrainResult(nets, trace, metrics, stats, state.scalars(), rng_state)


# ---------------------------------------------------------------------------
# semi-supervised GAN training

def train_sgan(config: TrainConfig, bundle: SegmentBundle,
               folds: FoldAssignment, val_fold: int) -> TrainResult:
    """Adversarial training of a semi-supervised GAN (models D, E).

    Each step samples one labeled batch, one unlabeled batch (all training
    segments, labels ignored), and one noise batch; the discriminator
    takes an Adam step on supervised + unsupervised loss, then the
    generator takes one on its own objective.  The two updates are
    strictly partitioned: parameters of the frozen side receive no
    gradient at all.  Discriminator batchnorm running statistics absorb
    only real batches, so eval-mode statistics are not skewed by the
    drifting fake distribution.
    """
    spec = models.build_model(config.model)
    if not spec.is_gan:
        raise ValueError(f"model {config.model} is a plain CNN; use train_cnn")

    train_idx = folds.train_indices(val_fold)
    val_idx = folds.val_indices(val_fold)
    stats = fit_stats_arrays(bundle.values[train_idx], bundle.valid_lens[train_idx])
    x_train = normalize_arrays(bundle.values[train_idx],
                               bundle.valid_lens[train_idx], stats)
    x_val = normalize_arrays(bundle.values[val_idx],
                             bundle.valid_lens[val_idx], stats)
    y_val = bundle.labels[val_idx]

    y_train = mask_labels(bundle.labels[train_idx], config.label_fraction,
                          _rng(config, val_fold, _TAG_MASK))
    labeled = np.flatnonzero(y_train >= 0)

    nets = models.build_networks(spec, seed=config.seed, salt=val_fold)
    disc, gen = nets["discriminator"], nets["generator"]
    d_state = optim.adam_init(disc.params(), lr=config.lr, beta1=config.beta1,
                              beta2=config.beta2, eps=config.eps)
    g_state = optim.adam_init(gen.params(), lr=config.lr, beta1=config.beta1,
                              beta2=config.beta2, eps=config.eps)

    shuffle_rng = _rng(config, val_fold, _TAG_SHUFFLE)
    drop_rng = _rng(config, val_fold, _TAG_DROPOUT)
    noise_rng = _rng(config, val_fold, _TAG_NOISE)
    labeled_sampler = _CyclingSampler(labeled, config.batch_size, shuffle_rng)

    trace = LossTrace()
    best = (-1.0, None, None)
    step = 0
    collapse_run = 0
    collapse_warned = False
    steps_per_epoch = len(train_idx) // config.batch_size
    if steps_per_epoch == 0:
        raise ValueError("not enough training data for a single step")

    def validate():
        nonlocal best
        m = evaluate(disc, x_val, y_val, config.model, val_fold)
        if m.accuracy > best[0]:
            best = (m.accuracy, _snapshot(nets), m)

    for _ in range(config.epochs):
        epoch_order = shuffle_rng.permutation(train_idx.shape[0])
        for s in range(steps_per_epoch):
            lab_batch = labeled_sampler.next()
            unlab_batch = epoch_order[s * config.batch_size
                                      : (s + 1) * config.batch_size]
            z = models.sample_noise(noise_rng, config.batch_size)

            # discriminator step (generator frozen -> no grads flow into it)
            gen.set_trainable(False)
            fake = gen(Tensor(z), train=True, rng=drop_rng, update_stats=False)
            logits_lab = disc(Tensor(x_train[lab_batch]), train=True, rng=drop_rng)
            sup = losses.supervised_loss(
                logits_lab, y_train[lab_batch],
                renormalize=config.supervised_renormalize,
            )
            logits_unlab = disc(Tensor(x_train[unlab_batch]), train=True,
                                rng=drop_rng)
            logits_fake = disc(fake, train=True, rng=drop_rng, update_stats=False)
            unsup = losses.unsupervised_loss(
                logits_unlab, logits_fake, smoothing_target=config.smoothing_target
            )
            d_loss = nn.add(sup, unsup)
            sup_v = _check_finite(sup.item(), "supervised loss", step)
            unsup_v = _check_finite(unsup.item(), "unsupervised loss", step)
            d_loss.backward()
            d_grads = optim.clip_gradients([p.grad for p in disc.params()],
                                           config.clip_norm)
            optim.adam_step(disc.params(), d_grads, d_state)
            disc.zero_grad()
            gen.set_trainable(True)

            # generator step (discriminator frozen)
            disc.set_trainable(False)
            fake2 = gen(Tensor(z), train=True, rng=drop_rng)
            if config.generator_loss_mode == "feature_matching":
                logits_fake2, feats_fake = disc(
                    fake2, train=True, rng=drop_rng, update_stats=False,
                    return_features=True,
                )
                _, feats_real = disc(
                    Tensor(x_train[unlab_batch]), train=True, rng=drop_rng,
                    update_stats=False, return_features=True,
                )
                g_loss = losses.generator_loss(
                    logits_fake2, mode="feature_matching",
                    features_real=feats_real, features_fake=feats_fake,
                )
            else:
                logits_fake2 = disc(fake2, train=True, rng=drop_rng,
                                    update_stats=False)
                g_loss = losses.generator_loss(logits_fake2)
            g_v = _check_finite(g_loss.item(), "generator loss", step)
            g_loss.backward()
            g_grads = optim.clip_gradients([p.grad for p in gen.params()],
                                           config.clip_norm)
            optim.adam_step(gen.params(), g_grads, g_state)
            gen.zero_grad()
            disc.set_trainable(True)

            trace.append(step, sup_v, unsup_v, g_v)

            if float(fake2.data.std()) < COLLAPSE_STD:
                collapse_run += 1
                if collapse_run >= COLLAPSE_PATIENCE and not collapse_warned:
                    logger.warning(
                        "possible mode collapse: generator output std below "
                        "%g for %d consecutive steps", COLLAPSE_STD,
                        COLLAPSE_PATIENCE,
                    )
                    collapse_warned = True
            else:
                collapse_run = 0

            step += 1
            if config.eval_every and step % config.eval_every == 0:
                validate()
        validate()

    _restore(nets, best[1])
    metrics = best[2]
    metrics.config_digest = config.digest()
    metrics.seed = config.seed
    rng_state = {
        "shuffle": shuffle_rng.bit_generator.state,
        "dropout": drop_rng.bit_generator.state,
        "noise": noise_rng.bit_generator.state,
    }
    return TrainResult(
        nets, trace, metrics, stats,
        {"discriminator": d_state.scalars(), "generator": g_state.scalars()},
        rng_state,
    )


def train_model(config: TrainConfig, bundle: SegmentBundle,
                folds: FoldAssignment, val_fold: int) -> TrainResult:
    spec = models.build_model(config.model)
    if spec.is_gan:
        return train_sgan(config, bundle, folds, val_fold)
    return train_cnn(config, bundle, folds, val_fold)


# ---------------------------------------------------------------------------
# cross-validation

def cross_validate(config: TrainConfig,
                   bundle: SegmentBundle) -> tuple[list[Metrics], dict]:
    """Train/evaluate once per fold; headline is the support-weighted mean."""
    folds = assign_folds(bundle.to_segments(), k=config.k_folds,
                         seed=config.seed)
    per_fold: list[Metrics] = []
    for f in range(config.k_folds):
        result = train_model(config, bundle, folds, f)
        per_fold.append(result.metrics)

    accs = np.array([m.accuracy for m in per_fold])
    supports = np.array([m.support for m in per_fold], dtype=np.float64)
    aggregate = {
        "model": config.model,
        "k": config.k_folds,
        "accuracy_weighted_mean": float((accs * supports).sum() / supports.sum()),
        "accuracy_mean": float(accs.mean()),
        "accuracy_std": float(accs.std()),
        "fold_accuracies": [float(a) for a in accs],
        "fold_supports": [int(s) for s in supports],
        "config_digest": config.digest(),
        "seed": config.seed,
    }
    return per_fold, aggregate
