"""Losses of the semi-supervised adversarial game.

The discriminator produces K+1 logits (K real transport modes plus a fake
class).  The supervised term is the negative log probability of the true
label conditioned on the sample being real, i.e. cross-entropy over the
first K logits renormalized.  The unsupervised term is the adversarial
game value: real samples should not land in the fake class, generated
samples should.  All terms are composed from stable log-sum-exp
primitives, so probabilities are never materialized and gradients come
from the tape.
"""

from __future__ import annotations

import numpy as np

from . import nn
from .corpus import NUM_MODES
from .nn import Tensor


def one_hot(labels: np.ndarray, width: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.shape[0], width), dtype=nn.get_default_dtype())
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def supervised_loss(logits: Tensor, labels: np.ndarray,
                    num_classes: int = NUM_MODES,
                    renormalize: bool = True) -> Tensor:
    """Mean negative log probability of the true class.

    With ``renormalize`` (default) the distribution is conditioned on the
    sample being real: softmax over the first ``num_classes`` logits only,
    so a GAN discriminator's fake logit never competes with the label.
    ``renormalize=False`` is the plain full-width cross-entropy, kept for
    ablation.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise ValueError("labels must be one int per batch row")
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValueError(
            f"labels must be real classes in [0, {num_classes}); "
            f"got range [{labels.min()}, {labels.max()}]"
        )
    if not renormalize:
        return nn.softmax_xent(logits, one_hot(labels, logits.shape[1]))
    real_lse = nn.logsumexp(nn.slice_cols(logits, 0, num_classes))
    picked = nn.take_cols(logits, labels)
    return nn.mean_all(nn.sub(real_lse, picked))


def _log_not_fake(logits: Tensor, num_classes: int) -> Tensor:
    """Per-row -log(1 - p_fake) = lse(all) - lse(real classes)."""
    return nn.sub(nn.logsumexp(logits),
                  nn.logsumexp(nn.slice_cols(logits, 0, num_classes)))


def _log_is_fake(logits: Tensor, num_classes: int) -> Tensor:
    """Per-row -log p_fake = lse(all) - fake logit."""
    fake_col = np.full(logits.shape[0], num_classes, dtype=np.int64)
    return nn.sub(nn.logsumexp(logits), nn.take_cols(logits, fake_col))


def unsupervised_loss(logits_real: Tensor, logits_fake: Tensor,
                      smoothing_target: float = 1.0,
                      num_classes: int = NUM_MODES) -> Tensor:
    """The adversarial game value for the discriminator.

    Real side: -log(1 - p_fake(x)); generated side: -log p_fake(G(z)).
    One-sided label smoothing softens only the real side: with target s,
    the real term becomes s*(-log(1-p_fake)) + (1-s)*(-log p_fake), whose
    optimum sits at p_fake = 1-s instead of 0.  s = 1 is the plain game.
    """
    if not 0.0 < smoothing_target <= 1.0:
        raise ValueError(f"smoothing target must be in (0, 1], got {smoothing_target}")
    not_fake = nn.mean_all(_log_not_fake(logits_real, num_classes))
    real_term = not_fake
    if smoothing_target != 1.0:
        is_fake_real = nn.mean_all(_log_is_fake(logits_real, num_classes))
        real_term = nn.add(nn.scale(not_fake, smoothing_target),
                           nn.scale(is_fake_real, 1.0 - smoothing_target))
    fake_term = nn.mean_all(_log_is_fake(logits_fake, num_classes))
    return nn.add(real_term, fake_term)


def generator_loss(logits_fake: Tensor,
                   num_classes: int = NUM_MODES,
                   mode: str = "nonsaturating",
                   features_real: Tensor | None = None,
                   features_fake: Tensor | None = None) -> Tensor:
    """Generator objective.

    ``nonsaturating`` (default): -log(1 - p_fake(G(z))), pushing generated
    samples into the real classes.  ``feature_matching``: squared L2
    distance between the batch-mean last-hidden-layer features of real and
    generated samples.
    """
    if mode == "nonsaturating":
        return nn.mean_all(_log_not_fake(logits_fake, num_classes))
    if mode == "feature_matching":
        if features_real is None or features_fake is None:
            raise ValueError("feature matching needs real and fake features")
        diff = nn.sub(nn.mean_axis0(features_real), nn.mean_axis0(features_fake))
        return nn.sum_all(nn.square(diff))
    raise ValueError(f"unknown generator loss mode '{mode}'")
