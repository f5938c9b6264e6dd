import numpy as np
import pytest

from modegan import bundle, corpus, synth
from modegan.corpus import Mode


@pytest.fixture()
def f64():
    """Run a test in float64 (gradient checks need the headroom)."""
    from modegan import nn

    with nn.using_dtype(np.float64):
        yield


def small_corpus(seed: int = 3, trips_per_mode: int = 12,
                 duration: float = 150.0) -> bundle.SegmentBundle:
    """A fast corpus: trips_per_mode trips per mode, ~2 segments each."""
    cfg = synth.SynthConfig(
        n_trips={m: trips_per_mode for m in Mode},
        duration_s=(duration, duration),
        seed=seed,
    )
    segments = corpus.trips_to_segments(synth.generate_corpus(cfg))
    return bundle.SegmentBundle.from_segments(segments)


@pytest.fixture(scope="session")
def tiny_bundle() -> bundle.SegmentBundle:
    return small_corpus()
