"""Acceptance gate: every release criterion, one test each, in order.

Each test prints one PASS line (visible with ``pytest -s``) after its
assertions hold; a failing criterion fails its test.  The heavyweight
experiments (criteria 5, 6, 8) share one session-scoped synthetic corpus
of 4x1000 balanced segments built at seed 7.
"""

import math
import time

import numpy as np
import pytest

from helpers import (angle_diff_deg, finite_diff_grad, max_rel_err,
                     oracle_bearing, oracle_distance, random_point)
from modegan import corpus, losses, models, nn, synth, train
from modegan.bundle import SegmentBundle
from modegan.corpus import Mode, assign_folds
from modegan.geokin import EARTH_RADIUS_M, GpsPoint
from modegan.nn import Tensor
from modegan.train import TrainConfig, train_cnn, train_sgan


def report(criterion: int, text: str) -> None:
    print(f"\nACCEPTANCE {criterion}: PASS - {text}")


@pytest.fixture(scope="module")
def corpus7():
    """Balanced 4x1000-segment corpus at seed 7 with its 5-fold split."""
    cfg = synth.SynthConfig(
        n_trips={m: 250 for m in Mode},
        duration_s=(280.0, 280.0),
        seed=7,
    )
    segments = corpus.trips_to_segments(synth.generate_corpus(cfg))
    bundle = SegmentBundle.from_segments(segments)
    assert len(bundle) == 4000
    for m in Mode:
        assert int((bundle.labels == m.value).sum()) == 1000
    folds = assign_folds(segments, k=5, seed=7)
    return bundle, folds


@pytest.fixture(scope="module")
def cnn_run(corpus7):
    """Criterion 5 experiment, shared with the determinism rerun of 8."""
    bundle, folds = corpus7
    config = TrainConfig(model="A", epochs=10, batch_size=16, seed=7)
    started = time.monotonic()
    result = train_cnn(config, bundle, folds, 0)
    elapsed = time.monotonic() - started
    return config, result, elapsed


def test_criterion_1_shape_conformance():
    started = time.monotonic()
    spec = models.build_model("E")
    shapes = models.classifier_trace(spec)
    conv_chain = []
    for s in shapes:
        if len(s) == 2 and (not conv_chain or s != conv_chain[-1]):
            conv_chain.append(s)
    assert conv_chain == [(35, 128), (18, 256), (9, 512)]
    assert (4608,) in shapes
    assert shapes[-1] == (5,)

    nets = models.build_networks(spec, seed=0)
    x = np.zeros((2, 70, 5), dtype=np.float32)
    logits = models.discriminator_forward(nets["discriminator"], x)
    assert logits.shape == (2, 5)
    z = models.sample_noise(np.random.default_rng(0), 2)
    fake = models.generator_forward(nets["generator"], z)
    assert fake.data.shape == (2, 70, 5)
    elapsed = time.monotonic() - started
    assert elapsed < 1.0
    report(1, f"model E chain 70x5 -> 35x128 -> 18x256 -> 9x512 -> 4608 -> 5, "
              f"generator -> 70x5 ({elapsed:.2f}s)")


def test_criterion_2_gradient_oracle(f64):
    started = time.monotonic()
    eps, tol = 1e-6, 1e-4
    checked = 0

    def check(build_loss, arrays, seed):
        nonlocal checked
        tensors = {k: Tensor(v.copy(), requires_grad=True)
                   for k, v in arrays.items()}
        build_loss(**tensors).backward()
        for name, arr in arrays.items():
            def at(a, _n=name):
                subst = {k: Tensor(v.copy()) for k, v in arrays.items()}
                subst[_n] = Tensor(a)
                return float(build_loss(**subst).data)

            fd = finite_diff_grad(at, arr, eps=eps)
            err = max_rel_err(tensors[name].grad, fd, floor=1e-6)
            assert err < tol, f"{name} rel err {err} at seed {seed}"
            checked += 1

    for seed in range(5):
        rng = np.random.default_rng(seed)
        x3 = rng.normal(size=(2, 11, 3))
        probe = rng.normal(size=(2, 11, 3))

        # conv1d (both strides used by the models)
        check(lambda x, w, b: nn.mean_all(nn.square(
            nn.conv1d(x, w, b, stride=1 + seed % 2))),
            {"x": x3, "w": rng.normal(size=(4, 3, 5)),
             "b": rng.normal(size=(5,))}, seed)
        # frac_conv1d
        check(lambda x, w, b: nn.mean_all(nn.square(
            nn.frac_conv1d(x, w, b, stride=2, target_len=13 + seed % 2))),
            {"x": rng.normal(size=(2, 7, 4)), "w": rng.normal(size=(4, 3, 4)),
             "b": rng.normal(size=(3,))}, seed)
        # maxpool1d
        check(lambda x: nn.mean_all(nn.square(
            nn.maxpool1d(x, window=4, stride=2))), {"x": x3}, seed)
        # dense
        check(lambda x, w, b: nn.mean_all(nn.square(
            nn.add(nn.matmul(x, w), b))),
            {"x": rng.normal(size=(3, 6)), "w": rng.normal(size=(6, 4)),
             "b": rng.normal(size=(4,))}, seed)
        # batchnorm (linear probe: symmetric losses are flat in x here)
        check(lambda x, g, b: nn.sum_all(nn.mul(
            nn.batchnorm_train(x, g, b)[0], Tensor(probe))),
            {"x": x3, "g": rng.normal(size=(3,)) + 1.0,
             "b": rng.normal(size=(3,))}, seed)
        # dropout (mask fixed by re-seeding inside the loss)
        check(lambda x: nn.mean_all(
            nn.dropout(x, 0.5, np.random.default_rng(1000 + seed))),
            {"x": rng.normal(size=(4, 6))}, seed)
        # leaky_relu / tanh / flatten (reshape)
        check(lambda x: nn.mean_all(nn.square(nn.leaky_relu(x, 0.2))),
              {"x": x3}, seed)
        check(lambda x: nn.mean_all(nn.square(nn.tanh_act(x))), {"x": x3}, seed)
        check(lambda x: nn.mean_all(nn.square(nn.flatten(x))), {"x": x3}, seed)
        # project_reshape (dense + reshape to a sequence)
        check(lambda z, w, b: nn.mean_all(nn.square(nn.reshape(
            nn.add(nn.matmul(z, w), b), (2, 3, 4)))),
            {"z": rng.normal(size=(2, 5)), "w": rng.normal(size=(5, 12)),
             "b": rng.normal(size=(12,))}, seed)

        # composite losses on logits
        y = rng.integers(0, 4, size=4)
        check(lambda l: losses.supervised_loss(l, y),
              {"l": rng.normal(size=(4, 5))}, seed)
        fake_logits = rng.normal(size=(4, 5))
        check(lambda l: losses.unsupervised_loss(
            l, Tensor(fake_logits), smoothing_target=0.9),
            {"l": rng.normal(size=(4, 5))}, seed)
        check(lambda l: losses.unsupervised_loss(
            Tensor(fake_logits), l, smoothing_target=0.9),
            {"l": rng.normal(size=(4, 5))}, seed)

    elapsed = time.monotonic() - started
    assert elapsed < 120.0
    report(2, f"{checked} gradient checks < 1e-4 over 5 seeds per op "
              f"({elapsed:.1f}s)")


def test_criterion_3_geodesy_oracle():
    from modegan.geokin import bearing, haversine_distance

    rng = np.random.default_rng(33)
    for _ in range(1000):
        a, b = random_point(rng), random_point(rng)
        d = haversine_distance(a, b)
        want = oracle_distance(a, b)
        assert abs(d - want) <= 1e-9 * max(1.0, want)
        assert angle_diff_deg(bearing(a, b), oracle_bearing(a, b)) <= 1e-9 * 360

    origin = GpsPoint.from_degrees(0.0, 0.0, 0.0)
    assert abs(bearing(origin, GpsPoint.from_degrees(1, 0, 0)) - 0.0) < 1e-9
    assert abs(bearing(origin, GpsPoint.from_degrees(0, 1, 0)) - 90.0) < 1e-9
    assert abs(bearing(origin, GpsPoint.from_degrees(-1, 0, 0)) - 180.0) < 1e-9
    report(3, "haversine/bearing match the 3-D vector oracle on 1000 pairs; "
              "cardinal bearings exact")


def test_criterion_4_kinematics_sanity():
    speed, dt = 12.5, 1.0
    dlon = math.degrees(speed * dt / EARTH_RADIUS_M)
    points = [GpsPoint.from_degrees(0.0, i * dlon, i * dt) for i in range(150)]
    trip = corpus.Trip("const", points, Mode.car)
    segments = corpus.segmentize(trip)
    assert len(segments) == 3
    bundle = SegmentBundle.from_segments(segments)
    for i in range(len(bundle)):
        v = int(bundle.valid_lens[i])
        assert np.abs(bundle.values[i, :v, 2]).max() < 1e-6  # accel
        assert np.abs(bundle.values[i, :v, 3]).max() < 1e-6  # jerk
        assert np.abs(bundle.values[i, :v, 4]).max() < 1e-6  # bearing rate
    report(4, "constant-velocity trip: |accel|, |jerk|, bearing rate < 1e-6 "
              "through segmentation")


def test_criterion_5_cnn_end_to_end(cnn_run):
    config, result, elapsed = cnn_run
    assert result.metrics.accuracy >= 0.90
    assert elapsed <= 600.0
    report(5, f"model A, 4x1000 segments, seed 7, 10 epochs: validation "
              f"accuracy {result.metrics.accuracy:.4f} >= 0.90 "
              f"({elapsed:.0f}s)")


def test_criterion_6_sgan_end_to_end(corpus7):
    bundle, folds = corpus7
    base_cfg = TrainConfig(model="A", epochs=30, batch_size=16,
                           label_fraction=0.2, seed=7)
    baseline = train_cnn(base_cfg, bundle, folds, 0)

    gan_cfg = TrainConfig(model="D", epochs=30, batch_size=16,
                          label_fraction=0.2, seed=7)
    started = time.monotonic()
    result = train_sgan(gan_cfg, bundle, folds, 0)
    elapsed = time.monotonic() - started
    assert elapsed <= 2700.0

    trace = result.trace
    for series in (trace.supervised, trace.unsupervised, trace.total,
                   trace.generator):
        assert all(np.isfinite(v) for v in series)

    csv_lines = trace.to_csv().strip().split("\n")
    assert csv_lines[0] == "step,supervised,unsupervised,total,generator"
    for line in csv_lines[1:]:
        _, sup, unsup, total, _ = line.split(",")
        assert float(sup) + float(unsup) == float(total)  # bit-exact

    floor = baseline.metrics.accuracy - 0.02
    assert result.metrics.accuracy >= floor, (
        f"SGAN {result.metrics.accuracy:.4f} below CNN-at-20%-labels "
        f"{baseline.metrics.accuracy:.4f} - 2 points"
    )
    # the adversarial term dominating the supervised one is reported, not
    # asserted: it is an observation about one dataset's run
    unsup_higher = float(np.mean(trace.unsupervised)) > float(
        np.mean(trace.supervised))
    report(6, f"model D at 20% labels: accuracy {result.metrics.accuracy:.4f} "
              f"vs CNN baseline {baseline.metrics.accuracy:.4f} "
              f"(floor {floor:.4f}); losses finite; total bit-exact; "
              f"mean unsupervised > supervised: {unsup_higher} "
              f"({elapsed:.0f}s)")


def test_criterion_7_cross_validation_laws():
    bundle = SegmentBundle.from_segments(corpus.trips_to_segments(
        synth.generate_corpus(synth.SynthConfig(
            n_trips={m: 10 for m in Mode}, duration_s=(150.0, 150.0), seed=7))
    ))
    config = TrainConfig(model="A", epochs=1, batch_size=8, seed=7, k_folds=5)
    segments = bundle.to_segments()
    folds = assign_folds(segments, k=5, seed=7)

    # partition: every segment lands in exactly one validation fold
    val_sets = [set(folds.val_indices(f).tolist()) for f in range(5)]
    union = set().union(*val_sets)
    assert union == set(range(len(bundle)))
    assert sum(len(s) for s in val_sets) == len(bundle)

    # fold sizes differ by at most one trip
    trips_per_fold = [
        len({segments[i].source_trip for i in val_sets[f]}) for f in range(5)
    ]
    assert max(trips_per_fold) - min(trips_per_fold) <= 1

    per_fold, aggregate = train.cross_validate(config, bundle)
    assert len(per_fold) == 5
    assert sum(m.support for m in per_fold) == int((bundle.labels >= 0).sum())
    accs = np.array([m.accuracy for m in per_fold])
    supports = np.array([m.support for m in per_fold], dtype=np.float64)
    want = float((accs * supports).sum() / supports.sum())
    assert abs(aggregate["accuracy_weighted_mean"] - want) < 1e-12
    report(7, f"5-fold partition exact, trip counts per fold {trips_per_fold}, "
              f"weighted aggregate matches to 1e-12")


def test_criterion_8_determinism(corpus7, cnn_run):
    bundle, folds = corpus7
    config, first, _ = cnn_run
    second = train_cnn(config, bundle, folds, 0)
    assert second.metrics.to_json().encode() == first.metrics.to_json().encode()
    assert second.trace.to_csv().encode() == first.trace.to_csv().encode()
    report(8, "criterion-5 rerun at the same seed: metrics JSON and loss "
              "trace CSV byte-identical")


def test_criterion_9_adjoint_identity(f64):
    rng = np.random.default_rng(99)
    chain_geometries = [(70, 35), (35, 18), (18, 9), (9, 5)]
    channel_pool = [5, 32, 64, 128, 256, 512]
    for draw in range(100):
        length, out_len = chain_geometries[draw % len(chain_geometries)]
        cin = int(rng.choice(channel_pool[:4]))
        cout = int(rng.choice(channel_pool[:4]))
        x = Tensor(rng.normal(size=(2, length, cin)))
        w = Tensor(rng.normal(size=(8, cin, cout)) / math.sqrt(8 * cin))
        y = Tensor(rng.normal(size=(2, out_len, cout)))
        lhs = float((nn.conv1d(x, w, stride=2).data * y.data).sum())
        rhs = float((x.data * nn.frac_conv1d(
            y, w, stride=2, target_len=length).data).sum())
        assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))
    report(9, "conv/frac-conv transpose identity within 1e-10 on 100 draws "
              "along the model chains")


def test_criterion_10_loss_arithmetic(f64):
    row = np.log(np.array([0.2, 0.2, 0.2, 0.2, 0.2]))
    logits = Tensor(np.tile(row, (4, 1)))
    unsup = losses.unsupervised_loss(logits, Tensor(np.tile(row, (4, 1))))
    assert float(unsup.data) == pytest.approx(1.83258, abs=1e-5)

    sup = losses.supervised_loss(Tensor(np.zeros((4, 5))),
                                 np.array([0, 1, 2, 3]))
    assert float(sup.data) == pytest.approx(math.log(4.0), abs=1e-5)
    report(10, "unsupervised(p_fake=0.2, 0.2) = 1.83258 +- 1e-5; "
               "supervised(uniform) = ln 4 +- 1e-5")
