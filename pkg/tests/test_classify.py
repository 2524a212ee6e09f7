import numpy as np
import pytest

from velfield.classify import (
    LabeledPixelSet, RectFeature, StrongClassifier, WeakClassifier, best_stump, build_labels,
    feature_image, load_classifier, read_labels, respond, sample_feature, save_classifier, train,
    write_labels,
)


def lattice_disc_count(r):
    return sum(1 for x in range(-r, r + 1) for y in range(-r, r + 1) if x * x + y * y <= r * r)


def test_foreground_disc_count():
    assert lattice_disc_count(6) == 113
    labels = build_labels([(50, 50)], (101, 101), subsample_seed=0)
    assert int(np.sum(labels.label > 0)) == 113


def test_intermediate_band_excluded():
    labels = build_labels([(50, 50)], (101, 101), subsample_seed=0)
    pts = set(zip(labels.x.tolist(), labels.y.tolist()))
    assert (60, 50) not in pts
    assert len(pts) == len(labels)  # no pixel in both classes
    d = np.hypot(labels.x - 50, labels.y - 50)
    assert np.all(d[labels.label > 0] <= 6)
    assert np.all(d[labels.label < 0] > 20)


def test_foreground_fraction_and_determinism():
    centres = [(30, 40), (120, 80), (200, 150)]
    a = build_labels(centres, (240, 320), subsample_seed=7)
    b = build_labels(centres, (240, 320), subsample_seed=7)
    assert abs(a.foreground_fraction - 0.15) < 0.005
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)


def test_full_scale_label_count():
    # 330 well separated cars on a full-size frame
    xs = np.linspace(60, 2500, 22)
    ys = np.linspace(60, 1860, 15)
    centres = [(x, y) for y in ys for x in xs]
    assert len(centres) == 330
    labels = build_labels(centres, (1920, 2560), subsample_seed=1)
    assert 0.8 * 300_000 <= len(labels) <= 1.2 * 300_000


def test_build_labels_errors():
    with pytest.raises(ValueError):
        build_labels([], (10, 10), 0)
    with pytest.raises(ValueError):
        build_labels([(20, 3)], (10, 10), 0)


def test_label_csv_roundtrip(tmp_path):
    labels = build_labels([(20, 20)], (60, 60), subsample_seed=0, image_id=3)
    write_labels(tmp_path / "l.csv", labels)
    back = read_labels(tmp_path / "l.csv")
    for k in ("image", "x", "y", "label"):
        assert np.array_equal(getattr(back, k), getattr(labels, k))
    assert (tmp_path / "l.csv").read_text().splitlines()[0] == "frame,x,y,label"


def test_sample_feature_statistics():
    rng = np.random.default_rng(0)
    feats = [sample_feature(rng) for _ in range(10_000)]
    for counts in ([len(f.positive) for f in feats], [len(f.negative) for f in feats]):
        hist = np.bincount(counts, minlength=6)[1:]
        # 3-sigma multinomial bound around 2000 per bin
        sd = np.sqrt(10_000 * 0.2 * 0.8)
        assert hist.sum() == 10_000
        assert np.all(np.abs(hist - 2000) <= 3 * sd)
    # min and max of a corner pair together are exactly the two raw draws
    lo = np.array([f.positive[0][0] for f in feats], dtype=float)
    hi = np.array([f.positive[0][2] - 1 for f in feats], dtype=float)
    raw = np.concatenate([lo, hi])
    assert abs(raw.var() - 100) < 5


def test_sample_feature_deterministic():
    a = sample_feature(np.random.default_rng(42))
    b = sample_feature(np.random.default_rng(42))
    assert a == b


def test_feature_window_validation():
    with pytest.raises(ValueError):
        RectFeature((), ((0, 0, 1, 1),))
    with pytest.raises(ValueError):
        RectFeature(((0, 0, 50, 1),), ((0, 0, 1, 1),))
    with pytest.raises(ValueError):
        RectFeature(((2, 0, 1, 1),), ((0, 0, 1, 1),))


def loop_feature(img, feat, x, y):
    h, w = img.shape
    total = 0.0
    for sign, group in ((1, feat.positive), (-1, feat.negative)):
        for x0, y0, x1, y1 in group:
            for yy in range(y + y0, y + y1):
                for xx in range(x + x0, x + x1):
                    if 0 <= yy < h and 0 <= xx < w:
                        total += sign * img[yy, xx]
    return total


def random_classifier(seed, rounds=12):
    rng = np.random.default_rng(seed)
    return StrongClassifier([
        WeakClassifier(sample_feature(rng), float(rng.normal(0, 5)), int(rng.choice([-1, 1])), float(rng.random()))
        for _ in range(rounds)])


def test_respond_matches_loop_oracle():
    rng = np.random.default_rng(1)
    img = rng.random((45, 60))
    clf = random_classifier(2)
    resp = respond(clf, img)
    for x, y in [(0, 0), (59, 44), (30, 20), (3, 40), (55, 2)]:
        expect = 0.0
        for wc in clf.rounds:
            v = loop_feature(img, wc.feature, x, y)
            expect += wc.alpha * (wc.polarity if v > wc.threshold else -wc.polarity)
        assert abs(resp[y, x] - expect) < 1e-9


def test_feature_image_matches_loop_oracle():
    rng = np.random.default_rng(3)
    img = rng.random((30, 30))
    feat = sample_feature(rng)
    fimg = feature_image(feat, img)
    for x, y in [(0, 0), (15, 15), (29, 3)]:
        assert abs(fimg[y, x] - loop_feature(img, feat, x, y)) < 1e-9


def test_respond_constant_on_zero_image():
    resp = respond(random_classifier(4), np.zeros((20, 25)))
    assert np.all(resp == resp[0, 0])


def test_respond_shift_equivariance():
    rng = np.random.default_rng(5)
    big = rng.random((140, 140))
    clf = random_classifier(6)
    a = respond(clf, big[:120, :120])
    b = respond(clf, big[3:123, 5:125])
    # interior only: at least 41 px from every border of both crops
    assert np.allclose(a[44:76, 46:76], b[41:73, 41:71], atol=1e-9)
    assert np.array_equal(respond(clf, big), respond(clf, big))


def stump_oracle(values, y, w):
    best = (np.inf, None, None)
    cands = np.unique(values)
    thrs = [cands[0] - 1.0] + [0.5 * (a + b) for a, b in zip(cands, cands[1:])] + [cands[-1] + 1.0]
    for pol in (1, -1):
        for t in thrs:
            pred = np.where(values > t, pol, -pol)
            err = w[pred != y].sum()
            if err < best[0] - 1e-15:
                best = (err, t, pol)
    return best


def test_best_stump_matches_exhaustive():
    rng = np.random.default_rng(7)
    for _ in range(30):
        n = 40
        values = rng.integers(0, 15, n).astype(float)
        y = rng.choice([-1.0, 1.0], n)
        w = rng.random(n)
        w /= w.sum()
        err, thr, pol = best_stump(values, y, w)
        oerr, _, _ = stump_oracle(values, y, w)
        assert abs(err - oerr) < 1e-12
        pred = np.where(values > thr, pol, -pol)
        assert abs(w[pred != y].sum() - err) < 1e-12


def block_training_set():
    img = np.zeros((300, 300))
    img[50:250, 50:250] = 1.0
    fg = [(150 + dx, 150 + dy) for dx in range(-3, 4) for dy in range(-3, 4)]
    bg = [(x, y) for x in (5, 10, 290, 295) for y in range(5, 295, 20)]
    xs = np.array([p[0] for p in fg + bg])
    ys = np.array([p[1] for p in fg + bg])
    lab = np.array([1] * len(fg) + [-1] * len(bg))
    return LabeledPixelSet(np.zeros(len(xs), dtype=np.int64), xs, ys, lab), {0: img}


def test_train_separable_toy():
    labels, images = block_training_set()
    clf = train(labels, images, n_rounds=1, candidate_pool_size=5, rng=0)
    assert len(clf) == 1
    assert clf.history[0][0] == 0.0
    resp = respond(clf, images[0])
    assert np.all(np.sign(resp[labels.y, labels.x]) == labels.label)


def test_train_loss_monotone_and_weights():
    rng = np.random.default_rng(8)
    img = rng.random((80, 80)) * 0.3
    img[30:38, 20:36] += 0.6
    labels = build_labels([(27.5, 33.5)], img.shape, subsample_seed=1)
    noisy = LabeledPixelSet(labels.image, labels.x, labels.y, labels.label.copy())
    flip = rng.random(len(noisy)) < 0.1
    noisy.label[flip] *= -1
    clf = train(noisy, [img], n_rounds=25, candidate_pool_size=20, rng=3)
    errs = [e for e, _ in clf.history]
    losses = [l for _, l in clf.history]
    assert all(e < 0.5 for e in errs)
    assert all(wc.alpha >= 0 for wc in clf.rounds)
    assert all(b <= a + 1e-12 for a, b in zip([1.0] + losses, losses))
    # recompute the loss from the response image at the labelled pixels
    resp = respond(clf, img)
    y = noisy.label.astype(float)
    assert abs(np.mean(np.exp(-y * resp[noisy.y, noisy.x])) - losses[-1]) < 1e-9


def test_train_reproducible():
    labels, images = block_training_set()
    a = train(labels, images, n_rounds=3, candidate_pool_size=10, rng=11)
    b = train(labels, images, n_rounds=3, candidate_pool_size=10, rng=11)
    assert a.rounds == b.rounds


def test_train_rejects_single_class():
    labels, images = block_training_set()
    only_fg = labels.subset(labels.label > 0)
    with pytest.raises(ValueError):
        train(only_fg, images, n_rounds=1)


def test_classifier_file_roundtrip(tmp_path):
    clf = random_classifier(9, rounds=7)
    save_classifier(tmp_path / "m.txt", clf)
    back = load_classifier(tmp_path / "m.txt")
    assert back.rounds == clf.rounds
    (tmp_path / "bad.txt").write_text("1.0 1 0.5 P 1 0 0 1\n")
    with pytest.raises(ValueError):
        load_classifier(tmp_path / "bad.txt")
