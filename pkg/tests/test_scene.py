import json

import numpy as np
import pytest

import visubcat.scene as scene
from visubcat.features import GIST_DIM
from visubcat.imaging import save_pgm
from visubcat.model import TrainConfig
from visubcat.scene import (SceneClassifier, SceneDataError, SceneExample, SceneModel, classify_scene,
                            evaluate_scene, load_scene_manifest, load_scene_model, read_descriptor_cache,
                            save_scene_manifest, save_scene_model, scene_average_precision, split_half,
                            synthetic_scene_set, train_scene, write_descriptor_cache)

from conftest import random_image

CFG = TrainConfig(kmeans_restarts=3)


@pytest.fixture(scope="module")
def small_set():
    return split_half(synthetic_scene_set(600, dim=40, seed=2))


def test_synthetic_set_is_seeded():
    a = synthetic_scene_set(50, dim=20, seed=4)
    b = synthetic_scene_set(50, dim=20, seed=4)
    assert all(np.array_equal(x.descriptor, y.descriptor) and x.subordinate == y.subordinate
               for x, y in zip(a, b))
    assert {e.category for e in a} <= {"scene0", "scene1", "scene2"}
    assert a[0].descriptor.shape == (20,)
    assert synthetic_scene_set(2)[0].descriptor.shape == (GIST_DIM,)


def test_subcategories_beat_single_classifier(small_set):
    train, test = small_set
    one = evaluate_scene(train_scene(train, 1, "kmeans", CFG), test).mean_ap
    two = evaluate_scene(train_scene(train, 2, "kmeans", CFG), test).mean_ap
    labels = evaluate_scene(train_scene(train, 2, "labels", CFG), test).mean_ap
    assert two >= one + 0.05
    assert abs(labels - two) <= 0.03


def test_label_init_follows_subordinates(small_set):
    model = train_scene(small_set[0], 5, "labels", CFG)
    for cat, clfs in zip(model.categories, model.classifiers):
        assert [c.label for c in clfs] == [f"{cat}.mode0", f"{cat}.mode1"]
    with pytest.raises(SceneDataError):
        train_scene([SceneExample(np.ones(3), "a"), SceneExample(np.zeros(3), "b")], 2, "labels", CFG)


def test_same_category_examples_are_dont_care(small_set, monkeypatch):
    train = small_set[0]
    seen = []
    real = scene.train_linear_svm

    def spy(pos, neg, C, **kw):
        seen.append((pos, neg))
        return real(pos, neg, C, **kw)

    monkeypatch.setattr(scene, "train_linear_svm", spy)
    model = train_scene(train, 2, "kmeans", CFG, rounds=0)
    n_fit = len(train) - model.meta["n_val"]
    X = scene._stack(train[:n_fit])
    Xw = (X - model.mean) / model.scale
    cats = np.array([e.category for e in train[:n_fit]])
    rows = {row.tobytes(): c for row, c in zip(Xw, cats)}
    assert len(seen) == 6
    for i, (pos, neg) in enumerate(seen):
        cat = model.categories[i // 2]
        assert all(rows[r.tobytes()] == cat for r in pos)
        assert all(rows[r.tobytes()] != cat for r in neg)
        assert len(neg) == int((cats != cat).sum())
    # the two subcategories of a category split its members between them
    assert len(seen[0][0]) + len(seen[1][0]) == int((cats == model.categories[0]).sum())


def flat_model(categories, K, dim=3):
    clfs = [[SceneClassifier(np.zeros(dim), 0.0) for _ in range(K)] for _ in categories]
    return SceneModel(list(categories), clfs, np.zeros(dim), np.ones(dim))


def test_classify_ties_prefer_first_pair():
    model = flat_model(["a", "b"], 3)
    assert classify_scene(np.ones(3), model) == ("a", 0, 0.5)
    model.classifiers[1][2].b = 1.0
    model.classifiers[1][2].A = -1.0
    cat, k, g = classify_scene(np.ones(3), model)
    assert (cat, k) == ("b", 2) and g == pytest.approx(1 / (1 + np.exp(-1)))
    with pytest.raises(ValueError):
        classify_scene(np.ones(4), model)


def test_degenerate_classifier_scores_zero():
    model = flat_model(["a", "b"], 1)
    model.classifiers[0][0].degenerate = True
    assert classify_scene(np.ones(3), model)[0] == "b"


def test_scene_ap_by_hand():
    scores = np.array([[0.9, 0.1], [0.8, 0.7], [0.2, 0.6], [0.1, 0.9]])
    labels = ["a", "b", "a", "b"]
    rep = scene_average_precision(scores, labels, ["a", "b"], "all-points")
    # a ranks (a, b, a, b): AP = (1 + 2/3) / 2; b ranks (b, b, a, a): AP = 1
    assert rep.per_category["a"] == pytest.approx(5 / 6, abs=1e-15)
    assert rep.per_category["b"] == 1.0
    assert rep.mean_ap == pytest.approx(11 / 12)
    with pytest.raises(ValueError):
        scene_average_precision(scores[:3], labels, ["a", "b"])
    bad = scores.copy()
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        scene_average_precision(bad, labels, ["a", "b"])


def test_descriptor_cache_round_trip(tmp_path, rng):
    X = rng.standard_normal((7, 13))
    path = tmp_path / "d.bin"
    write_descriptor_cache(path, X)
    assert np.array_equal(read_descriptor_cache(path), X)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(SceneDataError):
        read_descriptor_cache(path)
    path.write_bytes(b"NOTGIST!" + bytes(16))
    with pytest.raises(SceneDataError):
        read_descriptor_cache(path)


def test_manifest_round_trip(tmp_path):
    ex = synthetic_scene_set(20, dim=12, seed=1)
    save_scene_manifest(ex, tmp_path / "scenes.json")
    back = load_scene_manifest(tmp_path / "scenes.json")
    assert [(e.category, e.subordinate) for e in back] == [(e.category, e.subordinate) for e in ex]
    assert all(np.array_equal(a.descriptor, b.descriptor) for a, b in zip(back, ex))


def test_manifest_from_images(tmp_path, rng):
    for i in range(2):
        save_pgm(random_image(rng, 48, 40), tmp_path / f"im{i}.pgm")
    doc = [{"image": "im0.pgm", "category": "a"}, {"image": "im1.pgm", "category": "b", "subordinate": "b1"}]
    (tmp_path / "m.json").write_text(json.dumps(doc))
    ex = load_scene_manifest(tmp_path / "m.json")
    assert ex[0].descriptor.shape == (GIST_DIM,) and ex[1].subordinate == "b1"
    (tmp_path / "bad.json").write_text(json.dumps([{"category": "a"}]))
    with pytest.raises(SceneDataError):
        load_scene_manifest(tmp_path / "bad.json")


def test_scene_model_round_trip(tmp_path, small_set):
    train, test = small_set
    model = train_scene(train, 2, "kmeans", CFG)
    save_scene_model(model, tmp_path / "s.json")
    back = load_scene_model(tmp_path / "s.json")
    X = scene._stack(test)
    assert np.array_equal(scene.category_scores(model, X), scene.category_scores(back, X))
