import json

import numpy as np
import pytest

from visubcat.dataset import (DatasetManifest, GroundTruth, ManifestEntry, ManifestError, load_manifest,
                              save_manifest)
from visubcat.detection import detect
from visubcat.imaging import BoundingBox, save_pgm
from visubcat.model import (MixtureModel, SubcategoryModel, TrainConfig, load_model, model_from_dict,
                            model_to_dict, save_model)

from conftest import random_image


def random_mixture(rng):
    subs = []
    for k, (w, h) in enumerate([(3, 3), (4, 2)]):
        sub = SubcategoryModel(k, w, h, rng.standard_normal((h, w, 31)) / 7,
                               rng.standard_normal((2 * h, 2 * w, 31)) / 7, rng.normal())
        sub.A, sub.B = -rng.random(), rng.normal()
        subs.append(sub)
    meta = {"objective_trace": [3.0, 2.5], "config": {"C": 0.05}, "assignments": np.arange(4)}
    params = {"cell_size": 8, "interval": 4, "use_fine": True, "whiten_mean": rng.random(5),
              "whiten_scale": rng.random(5)}
    return MixtureModel("obj", subs, params, meta, calibrated=True)


def test_model_round_trip_is_bit_exact(tmp_path, rng):
    model = random_mixture(rng)
    save_model(model, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    for a, b in zip(model.subcategories, back.subcategories):
        assert np.array_equal(a.root_w, b.root_w) and np.array_equal(a.fine_w, b.fine_w)
        assert (a.bias, a.A, a.B) == (b.bias, b.A, b.B)
    assert np.array_equal(back.feature_params["whiten_mean"], model.feature_params["whiten_mean"])
    img = random_image(rng, 96, 80)
    da = detect(img, model, raw_thresh=-5.0)
    db = detect(img, back, raw_thresh=-5.0)
    assert [(d.box, d.raw, d.score) for d in da] == [(d.box, d.raw, d.score) for d in db]


def test_root_only_model_round_trip(rng):
    sub = SubcategoryModel(0, 2, 2, rng.standard_normal((2, 2, 31)), None, 0.5)
    model = MixtureModel("obj", [sub], {"cell_size": 8, "interval": 4, "use_fine": False})
    back = model_from_dict(json.loads(json.dumps(model_to_dict(model))))
    assert back.subcategories[0].fine_w is None and not back.use_fine


def test_rejects_foreign_documents(rng):
    doc = model_to_dict(random_mixture(rng))
    with pytest.raises(ValueError):
        model_from_dict({**doc, "format": "other"})
    with pytest.raises(ValueError):
        model_from_dict({**doc, "version": 99})


def test_subcategory_shape_checks():
    with pytest.raises(ValueError):
        SubcategoryModel(0, 3, 2, np.zeros((3, 3, 31)), None)
    with pytest.raises(ValueError):
        SubcategoryModel(0, 2, 2, np.zeros((2, 2, 31)), np.zeros((2, 2, 31)))


@pytest.mark.parametrize("bad", [dict(C=0), dict(K=0), dict(init="random"), dict(cell_size=7),
                                 dict(val_fraction=1.0), dict(positive_windows="x")])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        TrainConfig(**bad)


def test_manifest_round_trip(tmp_path, rng):
    save_pgm(random_image(rng, 20, 20), tmp_path / "a.pgm")
    man = DatasetManifest([ManifestEntry("a", str(tmp_path / "a.pgm"), [
        GroundTruth("car", BoundingBox(1, 2, 10, 12), False, "sedan"),
        GroundTruth("car", BoundingBox(0, 0, 5, 5), True)])], ["car"])
    save_manifest(man, tmp_path / "m.json")
    back = load_manifest(tmp_path / "m.json")
    assert back.entries[0].objects == man.entries[0].objects
    assert back.entries[0].path == str(tmp_path / "a.pgm")
    assert back.entries[0].load().width == 20


def test_manifest_errors(tmp_path):
    with pytest.raises(ManifestError):
        DatasetManifest([ManifestEntry("a", "a.pgm", [GroundTruth("dog", BoundingBox(0, 0, 2, 2))])], ["car"])
    with pytest.raises(ManifestError):
        DatasetManifest([ManifestEntry("a", "a.pgm"), ManifestEntry("a", "b.pgm")], [])
    (tmp_path / "m.json").write_text(json.dumps({"categories": [], "entries": [{"path": "gone.pgm"}]}))
    with pytest.raises(ManifestError):
        load_manifest(tmp_path / "m.json")
    (tmp_path / "b.json").write_text(json.dumps(
        {"categories": ["c"], "entries": [{"path": "x.pgm", "objects": [{"category": "c", "box": [1, 2]}]}]}))
    with pytest.raises(ManifestError):
        load_manifest(tmp_path / "b.json", check_paths=False)


def test_split_keeps_order():
    man = DatasetManifest([ManifestEntry(f"i{n}", f"i{n}.pgm") for n in range(10)], [])
    head, tail = man.split(0.2)
    assert [e.id for e in head.entries] == [f"i{n}" for n in range(8)]
    assert [e.id for e in tail.entries] == ["i8", "i9"]
