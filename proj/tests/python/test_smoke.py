import json

import numpy as np
import pytest

import epb


def small_synth(**overrides):
    config = {"seed": 3, "n_train": 300, "n_test": 100, "rho_exact": 0.5, "dim": 8}
    config.update(overrides)
    return epb.synth_generate(json.dumps(config))


def test_drop_and_pairs():
    assert round(epb.drop_percent(92.57, 81.43), 2) == 12.03
    assert epb.classify_pair(12.03, 25.47) == "higher-significant"
    assert epb.classify_pair(0.95, 0.44) == "lower"
    assert epb.classify_pair(1.55, 1.55) == "equal"
    with pytest.raises(epb.DataError):
        epb.drop_percent(0.0, 1.0)


def test_metrics():
    report = epb.compute_metrics([0, 0, 1, 1], [0, 1, 0, 1], classes=2)
    assert report["accuracy"] == 50.0
    assert report["mcc"] == 0.0
    assert report["weighted_recall"] == report["accuracy"]
    multi = epb.compute_metrics([[0, 1]], [[0, 1]], classes=2, multi_label=True)
    assert multi["micro_f1"] == 100.0


def test_synth_audit_matches_ground_truth():
    dataset, archive, truth = small_synth(rho_exact=0.4)
    report = epb.audit(dataset, seed=3)
    for name, accuracy in truth.items():
        assert report[name]["accuracy"] == accuracy
    assert report["mem-exact"]["accuracy"] == 40.0
    kept, removed = epb.filter_test(dataset, "mem-exact")
    assert len(kept) + len(removed) == dataset.size("test")
    assert len(removed) == report["mem-exact"]["correct"]


def test_archive_and_pooling(tmp_path):
    dataset, archive, _ = small_synth()
    path = tmp_path / "a.epemb"
    archive.save(path)
    info = epb.validate_archive(path)
    assert info["dim"] == 8
    assert info["sentences"] == len(archive)
    loaded = epb.Archive.load(path)
    sid = loaded.sentence_ids()[0]
    m = loaded.matrix(sid)
    assert m.shape[1] == 8
    np.testing.assert_array_equal(loaded.pool(sid, (1, 2)), m[1])
    (tmp_path / "bad.epemb").write_bytes(b"junk")
    with pytest.raises(epb.DataError):
        epb.validate_archive(tmp_path / "bad.epemb")


def test_train_predict_and_codelength(tmp_path):
    dataset, archive, _ = small_synth()
    x, gold = epb.pool_examples(archive, dataset, "train")
    xt, gold_t = epb.pool_examples(archive, dataset, "test")
    model = epb.train_probe(x, gold, classes=4, lr=0.05, seed=1)
    assert model.parameter_count == 8 * 4 + 4
    pred = model.predict(xt)
    report = epb.compute_metrics(gold_t, pred, classes=4)
    assert report["accuracy"] > 80.0
    model.save(tmp_path / "m.epm")
    again = epb.ProbeModel.load(tmp_path / "m.epm")
    np.testing.assert_array_equal(again.params(), model.params())
    code = epb.two_part_codelength(model, x, gold)
    assert code["complexity_bits"] == pytest.approx(36 / 2 * np.log2(len(gold)))
    assert epb.complexity_bits(10, 10000) == pytest.approx(66.44, abs=0.005)
    one = epb.prequential_codelength(x, gold, classes=4, schedule="100")
    assert one["total_bits"] == len(gold) * 2.0


def test_dataset_operations(tmp_path):
    dataset, _, _ = small_synth()
    dataset.save(tmp_path / "d")
    loaded = epb.Dataset.load(tmp_path / "d")
    assert loaded.size("train") == 300
    split = loaded.make_dev_split(0.1, 7)
    assert split.size("dev") == 30
    assert split.size("train") == 270
    balanced = loaded.rebalance(1)
    labels = [e["labels"][0] for e in balanced.examples("test")]
    counts = {label: labels.count(label) for label in set(labels)}
    assert len(set(counts.values())) == 1


def test_pipeline(tmp_path):
    dataset, archive, _ = small_synth()
    dataset.save(tmp_path / "data")
    archive.save(tmp_path / "data" / "inf.epemb")
    (tmp_path / "run.json").write_text(json.dumps({
        "dataset": "data",
        "archives": [{"path": "data/inf.epemb", "name": "inf"}],
        "probe": {"epochs": 1},
    }))
    result = epb.run_pipeline(tmp_path / "run.json", tmp_path / "out")
    assert len(result["manifest_digest"]) == 64
    assert set(result["cells"][0]["drops"]) == {"mem-exact", "mem-freq", "mem-uniform"}
    assert (tmp_path / "out" / "table.md").exists()
