import hashlib
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from moodkit.data_io import (SynthConfig, export_manifest, export_synthesized, generate_synthetic,
                             load_manifest)
from moodkit.errors import (AlignmentError, ChecksumError, ConfigError, DataError,
                            NonFiniteValueError, SplitTagError)
from moodkit.npmix import compute_prototypes, npmix_synthesize, NpMixConfig
from moodkit.types import OOD_LABEL, LabeledBatch, seeded_rng


def _tamper(d, name, text):
    """Replace a data file and refresh its checksum so validation reaches the content."""
    (d / name).write_text(text)
    doc = json.loads((d / "manifest.json").read_text())
    sha = hashlib.sha256((d / name).read_bytes()).hexdigest()
    for entry in doc["modalities"] + [doc["labels"], doc["splits"]]:
        if entry["path"] == name:
            entry["sha256"] = sha
    (d / "manifest.json").write_text(json.dumps(doc))


def _same(a, b):
    assert a.num_classes == b.num_classes
    np.testing.assert_array_equal(a.labels, b.labels)
    assert list(a.splits) == list(b.splits)
    for x, y in zip(a.modalities, b.modalities):
        assert x.tobytes() == y.tobytes()


def test_generator_layout(small_data):
    cfg = SynthConfig(id_classes=4, near_ood_classes=3, dims=[5, 4], samples_per_class=30, seed=3)
    assert list(small_data.dims) == [5, 4]
    assert small_data.count("id_train") == 4 * 21
    assert small_data.count("id_val") == 4 * 3
    assert small_data.count("id_test") == 4 * 6
    ood = small_data.split("ood_test")
    assert ood.n == 90 and np.all(ood.labels == OOD_LABEL)
    _same(generate_synthetic(cfg), small_data)


def test_noise_zero_collapses_classes():
    data = generate_synthetic(SynthConfig(id_classes=3, near_ood_classes=2, dims=[3, 2],
                                          samples_per_class=10, noise_sigma=0.0))
    for c in range(3):
        rows = data.modalities[0][data.labels == c]
        assert np.all(rows == rows[0])


def test_far_variant_is_shifted():
    base = dict(id_classes=3, near_ood_classes=3, dims=[8, 8], samples_per_class=50, seed=2)
    near = generate_synthetic(SynthConfig(**base))
    far = generate_synthetic(SynthConfig(**base, ood_variant="far", far_ood_shift=5.0))
    ids = near.labels >= 0
    for a, b in zip(near.modalities, far.modalities):
        np.testing.assert_array_equal(a[ids], b[ids])
    gap = far.split("ood_test").modalities[0].mean() - near.split("id_train").modalities[0].mean()
    assert gap > 3.0


@pytest.mark.parametrize("bad", [dict(id_classes=1), dict(modality_corr=1.5), dict(dims=[]),
                                 dict(samples_per_class=0), dict(ood_variant="mid")])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        SynthConfig(**bad)


def test_roundtrip(tmp_path, small_data):
    m = export_manifest(small_data, tmp_path)
    assert m.num_samples == small_data.n
    assert m.split_counts["ood_test"] == 90
    _same(load_manifest(tmp_path), small_data)
    _same(load_manifest(tmp_path / "manifest.json"), small_data)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=6, max_size=6))
def test_roundtrip_exact_floats(tmp_path_factory, values):
    mat = np.array(values).reshape(3, 2)
    b = LabeledBatch((mat,), np.array([0, 1, 0]), np.array(["id_train"] * 3, dtype=object), 2)
    d = tmp_path_factory.mktemp("rt")
    export_manifest(b, d)
    assert load_manifest(d).modalities[0].tobytes() == mat.tobytes()


def test_checksums_track_bytes(tmp_path, small_data):
    a = export_manifest(small_data, tmp_path / "a")
    b = export_manifest(small_data, tmp_path / "b")
    assert a.modalities == b.modalities
    mods = [m.copy() for m in small_data.modalities]
    mods[1][0, 0] += 1.0
    changed = LabeledBatch(tuple(mods), small_data.labels, small_data.splits,
                           small_data.num_classes)
    c = export_manifest(changed, tmp_path / "c")
    assert c.modalities[0]["sha256"] == a.modalities[0]["sha256"]
    assert c.modalities[1]["sha256"] != a.modalities[1]["sha256"]


def test_bad_checksum(tmp_path, small_data):
    export_manifest(small_data, tmp_path)
    p = tmp_path / "modality_0.csv"
    head, body = p.read_text().split("\n", 1)
    p.write_text(head + "\n" + body.replace("1", "2", 1))
    with pytest.raises(ChecksumError) as exc:
        load_manifest(tmp_path)
    assert str(exc.value.path) == str(p)


def test_alignment_error(tmp_path):
    mat = np.arange(8.0).reshape(4, 2)
    b = LabeledBatch((mat,), np.zeros(4, int), np.array(["id_train"] * 4, dtype=object), 1)
    export_manifest(b, tmp_path)
    lines = (tmp_path / "modality_0.csv").read_text().splitlines()
    _tamper(tmp_path, "modality_0.csv", "\n".join(lines[:-1]) + "\n")
    with pytest.raises(AlignmentError, match="3 rows"):
        load_manifest(tmp_path)


def test_unknown_split_tag(tmp_path, small_data):
    export_manifest(small_data, tmp_path)
    lines = (tmp_path / "splits.csv").read_text().splitlines()
    lines[6] = "5,test"
    _tamper(tmp_path, "splits.csv", "\n".join(lines) + "\n")
    with pytest.raises(SplitTagError) as exc:
        load_manifest(tmp_path)
    assert exc.value.row == 7 and "test" in str(exc.value)


def test_non_finite_value(tmp_path, small_data):
    export_manifest(small_data, tmp_path)
    lines = (tmp_path / "modality_1.csv").read_text().splitlines()
    lines[3] = ",".join(["nan"] + lines[3].split(",")[1:])
    _tamper(tmp_path, "modality_1.csv", "\n".join(lines) + "\n")
    with pytest.raises(NonFiniteValueError) as exc:
        load_manifest(tmp_path)
    assert exc.value.row == 4


def test_missing_file_and_bad_manifest(tmp_path, small_data):
    export_manifest(small_data, tmp_path)
    (tmp_path / "labels.csv").unlink()
    with pytest.raises(FileNotFoundError):
        load_manifest(tmp_path)
    (tmp_path / "manifest.json").write_text("{not json")
    with pytest.raises(DataError):
        load_manifest(tmp_path)


def test_empty_ood_split(tmp_path):
    mat = np.arange(6.0).reshape(3, 2)
    b = LabeledBatch((mat,), np.array([0, 1, 1]),
                     np.array(["id_train", "id_val", "id_test"], dtype=object), 2)
    m = export_manifest(b, tmp_path)
    assert m.split_counts["ood_test"] == 0
    assert load_manifest(tmp_path).count("ood_test") == 0


def test_export_synthesized(tmp_path, rng):
    Z = rng.normal(size=(8, 5))
    y = np.array([0, 1, 2, 3] * 2)
    s = npmix_synthesize(Z, y, compute_prototypes(Z, y), NpMixConfig(), seeded_rng(0), count=5)
    paths = export_synthesized(s, [3, 2], tmp_path)
    assert [p.name for p in paths][:2] == ["synth_modality_0.csv", "synth_modality_1.csv"]
    rows = (tmp_path / "synth_modality_1.csv").read_text().splitlines()
    assert rows[0] == "f0,f1" and len(rows) == 6
    prov = (tmp_path / "synth_provenance.csv").read_text().splitlines()
    assert len(prov) == 6 and float(prov[1].split(",")[-1]) == s.lam[0]
