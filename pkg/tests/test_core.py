import struct

import numpy as np
import pytest

from openset_reid.core import (
    CACHE_MAGIC,
    Dataset,
    ImageRecord,
    Session,
    cache_size,
    load_manifest,
    manifest_from_directory,
    read_feature_cache,
    save_manifest,
    write_feature_cache,
)
from openset_reid.errors import (
    BadMagic,
    DimensionMismatch,
    DuplicateKey,
    MalformedRow,
    MissingFile,
    NonPositiveId,
    TruncatedFile,
    VersionUnsupported,
)

HEADER = "person_id,camera_id,session,frame,path\n"


def write(tmp_path, text, name="m.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_manifest_same_person_two_cameras(tmp_path):
    p = write(
        tmp_path,
        HEADER + "72,1,Test,15723,img/0072-01-01-15723.png\n72,4,Test,13521,img/0072-04-01-13521.png\n",
    )
    ds = load_manifest(p)
    assert len(ds) == 2
    assert ds.records[0].person_id == ds.records[1].person_id == 72
    assert {r.camera_id for r in ds.records} == {1, 4}
    assert ds.records[0].session is Session.TEST
    assert ds.records[0].source == "img/0072-01-01-15723.png"


def test_manifest_header_only(tmp_path):
    assert len(load_manifest(write(tmp_path, HEADER))) == 0


def test_manifest_duplicate_key(tmp_path):
    p = write(tmp_path, HEADER + "1,1,train,5,a.png\n1,1,train,5,b.png\n")
    with pytest.raises(DuplicateKey):
        load_manifest(p)


def test_manifest_same_frame_other_session_is_fine(tmp_path):
    p = write(tmp_path, HEADER + "1,1,train,5,a.png\n1,1,test,5,b.png\n")
    assert len(load_manifest(p)) == 2


@pytest.mark.parametrize(
    "row, exc, line",
    [
        ("0,1,train,5,a.png", NonPositiveId, 2),
        ("1,-2,train,5,a.png", NonPositiveId, 2),
        ("1,1,val,5,a.png", MalformedRow, 2),
        ("1,x,train,5,a.png", MalformedRow, 2),
        ("1,1,train,5", MalformedRow, 2),
    ],
)
def test_manifest_bad_rows(tmp_path, row, exc, line):
    with pytest.raises(exc) as info:
        load_manifest(write(tmp_path, HEADER + row + "\n"))
    assert info.value.line == line


def test_manifest_bad_header(tmp_path):
    with pytest.raises(MalformedRow):
        load_manifest(write(tmp_path, "a,b,c\n"))


def test_manifest_missing(tmp_path):
    with pytest.raises(MissingFile):
        load_manifest(tmp_path / "nope.csv")


def test_manifest_fixed_point(tmp_path):
    p = write(tmp_path, HEADER + "3,2,train,7,x/y.png\n9,1,test,0,z.png\n")
    first = load_manifest(p)
    save_manifest(first, tmp_path / "again.csv")
    second = load_manifest(tmp_path / "again.csv")
    assert first == second
    assert [r.source for r in first.records] == [r.source for r in second.records]


def _random_dataset(rng, n=5, d=7):
    recs = tuple(
        ImageRecord(int(rng.integers(1, 50)) + 100 * i, int(rng.integers(1, 7)), Session(i % 2), int(rng.integers(0, 99999)))
        for i in range(n)
    )
    return Dataset(recs, rng.standard_normal((n, d)).astype(np.float32))


def test_cache_size_arithmetic(tmp_path, rng):
    ds = Dataset(
        tuple(ImageRecord(i + 1, 1, Session.TEST, i) for i in range(3)),
        rng.random((3, 12750)).astype(np.float32),
    )
    write_feature_cache(ds, tmp_path / "c.bin")
    # 16-byte header, 3*12750 float32, three 13-byte index entries
    expected = 16 + 3 * 12750 * 4 + 3 * 13
    assert cache_size(3, 12750) == expected
    assert (tmp_path / "c.bin").stat().st_size == expected


def test_cache_round_trip_bit_exact(tmp_path, rng):
    ds = _random_dataset(rng)
    write_feature_cache(ds, tmp_path / "c.bin")
    back = read_feature_cache(tmp_path / "c.bin")
    assert back == ds
    assert back.features.tobytes() == ds.features.tobytes()
    assert [r.key for r in back.records] == [r.key for r in ds.records]


def test_cache_round_trip_extreme_values(tmp_path):
    vals = np.array([[0.0, -0.0, 1e-45, 3.4e38, -3.4e38, np.float32(np.pi)]], dtype=np.float32)
    ds = Dataset((ImageRecord(1, 1, Session.TRAIN, 0),), vals)
    write_feature_cache(ds, tmp_path / "c.bin")
    assert read_feature_cache(tmp_path / "c.bin").features.tobytes() == vals.tobytes()


def test_cache_bad_magic(tmp_path, rng):
    write_feature_cache(_random_dataset(rng), tmp_path / "c.bin")
    blob = bytearray((tmp_path / "c.bin").read_bytes())
    blob[0:4] = b"XXXX"
    (tmp_path / "c.bin").write_bytes(bytes(blob))
    with pytest.raises(BadMagic):
        read_feature_cache(tmp_path / "c.bin")


def test_cache_truncated(tmp_path, rng):
    write_feature_cache(_random_dataset(rng), tmp_path / "c.bin")
    blob = (tmp_path / "c.bin").read_bytes()
    (tmp_path / "c.bin").write_bytes(blob[:-5])
    with pytest.raises(TruncatedFile):
        read_feature_cache(tmp_path / "c.bin")
    (tmp_path / "c.bin").write_bytes(blob[:10])
    with pytest.raises(TruncatedFile):
        read_feature_cache(tmp_path / "c.bin")


def test_cache_version(tmp_path):
    (tmp_path / "c.bin").write_bytes(struct.pack("<4sIII", CACHE_MAGIC, 2, 0, 0))
    with pytest.raises(VersionUnsupported):
        read_feature_cache(tmp_path / "c.bin")


def test_cache_requires_features(tmp_path):
    with pytest.raises(DimensionMismatch):
        write_feature_cache(Dataset((ImageRecord(1, 1, Session.TRAIN, 0),)), tmp_path / "c.bin")


def test_dataset_rejects_misaligned_features():
    with pytest.raises(DimensionMismatch):
        Dataset((ImageRecord(1, 1, Session.TRAIN, 0),), np.zeros((2, 3)))


def test_record_invariants():
    with pytest.raises(ValueError):
        ImageRecord(0, 1, Session.TRAIN, 0)
    with pytest.raises(ValueError):
        ImageRecord(1, 1, Session.TRAIN, -1)


def test_manifest_from_release_names(tmp_path):
    for name in ("0072-01-01-15723.png", "0122-03-02-09210.png", "notes.txt"):
        (tmp_path / name).write_bytes(b"")
    ds = manifest_from_directory(tmp_path)
    keys = sorted(r.key for r in ds.records)
    assert keys == [(72, 1, Session.TEST, 15723), (122, 3, Session.TRAIN, 9210)]
