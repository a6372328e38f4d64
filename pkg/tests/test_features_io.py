import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ccr.errors import FormatError, ValidationError
from ccr.features import (
    ChangeEntry,
    ChangeResult,
    Feature,
    GroundTruthBox,
    Superpixel,
    make_feature_set,
    read_feature_set,
    read_ground_truth,
    read_results,
    write_feature_set,
    write_ground_truth,
    write_results,
)


def _minimal_fs():
    return make_feature_set(
        "img0",
        [0.5, -1.25],
        4,
        [Superpixel(0, (10.0, 20.0))],
        [],
    )


def _fs_with_features():
    sps = [Superpixel(0, (1.0, 2.0)), Superpixel(1, (5.0, 6.0))]
    feats = [
        Feature((0.5, 0.25), 0, np.array([1.0, 2.0, 3.0])),
        Feature((4.0, 4.5), 1, np.array([0.1, -0.2, 1e-300])),
    ]
    return make_feature_set("imgA", [1.0], 3, sps, feats)


def test_read_empty_feature_set(tmp_path):
    p = tmp_path / "a.ccrfs"
    write_feature_set(_minimal_fs(), p)
    fs = read_feature_set(p)
    assert fs.features == ()
    assert len(fs.superpixels) == 1


def test_round_trip_identity(tmp_path):
    fs = _fs_with_features()
    p = tmp_path / "a.ccrfs"
    write_feature_set(fs, p)
    assert read_feature_set(p) == fs


def test_write_deterministic(tmp_path):
    fs = _fs_with_features()
    p1, p2 = tmp_path / "a", tmp_path / "b"
    write_feature_set(fs, p1)
    write_feature_set(fs, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_dangling_superpixel_rejected(tmp_path):
    p = tmp_path / "bad.ccrfs"
    p.write_text(
        "CCRFS 1\nimage_id x\nglobal_dim 1\nglobal 0.0\ndesc_dim 1\n"
        "num_superpixels 3\nsp 0 0.0 0.0\nsp 1 1.0 0.0\nsp 2 2.0 0.0\n"
        "num_features 1\nf 0.0 0.0 7 1.0\n"
    )
    with pytest.raises(FormatError, match="dangling superpixel"):
        read_feature_set(p)


def test_malformed_header(tmp_path):
    p = tmp_path / "bad.ccrfs"
    p.write_text("CCRXX 9\n")
    with pytest.raises(FormatError, match="header"):
        read_feature_set(p)


def test_wrong_dimension_count(tmp_path):
    p = tmp_path / "bad.ccrfs"
    p.write_text(
        "CCRFS 1\nimage_id x\nglobal_dim 2\nglobal 0.0\n"
    )
    with pytest.raises(FormatError, match="global"):
        read_feature_set(p)


def test_non_finite_rejected_on_read(tmp_path):
    p = tmp_path / "bad.ccrfs"
    p.write_text(
        "CCRFS 1\nimage_id x\nglobal_dim 1\nglobal nan\ndesc_dim 1\n"
        "num_superpixels 0\nnum_features 0\n"
    )
    with pytest.raises(FormatError, match="non-finite"):
        read_feature_set(p)


def test_nan_descriptor_refused_on_write(tmp_path):
    sps = [Superpixel(0, (0.0, 0.0))]
    fs = make_feature_set("x", [0.0], 2, sps, [])
    bad = fs.__class__(
        image_id="x",
        global_desc=fs.global_desc,
        desc_dim=2,
        superpixels=fs.superpixels,
        features=(Feature((0.0, 0.0), 0, np.array([float("nan"), 1.0])),),
    )
    with pytest.raises(ValidationError):
        write_feature_set(bad, tmp_path / "x.ccrfs")


def test_error_reports_line_number(tmp_path):
    p = tmp_path / "bad.ccrfs"
    p.write_text(
        "CCRFS 1\nimage_id x\nglobal_dim 1\nglobal zzz\n"
    )
    with pytest.raises(FormatError, match=r":4:"):
        read_feature_set(p)


_finite = st.floats(
    allow_nan=False, allow_infinity=False, min_value=-1e12, max_value=1e12
)
_pos = st.floats(allow_nan=False, allow_infinity=False, min_value=0, max_value=1e9)


@st.composite
def feature_sets(draw):
    desc_dim = draw(st.integers(1, 6))
    n_sp = draw(st.integers(1, 5))
    sps = [
        Superpixel(i, (draw(_finite), draw(_finite))) for i in range(n_sp)
    ]
    n_feat = draw(st.integers(0, 6))
    feats = [
        Feature(
            (draw(_pos), draw(_pos)),
            draw(st.integers(0, n_sp - 1)),
            np.array([draw(_finite) for _ in range(desc_dim)]),
        )
        for _ in range(n_feat)
    ]
    g_dim = draw(st.integers(0, 4))
    return make_feature_set(
        draw(st.text(alphabet="abcdef0123456789_", min_size=1, max_size=8)),
        [draw(_finite) for _ in range(g_dim)],
        desc_dim,
        sps,
        feats,
    )


@given(feature_sets())
def test_round_trip_property(tmp_path_factory, fs):
    p = tmp_path_factory.mktemp("fs") / "f.ccrfs"
    write_feature_set(fs, p)
    assert read_feature_set(p) == fs


def test_ground_truth_round_trip(tmp_path):
    boxes = [
        GroundTruthBox("q1", (1.0, 2.0, 3.0, 4.0)),
        GroundTruthBox("q2", (0.0, 0.0, 0.0, 0.0)),
    ]
    p = tmp_path / "gt.ccrgt"
    write_ground_truth(boxes, p)
    assert read_ground_truth(p) == boxes


def test_ground_truth_inverted_box_rejected(tmp_path):
    p = tmp_path / "gt.ccrgt"
    p.write_text("CCRGT 1\ngt q 5.0 0.0 1.0 2.0\n")
    with pytest.raises(FormatError, match="inverted"):
        read_ground_truth(p)


def test_results_round_trip(tmp_path):
    res = ChangeResult(
        "q",
        (
            ChangeEntry(0, (1.0, 2.0), 0.5, "refA"),
            ChangeEntry(1, (3.0, 4.0), math.inf, None),
        ),
    )
    p = tmp_path / "r.csv"
    write_results(res, p)
    back = read_results(p)
    assert len(back) == 1
    assert back[0] == res
    header = p.read_text().splitlines()[0]
    assert header == "query_id,feature_index,x,y,score,best_ref"
