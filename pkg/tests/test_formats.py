import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evbridge import formats as fm
from evbridge.config import PipelineConfig
from evbridge.errors import ValidationError
from evbridge.events import EventHistogram, EventStream, two_frame_oracle
from evbridge.fields import ScalarField, VectorField

seeds = st.integers(0, 2**31 - 1)
sizes = st.integers(1, 9)


def _cycle(tmp_path, write, read, obj, name):
    a, b = tmp_path / f"a_{name}", tmp_path / f"b_{name}"
    write(a, obj)
    write(b, read(a))
    return a.read_bytes(), b.read_bytes()


@settings(max_examples=25, deadline=None)
@given(seeds, sizes, sizes)
def test_pgm_roundtrip(tmp_path_factory, seed, w, h):
    tmp = tmp_path_factory.mktemp("pgm")
    img = ScalarField(np.random.default_rng(seed).uniform(0, 1, size=(h, w)))
    a, b = _cycle(tmp, fm.write_pgm, fm.read_pgm, img, "x.pgm")
    assert a == b
    back = fm.read_pgm(tmp / "a_x.pgm")
    assert np.max(np.abs(back.data - img.data)) <= 0.5 / 255 + 1e-12


@settings(max_examples=25, deadline=None)
@given(seeds, sizes, sizes)
def test_pfm_roundtrip(tmp_path_factory, seed, w, h):
    tmp = tmp_path_factory.mktemp("pfm")
    data = np.random.default_rng(seed).normal(scale=10, size=(h, w)).astype(np.float32).astype(np.float64)
    a, b = _cycle(tmp, fm.write_pfm, fm.read_pfm, ScalarField(data), "x.pfm")
    assert a == b
    assert np.array_equal(fm.read_pfm(tmp / "a_x.pfm").data, data)


def test_pfm_layout(tmp_path):
    fm.write_pfm(tmp_path / "x.pfm", np.array([[1.0, 2.0], [3.0, 4.0]]))
    raw = (tmp_path / "x.pfm").read_bytes()
    assert raw.startswith(b"Pf\n2 2\n-1.0\n")
    # bottom row first, little-endian float32
    assert np.frombuffer(raw[-16:], dtype="<f4").tolist() == [3.0, 4.0, 1.0, 2.0]


def test_pgm_rejects_out_of_range(tmp_path):
    with pytest.raises(ValidationError):
        fm.write_pgm(tmp_path / "x.pgm", ScalarField(np.array([[1.5]])))
    (tmp_path / "bad.pgm").write_bytes(b"P2\n1 1\n255\n0")
    with pytest.raises(ValidationError):
        fm.read_pgm(tmp_path / "bad.pgm")
    (tmp_path / "short.pgm").write_bytes(b"P5\n4 4\n255\n\x00")
    with pytest.raises(ValidationError, match="short.pgm"):
        fm.read_pgm(tmp_path / "short.pgm")


def test_pgm_header_comments(tmp_path):
    (tmp_path / "c.pgm").write_bytes(b"P5\n# made by hand\n2 1\n255\n\x00\xff")
    assert fm.read_pgm(tmp_path / "c.pgm").data.tolist() == [[0.0, 1.0]]


def test_vector_field_and_histogram_files(tmp_path, rng):
    f = VectorField(rng.normal(size=(3, 4)).astype(np.float32), rng.normal(size=(3, 4)).astype(np.float32))
    fm.write_vector_field(tmp_path / "flow", f)
    g = fm.read_vector_field(tmp_path / "flow")
    assert np.array_equal(g.u, f.u) and np.array_equal(g.v, f.v)
    h = EventHistogram(rng.integers(0, 5, size=(3, 4)), rng.integers(0, 5, size=(3, 4)))
    fm.write_histogram(tmp_path / "ev", h)
    h2 = fm.read_histogram(tmp_path / "ev")
    assert np.array_equal(h2.pos, h.pos) and np.array_equal(h2.neg, h.neg)


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_events_csv_roundtrip(tmp_path_factory, seed):
    tmp = tmp_path_factory.mktemp("csv")
    rng = np.random.default_rng(seed)
    s = two_frame_oracle(ScalarField(rng.uniform(0, 1, (5, 6))), ScalarField(rng.uniform(0, 1, (5, 6))), 0.2)
    a, b = _cycle(tmp, fm.write_events_csv, lambda p: fm.read_events_csv(p, 6, 5), s, "e.csv")
    assert a == b
    back = fm.read_events_csv(tmp / "a_e.csv", 6, 5)
    assert np.array_equal(back.events[["x", "y", "p"]], s.events[["x", "y", "p"]])
    assert np.allclose(back.events["t"], s.events["t"], atol=1e-9)


def test_events_csv_validation(tmp_path):
    (tmp_path / "h.csv").write_text("time,x,y,p\n")
    with pytest.raises(ValidationError):
        fm.read_events_csv(tmp_path / "h.csv")
    (tmp_path / "r.csv").write_text("t,x,y,p\n0.1,0,0,up\n")
    with pytest.raises(ValidationError):
        fm.read_events_csv(tmp_path / "r.csv")
    (tmp_path / "o.csv").write_text("t,x,y,p\n0.1,3,1,1\n")
    assert fm.read_events_csv(tmp_path / "o.csv").width == 4
    with pytest.raises(ValidationError):
        fm.read_events_csv(tmp_path / "o.csv", 2, 2)


@settings(max_examples=25, deadline=None)
@given(seeds, st.integers(0, 4))
def test_checkpoint_roundtrip(tmp_path_factory, seed, n):
    tmp = tmp_path_factory.mktemp("ck")
    rng = np.random.default_rng(seed)
    arrays = {f"layer{i}.w": rng.normal(size=tuple(rng.integers(1, 4, size=rng.integers(0, 4))))
              for i in range(n)}
    a, b = _cycle(tmp, fm.write_checkpoint, fm.read_checkpoint, arrays, "m.evbr")
    assert a == b
    back = fm.read_checkpoint(tmp / "a_m.evbr")
    assert list(back) == list(arrays)
    assert all(np.array_equal(back[k], arrays[k]) for k in arrays)


def test_checkpoint_corruption(tmp_path):
    (tmp_path / "x.evbr").write_bytes(b"NOPE")
    with pytest.raises(ValidationError):
        fm.read_checkpoint(tmp_path / "x.evbr")
    fm.write_checkpoint(tmp_path / "y.evbr", {"a": np.ones((3, 3))})
    (tmp_path / "z.evbr").write_bytes((tmp_path / "y.evbr").read_bytes()[:-8])
    with pytest.raises(ValidationError):
        fm.read_checkpoint(tmp_path / "z.evbr")


def test_config_json_roundtrip(tmp_path):
    cfg = PipelineConfig(steps=12, lr=2e-3, split_enabled=False)
    cfg.save(tmp_path / "a.json")
    PipelineConfig.load(tmp_path / "a.json").save(tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert PipelineConfig.load(tmp_path / "a.json") == cfg


def test_jsonl(tmp_path):
    p = tmp_path / "l.jsonl"
    fm.append_jsonl(p, {"b": 1, "a": 2.5})
    fm.append_jsonl(p, {"c": [1, 2]})
    assert fm.read_jsonl(p) == [{"a": 2.5, "b": 1}, {"c": [1, 2]}]
    assert p.read_text().splitlines()[0] == '{"a": 2.5, "b": 1}'
