import json
import math
import os
import stat

import numpy as np
import pytest

from phdim.fileio import atomic_write_text, dumps, plain, write_csv_rows, write_json
from phdim.rng import MAX_SEED, derive_key, generator


def test_streams_are_reproducible_and_label_dependent():
    a = generator(1, "x").uniform(size=5)
    assert np.array_equal(a, generator(1, "x").uniform(size=5))
    assert not np.array_equal(a, generator(1, "y").uniform(size=5))
    assert not np.array_equal(a, generator(2, "x").uniform(size=5))


def test_seed_range():
    assert derive_key(MAX_SEED, "t") < 2**128
    with pytest.raises(ValueError):
        derive_key(-1, "t")
    with pytest.raises(ValueError):
        derive_key(2**64, "t")


def test_known_key_is_stable():
    # pinned so that a change in derivation shows up as a test failure
    assert derive_key(0, "orbit-cloud") == 155478828412581897733510083303496649709
    assert generator(0, "lyapunov").integers(2**32) == 2000468050


def test_plain_and_dumps():
    obj = {"a": np.float64(1.5), "b": np.arange(3), "c": (1, math.inf), "d": math.nan, 3: np.bool_(True)}
    p = plain(obj)
    assert p == {"a": 1.5, "b": [0, 1, 2], "c": [1, "inf"], "d": "nan", "3": True}
    text = dumps(obj)
    assert json.loads(text) == p and text.endswith("\n")
    assert dumps({"b": 1, "a": 2}).index('"a"') < dumps({"b": 1, "a": 2}).index('"b"')


def test_atomic_write_creates_dirs_and_mode(tmp_path):
    path = tmp_path / "sub" / "f.txt"
    atomic_write_text(path, "hello")
    assert path.read_text() == "hello"
    mask = os.umask(0)
    os.umask(mask)
    assert stat.S_IMODE(path.stat().st_mode) == 0o666 & ~mask
    assert [p.name for p in path.parent.iterdir()] == ["f.txt"]


def test_write_json_and_csv(tmp_path):
    write_json(tmp_path / "a.json", {"x": np.float32(0.5)})
    assert json.loads((tmp_path / "a.json").read_text()) == {"x": 0.5}
    write_csv_rows(tmp_path / "t.csv", ["a", "b", "c"], [[0.1, 2, None], [np.float64(1 / 3), "s", 1.0]])
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines == ["a,b,c", "0.10000000000000001,2,", "0.33333333333333331,s,1"]
