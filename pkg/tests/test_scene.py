from __future__ import annotations

import numpy as np
import pytest

from thinfrac.scene import SceneError, dump_scene, load_scene, split_square, standard_fixture


def test_round_trip_preserves_geometry_and_traces():
    m = split_square(A_right=[[1.0, 0.2], [0.0, 1.0], [0.1, 0.0]], z=(0.5, 0.0, 0.2))
    back = load_scene(dump_scene(m))
    assert back.domain == m.domain
    for a, b in zip(m.cells, back.cells):
        assert np.array_equal(a.A, b.A) and np.array_equal(a.c, b.c)
    for s in (0.0, 0.4, 1.0):
        assert np.allclose(back.jumps[0].jump(s), m.jumps[0].jump(s))


def test_standard_fixture_jump():
    seg = standard_fixture().jumps[0]
    assert np.allclose(seg.jump(0.3), [1.0, 0.0, 0.0])
    assert np.allclose(seg.normal, [1.0, 0.0])


@pytest.mark.parametrize("text,match", [
    ("domain: [0, 1, 0, 1]\ncells: []\ncolour: red\n", "unknown keys"),
    ("cells: []\n", "missing keys"),
    ("domain: [0, 1, 0, 1]\ncells:\n  - {vertices: [[0,0],[1,0],[1,1],[0,1]], A: [[1,0],[0,1],[0,0]], B: 1}\n",
     "unknown keys"),
    ("domain: [0, 1, 0, 1]\ncells:\n  - {vertices: [[0,0],[1,0],[1,1]], A: [[1,0],[0,1],[0,0]]}\n", "area"),
    ("domain: [0, 1\n", "cannot parse"),
])
def test_malformed_scenes(text, match):
    with pytest.raises(SceneError, match=match):
        load_scene(text)
