"""Membrane scenes as nested key-value documents (YAML) and standard fixtures.

A scene looks like::

    domain: [0.0, 1.0, 0.0, 1.0]        # x0, x1, y0, y1
    cells:
      - vertices: [[0, 0], [0.5, 0], [0.5, 1], [0, 1]]
        A: [[1, 0], [0, 1], [0, 0]]     # 3 x 2 gradient
        c: [0, 0, 0]                    # offset
    jumps:
      - p: [0.5, 0.0]
        q: [0.5, 1.0]
        normal: [1.0, 0.0]

Jump traces are taken from the cells on either side of each segment.
"""
from __future__ import annotations

from typing import Any, Mapping

import numpy as np
import yaml

from .core import Cell, CrackedMembrane, traces_from_cells


class SceneError(ValueError):
    """Malformed scene document."""


_SCENE_KEYS = {"domain", "cells", "jumps"}
_CELL_KEYS = {"vertices", "A", "c"}
_JUMP_KEYS = {"p", "q", "normal"}


def _check_keys(obj: Mapping, allowed: set, where: str, optional: set = frozenset()):
    if not isinstance(obj, Mapping):
        raise SceneError(f"{where}: expected a mapping")
    extra = set(obj) - allowed
    if extra:
        raise SceneError(f"{where}: unknown keys {sorted(extra)}")
    missing = allowed - set(obj) - set(optional)
    if missing:
        raise SceneError(f"{where}: missing keys {sorted(missing)}")


def scene_from_dict(doc: Mapping[str, Any]) -> CrackedMembrane:
    _check_keys(doc, _SCENE_KEYS, "scene", {"jumps"})
    try:
        cells = []
        for k, c in enumerate(doc["cells"]):
            _check_keys(c, _CELL_KEYS, f"cells[{k}]", {"c"})
            cells.append(Cell(c["vertices"], c["A"], c.get("c", [0.0, 0.0, 0.0])))
        jumps = []
        for k, j in enumerate(doc.get("jumps") or []):
            _check_keys(j, _JUMP_KEYS, f"jumps[{k}]")
            nrm = np.asarray(j["normal"], dtype=float)
            jumps.append(traces_from_cells(cells, j["p"], j["q"], nrm / np.linalg.norm(nrm)))
        return CrackedMembrane(doc["domain"], cells, jumps)
    except SceneError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise SceneError(str(exc)) from exc


def scene_to_dict(m: CrackedMembrane) -> dict:
    return {
        "domain": list(m.domain),
        "cells": [{"vertices": c.vertices.tolist(), "A": c.A.tolist(), "c": c.c.tolist()} for c in m.cells],
        "jumps": [{"p": j.p.tolist(), "q": j.q.tolist(), "normal": j.normal.tolist()} for j in m.jumps],
    }


def load_scene(text: str) -> CrackedMembrane:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise SceneError(f"cannot parse scene: {exc}") from exc
    return scene_from_dict(doc)


def dump_scene(m: CrackedMembrane) -> str:
    return yaml.safe_dump(scene_to_dict(m), sort_keys=False)


# --------------------------------------------------------------------------- #
# fixtures
# --------------------------------------------------------------------------- #

def split_square(A_left=None, A_right=None, z=(1.0, 0.0, 0.0), split: float = 0.5) -> CrackedMembrane:
    """Unit square cut along ``x1 = split``; the right cell is offset so the jump is ``z`` on the cut."""
    E = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    A_l = E if A_left is None else np.asarray(A_left, dtype=float)
    A_r = E if A_right is None else np.asarray(A_right, dtype=float)
    z = np.asarray(z, dtype=float)
    left = Cell([[0, 0], [split, 0], [split, 1], [0, 1]], A_l, np.zeros(3))
    # match u^+ - u^- = z at the bottom end of the cut
    p = np.array([split, 0.0])
    c_r = A_l @ p + z - A_r @ p
    right = Cell([[split, 0], [1, 0], [1, 1], [split, 1]], A_r, c_r)
    jump = traces_from_cells([left, right], p, [split, 1.0], [1.0, 0.0])
    return CrackedMembrane((0.0, 1.0, 0.0, 1.0), (left, right), (jump,))


def uncracked_square(A=None) -> CrackedMembrane:
    E = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    A = E if A is None else np.asarray(A, dtype=float)
    cell = Cell([[0, 0], [1, 0], [1, 1], [0, 1]], A, np.zeros(3))
    return CrackedMembrane((0.0, 1.0, 0.0, 1.0), (cell,), ())


def standard_fixture() -> CrackedMembrane:
    """``A = (e1|e2)`` on both halves of the unit square, jump ``e1`` along ``x1 = 1/2``."""
    return split_square()
