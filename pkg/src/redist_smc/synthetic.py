"""Small synthetic maps for demos and tests."""
from __future__ import annotations

import numpy as np

from .graph import Graph


def grid_graph(rows: int, cols: int, pop=None, seed=None, pop_range=(1, 10),
               blocks: dict[str, tuple[int, int]] | None = None, attrs: dict | None = None) -> Graph:
    """Rook-adjacency ``rows x cols`` grid with node ids ``"r-c"``.

    ``pop`` is a sequence of node populations (row-major) or ``None`` for
    integers drawn uniformly from ``pop_range`` (inclusive).  ``blocks`` maps
    a unit level name to a ``(block_rows, block_cols)`` tile size; levels
    should be listed coarsest first so finer tiles nest in coarser ones.
    """
    if rows < 1 or cols < 1:
        raise ValueError("grid needs at least one row and column")
    m = rows * cols
    if pop is None:
        rng = np.random.default_rng(seed)
        pop = rng.integers(pop_range[0], pop_range[1] + 1, size=m)
    pop = [int(x) for x in pop]
    if len(pop) != m:
        raise ValueError("pop length must equal rows * cols")
    ids = [f"{r}-{c}" for r in range(rows) for c in range(cols)]
    edges = []
    for r in range(rows):
        for c in range(cols):
            v = r * cols + c
            if c + 1 < cols:
                edges.append((v, v + 1))
            if r + 1 < rows:
                edges.append((v, v + cols))
    units = {}
    for name, (br, bc) in (blocks or {}).items():
        units[name] = [f"{name}{r // br}.{c // bc}" for r in range(rows) for c in range(cols)]
    return Graph(ids, pop, edges, attrs=attrs, units=units)
