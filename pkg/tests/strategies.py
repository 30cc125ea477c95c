"""Hypothesis strategies shared by the property tests."""
import numpy as np
from hypothesis import strategies as st


@st.composite
def convex_polygons(draw, min_vertices=3, max_vertices=8):
    """Counterclockwise convex polygons: points on a random ellipse with separated angles."""
    n = draw(st.integers(min_vertices, max_vertices))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    while True:
        ang = np.sort(rng.uniform(0, 2 * np.pi, n))
        gaps = np.diff(np.append(ang, ang[0] + 2 * np.pi))
        if gaps.min() > 0.25 and gaps.max() < np.pi - 0.1:
            break
    pts = np.column_stack([np.cos(ang), np.sin(ang)])
    L = np.array([[rng.uniform(0.5, 3.0), rng.uniform(-0.5, 0.5)], [0.0, rng.uniform(0.5, 3.0)]])
    return pts @ L.T + rng.uniform(-5, 5, 2)


@st.composite
def bounded_polytopes(draw, dims=(2, 4)):
    """``(A, b)`` of a bounded polytope containing the origin, plus an objective row."""
    n = draw(st.sampled_from(dims))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    m = n + 1 + int(rng.integers(1, 2 * n + 1))
    A = rng.normal(size=(m, n))
    # a box guarantees boundedness; random rows carve it
    A = np.vstack([A, np.eye(n), -np.eye(n)])
    b = np.concatenate([rng.uniform(0.5, 2.0, m), rng.uniform(1.5, 3.0, 2 * n)])
    c = rng.normal(size=n)
    return A, b, c
