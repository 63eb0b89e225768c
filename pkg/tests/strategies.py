"""Shared hypothesis strategies."""

import numpy as np
from hypothesis import strategies as st

finite = st.floats(-3.0, 3.0, allow_nan=False, allow_infinity=False)


@st.composite
def complex_vectors(draw, dim):
    re = draw(st.lists(finite, min_size=dim, max_size=dim))
    im = draw(st.lists(finite, min_size=dim, max_size=dim))
    z = np.array(re) + 1j * np.array(im)
    if np.linalg.norm(z) < 1e-3:
        z[0] += 1.0
    return z


@st.composite
def hermitian_matrices(draw, dim):
    a = np.array(draw(st.lists(finite, min_size=2 * dim * dim, max_size=2 * dim * dim)))
    m = (a[: dim * dim] + 1j * a[dim * dim:]).reshape(dim, dim)
    return 0.5 * (m + m.conj().T)


seeds = st.integers(0, 2**32 - 1)
dims = st.integers(2, 4)
