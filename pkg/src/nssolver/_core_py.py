"""Pure-numpy implementations of the hot kernels.

Selected at import time by nssolver._backend when the compiled extension is
unavailable (or when NSSOLVER_PURE_PY=1).  Semantics must match
nssolver._core exactly; the benchmark suite compares the two.
"""

import numpy as np

NAME = "python"


def bsr_matvec(indptr, indices, blocks, x, out):
    """y = A x for a block-sparse matrix with uniform square blocks.

    indptr/indices: BSR layout over block rows; blocks: (nnzb, bs, bs);
    x: (n_block_cols * bs,); out: (n_block_rows * bs,), overwritten.
    """
    n_rows = len(indptr) - 1
    bs = blocks.shape[1]
    xb = x.reshape(-1, bs)[indices]
    prod = np.matmul(blocks, xb[:, :, None])[:, :, 0]
    counts = np.diff(indptr)
    if (counts == 0).any():
        out.reshape(n_rows, bs)[:] = 0.0
        np.add.at(out.reshape(n_rows, bs),
                  np.repeat(np.arange(n_rows), counts), prod)
    else:
        out.reshape(n_rows, bs)[:] = np.add.reduceat(prod, indptr[:-1], axis=0)
    return out


def block_diag_matvec(blocks, x, out):
    """y = diag(blocks) x with blocks (n, bs, bs)."""
    bs = blocks.shape[1]
    xb = x.reshape(-1, bs)
    out.reshape(-1, bs)[:] = np.matmul(blocks, xb[:, :, None])[:, :, 0]
    return out
