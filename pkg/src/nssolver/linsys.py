"""Sparse block linear algebra for the implicit solves.

The pressure system (symmetric positive semi-definite, at most four blocks
per element row, constant-in-space nullspace under periodic boundaries) is
solved with preconditioned conjugate gradients.  The momentum system couples
the upwind time operator with the implicit viscous operator and is not
symmetric, so it gets BiCGStab on the same block structure.  Both report the
residual recomputed from the final iterate, never the recurrence value, and
restart from the current iterate if recurrence drift left the true residual
above tolerance.
"""

from dataclasses import dataclass

import numpy as np

from ._backend import block_diag_matvec, bsr_matvec


class LinearSolveError(RuntimeError):
    pass


class BlockSparseMatrix:
    """Square block-sparse matrix with uniform dense blocks (BSR layout)."""

    def __init__(self, n_block_rows, block_size, indptr, indices, blocks):
        self.n_block_rows = int(n_block_rows)
        self.block_size = int(block_size)
        self.indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(indices, dtype=np.int64)
        self.blocks = np.ascontiguousarray(blocks, dtype=float)
        if self.blocks.shape != (len(self.indices), self.block_size,
                                 self.block_size):
            raise ValueError("block array shape does not match the layout")

    @classmethod
    def from_block_dict(cls, n_block_rows, block_size, entries):
        """Build from {(row, col): block}; columns are sorted per row."""
        indptr = np.zeros(n_block_rows + 1, dtype=np.int64)
        per_row = [[] for _ in range(n_block_rows)]
        for (r, c) in entries:
            per_row[r].append(c)
        indices, blocks = [], []
        for r in range(n_block_rows):
            cols = sorted(per_row[r])
            indptr[r + 1] = indptr[r] + len(cols)
            for c in cols:
                indices.append(c)
                blocks.append(entries[(r, c)])
        blocks = (np.array(blocks) if blocks
                  else np.zeros((0, block_size, block_size)))
        return cls(n_block_rows, block_size, indptr, np.array(indices),
                   blocks)

    @property
    def n(self):
        return self.n_block_rows * self.block_size

    def matvec(self, x, out=None):
        x = np.ascontiguousarray(x, dtype=float)
        if x.shape != (self.n,):
            raise ValueError(
                f"matvec dimension mismatch: x has {x.shape}, need ({self.n},)")
        if out is None:
            out = np.empty(self.n)
        bsr_matvec(self.indptr, self.indices, self.blocks, x, out)
        return out

    def diagonal_blocks(self):
        out = np.zeros((self.n_block_rows, self.block_size, self.block_size))
        for r in range(self.n_block_rows):
            for k in range(self.indptr[r], self.indptr[r + 1]):
                if self.indices[k] == r:
                    out[r] = self.blocks[k]
                    break
        return out

    def to_dense(self):
        bs = self.block_size
        dense = np.zeros((self.n, self.n))
        for r in range(self.n_block_rows):
            for k in range(self.indptr[r], self.indptr[r + 1]):
                c = self.indices[k]
                dense[r * bs:(r + 1) * bs, c * bs:(c + 1) * bs] += \
                    self.blocks[k]
        return dense

    def max_blocks_per_row(self):
        return int(np.diff(self.indptr).max())


def matvec(a, x):
    """Plain y = A x (exact block-row products)."""
    return a.matvec(x)


class BlockJacobi:
    """Exact inverse of the diagonal blocks, applied blockwise."""

    def __init__(self, a):
        self.blocks_inv = np.ascontiguousarray(
            np.linalg.inv(a.diagonal_blocks()))

    def apply(self, x, out=None):
        if out is None:
            out = np.empty_like(x)
        block_diag_matvec(self.blocks_inv, np.ascontiguousarray(x), out)
        return out


class NullspaceProjector:
    """Orthogonal projector removing the span of the given modes (k, n)."""

    def __init__(self, modes):
        modes = np.atleast_2d(np.asarray(modes, dtype=float))
        q, _ = np.linalg.qr(modes.T)
        self.q = q  # (n, k), orthonormal columns

    def project(self, x):
        return x - self.q @ (self.q.T @ x)


@dataclass
class CgReport:
    iterations: int
    relative_residual: float
    converged: bool


def _cg_pass(a, b, x, tol_abs, max_iter, proj, precond):
    """One CG sweep from the given iterate; returns iterations used."""
    r = b - a.matvec(x)
    if proj is not None:
        r = proj.project(r)
    z = precond.apply(r) if precond is not None else r.copy()
    if proj is not None:
        z = proj.project(z)
    p = z.copy()
    rz = float(r @ z)
    ap = np.empty(a.n)
    for it in range(1, max_iter + 1):
        if rz == 0.0:
            return it - 1
        a.matvec(p, out=ap)
        if proj is not None:
            ap = proj.project(ap)
        pap = float(p @ ap)
        if pap <= 0.0:
            return it - 1  # matrix not positive definite on this subspace
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        if np.linalg.norm(r) <= tol_abs:
            return it
        z = precond.apply(r) if precond is not None else r.copy()
        if proj is not None:
            z = proj.project(z)
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return max_iter


def cg_solve(a, b, tol=1e-10, max_iter=None, nullspace=None, precond=None):
    """Preconditioned conjugate gradients for symmetric positive
    (semi-)definite block systems.

    nullspace: optional modes (k, n) spanning the kernel; the right-hand
    side, iterates and reported residual are kept orthogonal to them, so the
    solution has zero component in each projected mode.
    """
    b = np.asarray(b, dtype=float).ravel()
    if max_iter is None:
        max_iter = 10 * int(np.sqrt(a.n)) + 50
    proj = NullspaceProjector(nullspace) if nullspace is not None else None
    if proj is not None:
        b = proj.project(b)
    norm_b = np.linalg.norm(b)
    x = np.zeros(a.n)
    if norm_b == 0.0:
        return x, CgReport(0, 0.0, True)
    total = 0
    rel = np.inf
    for _ in range(3):  # restarts cure recurrence drift
        left = max_iter - total
        if left <= 0:
            break
        total += _cg_pass(a, b, x, tol * norm_b, left, proj, precond)
        if proj is not None:
            x = proj.project(x)
        true_r = b - a.matvec(x)
        if proj is not None:
            true_r = proj.project(true_r)
        rel = float(np.linalg.norm(true_r) / norm_b)
        if rel <= tol:
            return x, CgReport(total, rel, True)
    return x, CgReport(total, rel, False)


def _bicgstab_pass(a, b, x, tol_abs, max_iter, precond):
    def msolve(v):
        return precond.apply(v) if precond is not None else v

    r = b - a.matvec(x)
    r_hat = r.copy()
    rho = alpha = omega = 1.0
    v = np.zeros(a.n)
    p = np.zeros(a.n)
    for it in range(1, max_iter + 1):
        rho_new = float(r_hat @ r)
        if rho_new == 0.0:
            return it - 1
        beta = (rho_new / rho) * (alpha / omega)
        p = r + beta * (p - omega * v)
        p_hat = msolve(p)
        v = a.matvec(p_hat)
        denom = float(r_hat @ v)
        if denom == 0.0:
            return it - 1
        alpha = rho_new / denom
        s = r - alpha * v
        if np.linalg.norm(s) <= tol_abs:
            x += alpha * p_hat
            return it
        s_hat = msolve(s)
        t = a.matvec(s_hat)
        tt = float(t @ t)
        if tt == 0.0:
            return it - 1
        omega = float(t @ s) / tt
        x += alpha * p_hat + omega * s_hat
        r = s - omega * t
        rho = rho_new
        if np.linalg.norm(r) <= tol_abs:
            return it
    return max_iter


def bicgstab_solve(a, b, tol=1e-12, max_iter=None, precond=None):
    """Preconditioned BiCGStab for the nonsymmetric momentum system."""
    b = np.asarray(b, dtype=float).ravel()
    if max_iter is None:
        max_iter = 10 * int(np.sqrt(a.n)) + 50
    norm_b = np.linalg.norm(b)
    x = np.zeros(a.n)
    if norm_b == 0.0:
        return x, CgReport(0, 0.0, True)
    total = 0
    rel = np.inf
    for _ in range(3):
        left = max_iter - total
        if left <= 0:
            break
        total += _bicgstab_pass(a, b, x, tol * norm_b, left, precond)
        rel = float(np.linalg.norm(b - a.matvec(x)) / norm_b)
        if rel <= tol:
            return x, CgReport(total, rel, True)
    return x, CgReport(total, rel, False)
