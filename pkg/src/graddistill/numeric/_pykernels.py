"""Pure numpy versions of the compiled CSR kernels."""
import numpy as np

# Upper bound on the temporary (nnz x k) product held at once.
_CHUNK_ELEMS = 1 << 22


def csr_matmat(indptr, indices, data, dense, n_rows):
    k = dense.shape[1]
    out = np.zeros((n_rows, k), dtype=np.float64)
    nnz = int(indptr[-1])
    if nnz == 0 or k == 0:
        return out
    rows_per_entry = np.repeat(np.arange(n_rows), np.diff(indptr))
    step = max(1, _CHUNK_ELEMS // k)
    start = 0
    while start < nnz:
        stop = min(nnz, start + step)
        # align chunk end to a row boundary so reduceat sees whole rows
        last_row = rows_per_entry[stop - 1]
        if stop < nnz:
            stop = int(indptr[last_row + 1]) if rows_per_entry[stop] == last_row else stop
        rows = rows_per_entry[start:stop]
        contrib = data[start:stop, None] * dense[indices[start:stop]]
        bounds = np.flatnonzero(np.r_[True, rows[1:] != rows[:-1]])
        out[rows[bounds]] += np.add.reduceat(contrib, bounds, axis=0)
        start = stop
    return out


def csr_row_sample(indptr, keys, fanout):
    n_rows = len(indptr) - 1
    keep = np.zeros(len(keys), dtype=bool)
    counts = np.diff(indptr)
    rows = np.repeat(np.arange(n_rows), counts)
    # stable sort by (row, key) keeps ties in entry order
    order = np.lexsort((np.arange(len(keys)), keys, rows))
    rank = np.arange(len(keys)) - np.repeat(indptr[:-1], counts)
    keep[order[rank < fanout]] = True
    return keep
