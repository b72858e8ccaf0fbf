"""Pure numpy implementation of the hot kernels (reference and fallback)."""

import numpy as np


def contract_batch(hidx, child_ptr, child_idx, props, apply_root, entry, offsets, tabK, tabC):
    """Contract node factors and propagators of one tree shape.

    Nodes are in post-order (children before parents, root last).  The node
    factor of a node with harmonic table slice ``m`` is
    ``sum_m C[m] (K[m])^{(x)(p+1)}`` where ``K[m] = i(nu, mu)``; contraction
    with child vectors therefore reduces to scalar products ``K[m] . w``.

    Parameters
    ----------
    hidx : int array (n,)
        Harmonic-table index of each node.
    child_ptr, child_idx : int arrays
        CSR lists of children.
    props : complex array (A, n, d, d)
        Propagator of the line leaving each node, for A independent
        assignments (row index = upper end, column = lower end).
    apply_root : bool
        Whether the propagator of the root line is applied.
    entry : int
        Node receiving an external entering line (-1 for none).  When set,
        the result carries an extra trailing index for that line's label.
    offsets : int array (H + 1,)
    tabK : complex array (N, d)
    tabC : complex array (N,)

    Returns
    -------
    complex array (A, d, B) with B = d if ``entry >= 0`` else 1.
    """
    n = len(hidx)
    A, d = props.shape[0], props.shape[-1]
    w = [None] * n
    batched = [False] * n
    for i in range(n):
        lo, hi = offsets[hidx[i]], offsets[hidx[i] + 1]
        K = tabK[lo:hi]
        prod = np.repeat(tabC[lo:hi][None, :], A, axis=0)
        batch = None
        for j in child_idx[child_ptr[i]:child_ptr[i + 1]]:
            s = np.einsum("md,adb->amb", K, w[j])
            if batched[j]:
                batch = s
            else:
                prod = prod * s[..., 0]
        if i == entry:
            batch = np.broadcast_to(K, (A,) + K.shape)
        if batch is None:
            out = np.einsum("md,am->ad", K, prod)[..., None]
        else:
            out = np.einsum("md,am,amb->adb", K, prod, batch)
            batched[i] = True
        if i < n - 1 or apply_root:
            out = props[:, i] @ out
        w[i] = out
    return w[n - 1]
