"""Exact solver for the balanced transportation problem behind the EMD.

Primal network simplex specialized to the dense bipartite case: sources are
the bins of one histogram, sinks the bins of the other, and every
source-sink arc carries the ground-distance cost. The basis is a spanning
tree kept in parent/child-list form; pivots use block pricing with a
persistent cursor (Dantzig within a block, Bland over blocks), and the
leaving arc is the first minimum-flow backward arc along the cycle.

The initial basis comes from the north-west-corner rule, so all costs stay
at their natural scale (no artificial big-M arcs) and reduced-cost tests
keep full double precision. After the pivot loop the flows are re-derived
exactly from the final basis and the supplies, and the objective is
accumulated with compensated summation; this removes any drift the pivot
updates may have introduced.

Callers must pass strictly positive supplies/demands (drop zero-mass bins
first) with equal totals up to the mass tolerance.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

STATUS_OK = 0
STATUS_PIVOT_LIMIT = 1
STATUS_INTERNAL = 2


@njit(cache=True)
def _place_cells(a, b, pair, cell_i, cell_j, cell_f):  # pragma: no cover
    """Crossing-out initial placement: m+n-1 basic cells forming a tree.

    First pass allocates along the supplied pairing (bins shared by both
    histograms move mass to themselves at zero cost), the rest is finished
    north-west-corner style over the still-open rows and columns. Every
    placement closes exactly one row or column, except the last, which
    closes both; that invariant is what makes the placed cells triangular.
    """
    m = a.shape[0]
    n = b.shape[0]
    ra = a.copy()
    rb = b.copy()
    row_open = np.ones(m, np.bool_)
    col_open = np.ones(n, np.bool_)
    open_rows = m
    open_cols = n
    k = 0
    for s in range(m):
        t = pair[s]
        if t < 0:
            continue
        f = ra[s] if ra[s] < rb[t] else rb[t]
        cell_i[k] = s
        cell_j[k] = t
        cell_f[k] = f
        k += 1
        if open_rows == 1 and open_cols == 1:
            return k
        if ra[s] < rb[t]:
            close_row = open_rows >= 2
        elif rb[t] < ra[s]:
            close_row = open_cols < 2
        else:
            close_row = open_rows >= 2
        if close_row:
            rb[t] -= f
            ra[s] = 0.0
            row_open[s] = False
            open_rows -= 1
        else:
            ra[s] -= f
            rb[t] = 0.0
            col_open[t] = False
            open_cols -= 1
    s = 0
    t = 0
    while True:
        while not row_open[s]:
            s += 1
        while not col_open[t]:
            t += 1
        f = ra[s] if ra[s] < rb[t] else rb[t]
        cell_i[k] = s
        cell_j[k] = t
        cell_f[k] = f
        k += 1
        if open_rows == 1 and open_cols == 1:
            return k
        if ra[s] < rb[t]:
            close_row = open_rows >= 2
        elif rb[t] < ra[s]:
            close_row = open_cols < 2
        else:
            close_row = open_rows >= 2
        if close_row:
            rb[t] -= f
            ra[s] = 0.0
            row_open[s] = False
            open_rows -= 1
        else:
            ra[s] -= f
            rb[t] = 0.0
            col_open[t] = False
            open_cols -= 1


@njit(cache=True)
def _solve_dense(a, b, C, pair):  # pragma: no cover - exercised via emd()
    m = a.shape[0]
    n = b.shape[0]
    N = m + n

    parent = np.full(N, -1, np.int64)
    pflow = np.zeros(N, np.float64)
    pot = np.zeros(N, np.float64)
    depth = np.zeros(N, np.int64)
    first_child = np.full(N, -1, np.int64)
    next_sib = np.full(N, -1, np.int64)
    prev_sib = np.full(N, -1, np.int64)

    cell_i = np.empty(N - 1, np.int64)
    cell_j = np.empty(N - 1, np.int64)
    cell_f = np.empty(N - 1, np.float64)
    placed = _place_cells(a, b, pair, cell_i, cell_j, cell_f)
    if placed != N - 1:
        return 0.0, STATUS_INTERNAL, 0

    # Hang the placed cells off node 0 as a rooted tree: adjacency lists,
    # then one BFS assigning parent, flow, children links, potentials
    # (convention: pot[src] + pot[snk] = cost on every basic arc), depth.
    deg = np.zeros(N, np.int64)
    for c in range(N - 1):
        deg[cell_i[c]] += 1
        deg[m + cell_j[c]] += 1
    offs = np.empty(N + 1, np.int64)
    offs[0] = 0
    for v in range(N):
        offs[v + 1] = offs[v] + deg[v]
    fill = offs[:N].copy()
    adj_node = np.empty(2 * (N - 1), np.int64)
    adj_cell = np.empty(2 * (N - 1), np.int64)
    for c in range(N - 1):
        u = cell_i[c]
        v = m + cell_j[c]
        adj_node[fill[u]] = v
        adj_cell[fill[u]] = c
        fill[u] += 1
        adj_node[fill[v]] = u
        adj_cell[fill[v]] = c
        fill[v] += 1
    order = np.empty(N, np.int64)
    order[0] = 0
    seen = np.zeros(N, np.bool_)
    seen[0] = True
    head_idx = 0
    tail = 1
    while head_idx < tail:
        v = order[head_idx]
        head_idx += 1
        for e in range(offs[v], offs[v + 1]):
            w = adj_node[e]
            if seen[w]:
                continue
            seen[w] = True
            parent[w] = v
            pflow[w] = cell_f[adj_cell[e]]
            if w >= m:
                c = C[v, w - m]
            else:
                c = C[w, v - m]
            pot[w] = c - pot[v]
            depth[w] = depth[v] + 1
            hd = first_child[v]
            next_sib[w] = hd
            if hd != -1:
                prev_sib[hd] = w
            first_child[v] = w
            order[tail] = w
            tail += 1
    if tail != N:
        return 0.0, STATUS_INTERNAL, 0
    stack = np.empty(N, np.int64)

    # Scale-aware tolerance for the entering test: anything less negative
    # than -eps is treated as optimal, bounding the duality gap by
    # eps * total mass.
    cmax = 0.0
    for s in range(m):
        for t in range(n):
            v = abs(C[s, t])
            if v > cmax:
                cmax = v
    eps = 1e-12 * (cmax if cmax > 1.0 else 1.0)

    E = m * n
    block = int(np.sqrt(E)) + 1
    if block > E:
        block = E
    n_blocks = (E + block - 1) // block

    path_i = np.empty(N, np.int64)
    path_j = np.empty(N, np.int64)

    max_pivots = 200_000 + 200 * N
    pivots = 0
    cur_s = 0
    cur_t = 0
    status = STATUS_OK

    while True:
        # Entering arc: most negative reduced cost within the first block
        # (cyclic over arcs in row-major order, persistent cursor) that
        # contains one.
        enter_src = -1
        enter_snk = -1
        scanned = 0
        while scanned < n_blocks:
            best = -eps
            best_s = -1
            best_t = -1
            s = cur_s
            t = cur_t
            pot_s = pot[s]
            for _ in range(block):
                rc = C[s, t] - pot_s - pot[m + t]
                if rc < best:
                    best = rc
                    best_s = s
                    best_t = t
                t += 1
                if t == n:
                    t = 0
                    s += 1
                    if s == m:
                        s = 0
                    pot_s = pot[s]
            cur_s = s
            cur_t = t
            scanned += 1
            if best_s != -1:
                enter_src = best_s
                enter_snk = best_t
                break
        if enter_src == -1:
            break  # optimal
        pivots += 1
        if pivots > max_pivots:
            status = STATUS_PIVOT_LIMIT
            break

        # Cycle: tree path between the entering arc's endpoints. Collect
        # child-node chains up to the common ancestor (each chain entry
        # identifies the arc to its parent).
        u = enter_src
        v = m + enter_snk
        ni = 0
        nj = 0
        while depth[u] > depth[v]:
            path_i[ni] = u
            ni += 1
            u = parent[u]
        while depth[v] > depth[u]:
            path_j[nj] = v
            nj += 1
            v = parent[v]
        while u != v:
            path_i[ni] = u
            ni += 1
            u = parent[u]
            path_j[nj] = v
            nj += 1
            v = parent[v]

        # Backward arcs alternate around the bipartite cycle: walking away
        # from the entering source, an arc loses flow when the nearer node
        # is a source; walking away from the entering sink, when it is a
        # sink. theta is the smallest backward flow; first minimum leaves.
        theta = np.inf
        leave = -1
        node = enter_src
        for t in range(ni):
            w = path_i[t]
            if (node < m) and pflow[w] < theta:
                theta = pflow[w]
                leave = w
            node = parent[w]
        node = m + enter_snk
        for t in range(nj):
            w = path_j[t]
            if (node >= m) and pflow[w] < theta:
                theta = pflow[w]
                leave = w
            node = parent[w]

        # Augment around the cycle.
        node = enter_src
        for t in range(ni):
            w = path_i[t]
            if node < m:
                pflow[w] -= theta
            else:
                pflow[w] += theta
            node = parent[w]
        node = m + enter_snk
        for t in range(nj):
            w = path_j[t]
            if node >= m:
                pflow[w] -= theta
            else:
                pflow[w] += theta
            node = parent[w]

        # Detach the leaving arc's subtree.
        par = parent[leave]
        nxt = next_sib[leave]
        prv = prev_sib[leave]
        if prv != -1:
            next_sib[prv] = nxt
        else:
            first_child[par] = nxt
        if nxt != -1:
            prev_sib[nxt] = prv
        parent[leave] = -1
        next_sib[leave] = -1
        prev_sib[leave] = -1

        # Which entering endpoint hangs in the severed subtree?
        w = enter_src
        while w != -1 and w != leave:
            w = parent[w]
        if w == leave:
            q_end = enter_src
            p_end = m + enter_snk
        else:
            q_end = m + enter_snk
            p_end = enter_src

        delta = C[enter_src, enter_snk] - pot[p_end] - pot[q_end]

        # Re-root the severed subtree at q_end: every parent link along the
        # chain q_end -> old subtree root reverses, and each reversed arc's
        # flow moves one node toward the old root. Unlink every chain node
        # first, while its sibling pointers are still valid, then relink.
        chain_len = 0
        w = q_end
        while w != -1:
            path_i[chain_len] = w
            chain_len += 1
            w = parent[w]
        for t in range(chain_len - 1):
            child = path_i[t]
            nxt = next_sib[child]
            prv = prev_sib[child]
            if prv != -1:
                next_sib[prv] = nxt
            else:
                first_child[path_i[t + 1]] = nxt
            if nxt != -1:
                prev_sib[nxt] = prv
        for t in range(chain_len - 1, 0, -1):
            pflow[path_i[t]] = pflow[path_i[t - 1]]
        for t in range(chain_len - 1):
            child = path_i[t]
            cp = path_i[t + 1]
            head = first_child[child]
            next_sib[cp] = head
            if head != -1:
                prev_sib[head] = cp
            prev_sib[cp] = -1
            first_child[child] = cp
            parent[cp] = child

        # Graft under the untouched side with the entering arc's new flow.
        parent[q_end] = p_end
        pflow[q_end] = theta
        head = first_child[p_end]
        next_sib[q_end] = head
        if head != -1:
            prev_sib[head] = q_end
        prev_sib[q_end] = -1
        first_child[p_end] = q_end

        # Potentials and depths change only inside the moved subtree; the
        # symmetric convention needs opposite shifts on the two sides.
        q_side = q_end < m
        top = 0
        stack[top] = q_end
        top += 1
        while top > 0:
            top -= 1
            w = stack[top]
            if (w < m) == q_side:
                pot[w] += delta
            else:
                pot[w] -= delta
            depth[w] = depth[parent[w]] + 1
            x = first_child[w]
            while x != -1:
                stack[top] = x
                top += 1
                x = next_sib[x]

    # Re-derive flows exactly from the final basis: peel nodes in reverse
    # BFS order, sending each node's residual balance up its parent arc.
    order = np.empty(N, np.int64)
    order[0] = 0
    head_idx = 0
    tail = 1
    while head_idx < tail:
        v = order[head_idx]
        head_idx += 1
        w = first_child[v]
        while w != -1:
            order[tail] = w
            tail += 1
            w = next_sib[w]
    acc = np.empty(N, np.float64)
    for s in range(m):
        acc[s] = a[s]
    for t in range(n):
        acc[m + t] = b[t]

    # Compensated (Neumaier) summation of the basic-arc costs.
    total = 0.0
    comp = 0.0
    for idx in range(N - 1, 0, -1):
        v = order[idx]
        f = acc[v]
        if f < 0.0:
            f = 0.0
        p = parent[v]
        acc[p] -= f
        if v >= m:
            c = C[p, v - m]
        else:
            c = C[v, p - m]
        term = f * c
        t2 = total + term
        if abs(total) >= abs(term):
            comp += (total - t2) + term
        else:
            comp += (term - t2) + total
        total = t2

    return total + comp, status, pivots


@njit(cache=True)
def _emd_full(a, b, C):  # pragma: no cover - exercised via emd()
    """EMD between two full-length histograms over a shared symmetric
    ground matrix. Drops zero-mass bins, orients the pair canonically so
    that argument order cannot change the result bit pattern, and solves
    the compacted transportation problem.
    """
    K = a.shape[0]
    swap = False
    same = True
    for k in range(K):
        if a[k] != b[k]:
            same = False
            swap = a[k] > b[k]
            break
    if same:
        return 0.0, STATUS_OK
    if swap:
        a, b = b, a

    m = 0
    n = 0
    for k in range(K):
        if a[k] > 0.0:
            m += 1
        if b[k] > 0.0:
            n += 1
    suba = np.empty(m, np.float64)
    subb = np.empty(n, np.float64)
    ai = np.empty(m, np.int64)
    bi = np.empty(n, np.int64)
    # pair[s] = compact column of b sharing bin ai[s], or -1: mass kept in
    # place is free under a zero-diagonal ground matrix, which makes the
    # pairing an excellent starting basis.
    pair = np.full(m, -1, np.int64)
    s = 0
    t = 0
    for k in range(K):
        if a[k] > 0.0 and b[k] > 0.0:
            pair[s] = t
        if a[k] > 0.0:
            ai[s] = k
            suba[s] = a[k]
            s += 1
        if b[k] > 0.0:
            bi[t] = k
            subb[t] = b[k]
            t += 1
    subC = np.empty((m, n), np.float64)
    for s in range(m):
        row = ai[s]
        for t in range(n):
            subC[s, t] = C[row, bi[t]]

    cost, status, _ = _solve_dense(suba, subb, subC, pair)
    return cost, status


@njit(cache=True, parallel=True)
def _pairwise_kernel(stack, C, ii, jj, out, stat):  # pragma: no cover
    """All-pairs EMD over the rows of a feature stack.

    Each pair writes only its own slot, so results are bit-identical for
    any thread count or scheduling order.
    """
    for p in prange(ii.shape[0]):
        cost, status = _emd_full(stack[ii[p]], stack[jj[p]], C)
        out[p] = cost
        stat[p] = status
