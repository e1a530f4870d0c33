"""Exact balanced-transportation solver (primal network simplex).

Solves min sum_ij f_ij c_ij subject to row sums = supplies, column sums =
demands, f >= 0, with integer supplies/demands and float costs.  This is
the kernel behind the earth mover's distance.

Implementation notes, all load-bearing:

* The basis is a spanning tree over sources, sinks, and one artificial
  root; tree arcs keep reduced cost exactly zero through potential
  updates, so optimality is "no arc has reduced cost < -eps".
* Entering arcs are found by block search (Dantzig rule within blocks of
  about sqrt(E) arcs).
* Degeneracy is broken by a deterministic per-arc cost perturbation of
  scale PERTURB; the reported objective uses unperturbed costs, and since
  every unit of mass crosses exactly one arc in a bipartite instance the
  induced objective error is bounded by PERTURB * E, far below the 1e-9
  tolerances this package asserts.
* Real arcs are addressed implicitly (arc e joins source e // n to sink
  e % n), so only flows and the artificial arcs are materialized.

The jitted and pure-Python entry points run the same function body; set
DDSMC_PURE_PYTHON=1 to force the interpreter path (the import-time
selection is also the fallback when numba is unavailable).
"""

from __future__ import annotations

import os

import numpy as np

PERTURB = 1e-16
EPS = 1e-11


def _solve_transport(sup, dem, dist):
    """Core simplex.  sup (m,) int64 > 0, dem (n,) int64 > 0 with equal
    totals, dist (m, n) float64 >= 0.  Returns the optimal objective under
    the true (unperturbed) costs, in units of integer mass."""
    m = sup.shape[0]
    n = dem.shape[0]
    nodes = m + n + 1
    root = m + n
    e_real = m * n
    e_total = e_real + nodes - 1

    cmax = 0.0
    for i in range(m):
        for j in range(n):
            if dist[i, j] > cmax:
                cmax = dist[i, j]
    faux = 4.0 * cmax + 1.0

    flow = np.zeros(e_total, np.int64)
    art_tail = np.empty(nodes - 1, np.int64)
    art_head = np.empty(nodes - 1, np.int64)
    for v in range(nodes - 1):
        if v < m:
            art_tail[v] = v
            art_head[v] = root
            flow[e_real + v] = sup[v]
        else:
            art_tail[v] = root
            art_head[v] = v
            flow[e_real + v] = dem[v - m]

    parent = np.empty(nodes, np.int64)
    pedge = np.empty(nodes, np.int64)
    depth = np.empty(nodes, np.int64)
    pi = np.empty(nodes, np.float64)
    first_child = np.full(nodes, -1, np.int64)
    next_sib = np.full(nodes, -1, np.int64)
    prev_sib = np.full(nodes, -1, np.int64)
    parent[root] = -1
    pedge[root] = -1
    depth[root] = 0
    pi[root] = 0.0
    for v in range(nodes - 1):
        parent[v] = root
        pedge[v] = e_real + v
        depth[v] = 1
        pi[v] = faux if v < m else -faux
        f = first_child[root]
        next_sib[v] = f
        prev_sib[v] = -1
        if f >= 0:
            prev_sib[f] = v
        first_child[root] = v

    chain = np.empty(nodes, np.int64)
    chain_edge = np.empty(nodes, np.int64)
    stack = np.empty(nodes, np.int64)

    block = int(np.sqrt(e_total)) + 1
    pos = 0
    max_iter = 100 * e_total + 10000
    it = 0
    while True:
        it += 1
        if it > max_iter:
            return -1.0
        if it % nodes == 0:
            # potentials drift by float rounding across subtree updates;
            # rebuild them exactly from the tree now and then
            top = 0
            stack[top] = root
            top += 1
            while top > 0:
                top -= 1
                x = stack[top]
                if x != root:
                    pe = pedge[x]
                    if pe < e_real:
                        te = pe // n
                        ce = dist[te, pe % n] + PERTURB * pe
                    else:
                        te = art_tail[pe - e_real]
                        ce = faux
                    if te == x:
                        pi[x] = ce + pi[parent[x]]
                    else:
                        pi[x] = pi[parent[x]] - ce
                ch = first_child[x]
                while ch >= 0:
                    stack[top] = ch
                    top += 1
                    ch = next_sib[ch]

        # entering arc: best reduced cost within a scanning block
        enter = np.int64(-1)
        scanned = 0
        while scanned < e_total:
            stop = pos + block
            if stop > e_total:
                stop = e_total
            best = -EPS
            for e in range(pos, stop):
                if e < e_real:
                    te = e // n
                    he = m + e % n
                    ce = dist[te, he - m] + PERTURB * e
                else:
                    te = art_tail[e - e_real]
                    he = art_head[e - e_real]
                    ce = faux
                if pedge[te] == e or pedge[he] == e:
                    continue
                rc = ce - pi[te] + pi[he]
                if rc < best:
                    best = rc
                    enter = e
            scanned += stop - pos
            pos = 0 if stop == e_total else stop
            if enter >= 0:
                break
        if enter < 0:
            break

        if enter < e_real:
            u = enter // n
            v = m + enter % n
        else:
            u = art_tail[enter - e_real]
            v = art_head[enter - e_real]

        # walk both endpoints to the apex, tracking the blocking arc
        delta = np.int64(-1)
        leave_node = np.int64(-1)
        a = u
        b = v
        while depth[a] > depth[b]:
            pe = pedge[a]
            down = (pe >= e_real and art_tail[pe - e_real] == a) or (
                pe < e_real and pe // n == a
            )
            # tail-side path: an arc pointing up loses flow
            if down and (delta < 0 or flow[pe] < delta):
                delta = flow[pe]
                leave_node = a
            a = parent[a]
        while depth[b] > depth[a]:
            pe = pedge[b]
            down = (pe >= e_real and art_tail[pe - e_real] == b) or (
                pe < e_real and pe // n == b
            )
            # head-side path: an arc pointing up gains flow
            if (not down) and (delta < 0 or flow[pe] < delta):
                delta = flow[pe]
                leave_node = b
            b = parent[b]
        while a != b:
            pe = pedge[a]
            down = (pe >= e_real and art_tail[pe - e_real] == a) or (
                pe < e_real and pe // n == a
            )
            if down and (delta < 0 or flow[pe] < delta):
                delta = flow[pe]
                leave_node = a
            a = parent[a]
            pe = pedge[b]
            down = (pe >= e_real and art_tail[pe - e_real] == b) or (
                pe < e_real and pe // n == b
            )
            if (not down) and (delta < 0 or flow[pe] < delta):
                delta = flow[pe]
                leave_node = b
            b = parent[b]
        apex = a
        if delta < 0:
            return -2.0

        # augment around the cycle
        flow[enter] += delta
        a = u
        while a != apex:
            pe = pedge[a]
            down = (pe >= e_real and art_tail[pe - e_real] == a) or (
                pe < e_real and pe // n == a
            )
            flow[pe] += -delta if down else delta
            a = parent[a]
        b = v
        while b != apex:
            pe = pedge[b]
            down = (pe >= e_real and art_tail[pe - e_real] == b) or (
                pe < e_real and pe // n == b
            )
            flow[pe] += delta if down else -delta
            b = parent[b]

        # rebuild the tree: cut at leave_node, re-root its subtree at the
        # entering endpoint inside it, hang that under the other endpoint
        w = leave_node
        q_in = u
        # leave_node lies on the tail-side path iff it is an ancestor of u
        x = u
        on_tail = False
        while True:
            if x == w:
                on_tail = True
                break
            if x == apex:
                break
            x = parent[x]
        if not on_tail:
            q_in = v
        p_out = v if q_in == u else u
        rc_enter = np.float64(0.0)
        if enter < e_real:
            rc_enter = dist[u, v - m] + PERTURB * enter - pi[u] + pi[v]
        else:
            rc_enter = faux - pi[u] + pi[v]
        d_pi = rc_enter if q_in == u else -rc_enter

        # collect the chain q_in .. w
        k = 0
        x = q_in
        while True:
            chain[k] = x
            chain_edge[k] = pedge[x]
            if x == w:
                break
            x = parent[x]
            k += 1
        # cut w from its parent
        pw = parent[w]
        pr = prev_sib[w]
        nx = next_sib[w]
        if pr >= 0:
            next_sib[pr] = nx
        else:
            first_child[pw] = nx
        if nx >= 0:
            prev_sib[nx] = pr
        # reverse parent pointers along the chain
        for j in range(k - 1, -1, -1):
            lo = chain[j]
            hi = chain[j + 1]
            # detach lo from hi
            pr = prev_sib[lo]
            nx = next_sib[lo]
            if pr >= 0:
                next_sib[pr] = nx
            else:
                first_child[hi] = nx
            if nx >= 0:
                prev_sib[nx] = pr
            # attach hi under lo
            f = first_child[lo]
            next_sib[hi] = f
            prev_sib[hi] = -1
            if f >= 0:
                prev_sib[f] = hi
            first_child[lo] = hi
            parent[hi] = lo
            pedge[hi] = chain_edge[j]
        # attach q_in under p_out via the entering arc
        parent[q_in] = p_out
        pedge[q_in] = enter
        f = first_child[p_out]
        next_sib[q_in] = f
        prev_sib[q_in] = -1
        if f >= 0:
            prev_sib[f] = q_in
        first_child[p_out] = q_in
        # refresh depth and potentials across the moved subtree
        top = 0
        stack[top] = q_in
        top += 1
        while top > 0:
            top -= 1
            x = stack[top]
            depth[x] = depth[parent[x]] + 1
            pi[x] += d_pi
            ch = first_child[x]
            while ch >= 0:
                stack[top] = ch
                top += 1
                ch = next_sib[ch]

    # feasibility: artificial arcs must end empty
    for v in range(nodes - 1):
        if flow[e_real + v] != 0:
            return -3.0
    obj = 0.0
    for e in range(e_real):
        if flow[e] > 0:
            obj += flow[e] * dist[e // n, e % n]
    return obj


_PURE = os.environ.get("DDSMC_PURE_PYTHON", "") not in ("", "0")
solve_transport_pure = _solve_transport
if not _PURE:
    try:
        import numba

        solve_transport = numba.njit(cache=True, nogil=True)(_solve_transport)
    except ImportError:
        solve_transport = _solve_transport
else:
    solve_transport = _solve_transport


def transport_objective(sup, dem, dist, *, pure: bool = False) -> float:
    """Checked wrapper.  Raises on solver failure codes."""
    sup = np.ascontiguousarray(sup, dtype=np.int64)
    dem = np.ascontiguousarray(dem, dtype=np.int64)
    dist = np.ascontiguousarray(dist, dtype=np.float64)
    if sup.size == 0 or dem.size == 0:
        raise ValueError("transport requires nonempty marginals")
    if sup.sum() != dem.sum():
        raise ValueError("transport marginals must balance exactly")
    fn = solve_transport_pure if pure else solve_transport
    obj = fn(sup, dem, dist)
    if obj == -1.0:
        raise RuntimeError("transport solver exceeded its pivot budget")
    if obj == -2.0 or obj == -3.0:
        raise RuntimeError("transport solver lost feasibility")
    return obj
