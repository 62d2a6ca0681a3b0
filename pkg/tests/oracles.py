"""Independent reference implementations used as test oracles.

Everything here is written from the definitions with plain loops (or
extended-precision arithmetic) and shares no code with the package.
"""

import math

import mpmath
import numpy as np

from scenemotion.metrics import MISS_THRESHOLDS

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = []


# -- metrics ---------------------------------------------------------------------------
def _dist(a, b):
    return math.hypot(a[0] - b[0], a[1] - b[1])


def _agent_ade(s, k, i, h):
    steps = [t for t in range(h) if s.valid[i, t]]
    return sum(_dist(s.pred[k, i, t], s.gt[i, t]) for t in steps) / len(steps) if steps else None


def ref_min_sade(scenes, h):
    vals = []
    for s in scenes:
        agents = [i for i in range(s.gt.shape[0]) if s.valid[i, :h].any()]
        if agents:
            vals.append(min(sum(_agent_ade(s, k, i, h) for i in agents) / len(agents) for k in range(s.n_modes)))
    return sum(vals) / len(vals)


def ref_min_ade(scenes, h):
    vals = []
    for s in scenes:
        agents = [i for i in range(s.gt.shape[0]) if s.valid[i, :h].any()]
        if agents:
            vals.append(sum(min(_agent_ade(s, k, i, h) for k in range(s.n_modes)) for i in agents) / len(agents))
    return sum(vals) / len(vals)


def ref_min_sfde(scenes, h):
    vals = []
    for s in scenes:
        agents = [i for i in range(s.gt.shape[0]) if s.valid[i, h - 1]]
        if agents:
            vals.append(min(sum(_dist(s.pred[k, i, h - 1], s.gt[i, h - 1]) for i in agents) / len(agents)
                            for k in range(s.n_modes)))
    return sum(vals) / len(vals)


def ref_min_fde(scenes, h):
    vals = []
    for s in scenes:
        agents = [i for i in range(s.gt.shape[0]) if s.valid[i, h - 1]]
        if agents:
            vals.append(sum(min(_dist(s.pred[k, i, h - 1], s.gt[i, h - 1]) for k in range(s.n_modes))
                            for i in agents) / len(agents))
    return sum(vals) / len(vals)


def ref_miss_rate(scenes, h, joint):
    tau = MISS_THRESHOLDS[h]
    missed = total = 0
    for s in scenes:
        final = [i for i in range(s.gt.shape[0]) if s.valid[i, h - 1]]
        if not final:
            continue
        if joint:
            agents = [i for i in range(s.gt.shape[0]) if s.valid[i, :h].any()]
            scores = [sum(_agent_ade(s, k, i, h) for i in agents) / len(agents) for k in range(s.n_modes)]
            k = scores.index(min(scores))
            total += 1
            missed += any(_dist(s.pred[k, i, h - 1], s.gt[i, h - 1]) > tau for i in final)
        else:
            for i in final:
                total += 1
                missed += all(_dist(s.pred[k, i, h - 1], s.gt[i, h - 1]) > tau for k in range(s.n_modes))
    return missed / total


def ref_overlap(scenes, h):
    hit = total = 0
    for s in scenes:
        k = int(np.argmax(s.probs))
        N = s.gt.shape[0]
        for i in range(N):
            total += 1
            ri = s.widths[i] / 2
            over = False
            for t in range(h):
                for j in range(N):
                    if j != i and _dist(s.pred[k, i, t], s.pred[k, j, t]) < ri + s.widths[j] / 2:
                        over = True
                for m in range(len(s.others)):
                    if s.others_valid[m, t] and _dist(s.pred[k, i, t], s.others[m, t]) < ri + s.others_widths[m] / 2:
                        over = True
            hit += over
    return hit / total


def ref_ap(hits, n_gt):
    """Area under the interpolated precision/recall curve (each gt at most once)."""
    tp = fp = 0
    points = []
    for hit in hits:
        tp, fp = tp + hit, fp + (not hit)
        points.append((tp / n_gt, tp / (tp + fp)))
    ap, prev_r = 0.0, 0.0
    for j, (r, _) in enumerate(points):
        if r > prev_r:
            ap += (r - prev_r) * max(p for _, p in points[j:])
            prev_r = r
    return ap


def ref_map(scenes, h, joint, soft):
    """mAP: pooled confidence-sorted predictions, first hit per gt counts."""
    tau = MISS_THRESHOLDS[h]
    preds, n_gt = [], 0
    for si, s in enumerate(scenes):
        order = sorted(range(s.n_modes), key=lambda k: (-s.probs[k], k))
        rank = {k: r for r, k in enumerate(order)}
        final = [i for i in range(s.gt.shape[0]) if s.valid[i, h - 1]]
        if not final:
            continue
        units = [tuple(final)] if joint else [(i,) for i in final]
        for u in units:
            n_gt += 1
            for k in range(s.n_modes):
                ok = all(_dist(s.pred[k, i, h - 1], s.gt[i, h - 1]) <= tau for i in u)
                preds.append(((-s.probs[k], rank[k], si, u[0] if not joint else -1), (si, u), ok))
    preds.sort(key=lambda p: p[0])
    matched, hits = set(), []
    for _, gt_id, ok in preds:
        if ok and gt_id not in matched:
            matched.add(gt_id)
            hits.append(True)
        elif ok and soft:
            continue
        else:
            hits.append(False)
    return ref_ap(hits, n_gt)


# -- clustering --------------------------------------------------------------------------
def ref_dbscan(pts, eps, min_pts, return_core=False):
    """O(n^2) DBSCAN from the definitions: cores, core components, borders to the lowest cluster."""
    n = len(pts)
    near = [[(pts[i][0] - pts[j][0]) ** 2 + (pts[i][1] - pts[j][1]) ** 2 <= eps * eps for j in range(n)]
            for i in range(n)]
    core = [sum(near[i]) >= min_pts for i in range(n)]
    comp = list(range(n))  # union-find over core points

    def find(i):
        while comp[i] != i:
            i = comp[i]
        return i

    for i in range(n):
        for j in range(n):
            if core[i] and core[j] and near[i][j]:
                comp[find(i)] = find(j)
    roots = []
    for i in range(n):  # cluster ids ordered by each component's first core point
        if core[i] and find(i) not in roots:
            roots.append(find(i))
    labels = [-1] * n
    for i in range(n):
        if core[i]:
            labels[i] = roots.index(find(i))
        else:
            ids = [roots.index(find(j)) for j in range(n) if core[j] and near[i][j]]
            labels[i] = min(ids) if ids else -1
    return (labels, core) if return_core else labels


def ref_mode_fractions(means_list, eps=2.5, min_pts=2):
    """Per mode, the percentage of focal agents with a waypoint in a multi-agent cluster.

    ``means_list`` holds one (K, N, T, 2) array of global waypoints per scene.
    """
    total = sum(m.shape[1] for m in means_list)
    K = means_list[0].shape[0]
    fr = []
    for k in range(K):
        count = 0
        for means in means_list:
            m = means[k]
            hit = set()
            for t in range(m.shape[1]):
                lab = ref_dbscan(m[:, t].tolist(), eps, min_pts)
                for c in set(lab) - {-1}:
                    members = [i for i, x in enumerate(lab) if x == c]
                    if len(members) >= 2:
                        hit.update(members)
            count += len(hit)
        fr.append(100.0 * count / total)
    return fr


# -- likelihood -------------------------------------------------------------------------
def ref_bivariate_nll(mx, my, sx, sy, rho, x, y, dps=50):
    """Negative log density of a correlated 2-D Gaussian in extended precision."""
    with mpmath.workdps(dps):
        mx, my, sx, sy, rho, x, y = (mpmath.mpf(float(v)) for v in (mx, my, sx, sy, rho, x, y))
        zx, zy = (x - mx) / sx, (y - my) / sy
        one_m = 1 - rho * rho
        q = (zx * zx - 2 * rho * zx * zy + zy * zy) / one_m
        return float(mpmath.log(2 * mpmath.pi * sx * sy * mpmath.sqrt(one_m)) + q / 2)
