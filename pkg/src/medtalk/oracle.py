"""Loop-based reference implementations of the evaluation metrics.

Deliberately naive: plain Python loops over frames and controllers with no
numpy reductions, so they share nothing with the vectorized versions in
``metrics`` beyond the definitions themselves.
"""
import math


def _rows(rig):
    v = getattr(rig, "values", rig)
    return [[float(x) for x in row] for row in v]


def region_l1(pred, gt, indices):
    p, g = _rows(pred), _rows(gt)
    total, count = 0.0, 0
    for t in range(len(g)):
        for j in indices:
            total += abs(p[t][j] - g[t][j])
            count += 1
    return total / count


def mle(pred, gt, sets):
    return region_l1(pred, gt, sets.lip)


def mee(pred, gt, sets):
    return region_l1(pred, gt, sets.emo)


def intensity(rig, indices):
    out = []
    for row in _rows(rig):
        s = 0.0
        for j in indices:
            s += abs(row[j])
        out.append(s)
    return out


def eie(pred, gt, sets):
    ip, ig = intensity(pred, sets.intensity), intensity(gt, sets.intensity)
    return sum(abs(a - b) for a, b in zip(ip, ig)) / len(ig)


def population_std(xs):
    mean = sum(xs) / len(xs)
    return math.sqrt(sum((x - mean) ** 2 for x in xs) / len(xs))


def frd(pred, gt, sets):
    p, g = _rows(pred), _rows(gt)
    total = 0.0
    for j in sets.up:
        total += population_std([r[j] for r in g]) - population_std([r[j] for r in p])
    return total / len(sets.up)
