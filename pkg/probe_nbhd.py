import numpy as np
from proxymatch.synth import FractureSpec, generate
from proxymatch.features import describe_base, relief_block
from proxymatch.geometry import knn
from scipy.spatial import cKDTree

def fine_raw(p):
    blocks = []
    for nb in (16, 32, 64):
        t = knn(p, p, nb)
        blocks.append(describe_base(p, t))
    blocks.append(relief_block(p, t))
    return np.hstack(blocks)

for shape, seed in (("ellipsoid", 0), ("superquadric", 1)):
    s = generate(FractureSpec(shape=shape, parts=2, cut="jittered-plane", seed=seed))
    a, b = s.anchor, 1 - s.anchor
    pb, pa = s.parts[b], s.parts[a]
    ob, oa = s.originals[b].points, s.originals[a].points
    dtrue, jtrue = cKDTree(oa).query(ob)
    has = dtrue < 0.02
    fb, fa = fine_raw(pb), fine_raw(pa)
    t1 = knn(pa, pa, 2)
    noise = np.median(np.abs(fa - fa[t1.indices[:, 1]]), axis=0)
    vb, va = fb / np.maximum(noise, 1e-9), fa / np.maximum(noise, 1e-9)

    ta = cKDTree(oa)
    idx = np.where(has)[0][::5][:200]
    bins = [(0, 0.05), (0.05, 0.10), (0.10, 0.15)]
    dists = {bn: [] for bn in bins}
    hit5 = 0; used = 0
    for xi in idx:
        cand = np.asarray(ta.query_ball_point(oa[jtrue[xi]], 0.15))
        geo = np.linalg.norm(oa[cand] - oa[jtrue[xi]], axis=1)
        d = np.linalg.norm(va[cand] - vb[xi], axis=1)
        for bn in bins:
            m = (geo >= bn[0]) & (geo < bn[1])
            if m.any():
                dists[bn].append(d[m].min())
        used += 1
        # top-5 by descriptor distance: are any within 0.05 geometrically?
        top = np.argsort(d)[:5]
        hit5 += int((geo[top] < 0.05).any())
    print(f"{shape:12s} s={seed} hit5(<0.05)={hit5/used:.2f}  " +
          "  ".join(f"d[{lo:.2f}-{hi:.2f}]={np.median(v):.1f}" for (lo, hi), v in dists.items()))
