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

def pool(vals, p, k):
    t = knn(p, p, k)
    w = t.valid / np.maximum(t.valid.sum(1, keepdims=True), 1)
    return np.einsum("qk,qkd->qd", w, vals[t.indices])

for shape, seed in (("ellipsoid", 0), ("superquadric", 1)):
    s = generate(FractureSpec(shape=shape, parts=2, cut="jittered-plane", seed=seed))
    a, b = s.anchor, 1 - s.anchor
    pb, pa = s.parts[b], s.parts[a]
    ob, oa = s.originals[b].points, s.originals[a].points
    dtrue, jtrue = cKDTree(oa).query(ob)
    has = dtrue < 0.02
    fb, fa = fine_raw(pb), fine_raw(pa)

    # noise estimate per column: median |F(x) - F(nn1(x))| within cloud A
    t1 = knn(pa, pa, 2)
    nn1 = t1.indices[:, 1]
    noise = np.median(np.abs(fa - fa[nn1]), axis=0)

    variants = {}
    variants["raw/noise"] = (fb / np.maximum(noise, 1e-9), fa / np.maximum(noise, 1e-9))
    for k in (16, 32, 64):
        pb_, pa_ = pool(fb, pb, k), pool(fa, pa, k)
        t1p = knn(pa, pa, 2)
        noise_p = np.median(np.abs(pa_ - pa_[t1p.indices[:, 1]]), axis=0)
        variants[f"pool{k}/noise"] = (pb_ / np.maximum(noise_p, 1e-9),
                                      pa_ / np.maximum(noise_p, 1e-9))
        if k == 32:
            cat_b = np.hstack([fb / np.maximum(noise, 1e-9), pb_ / np.maximum(noise_p, 1e-9)])
            cat_a = np.hstack([fa / np.maximum(noise, 1e-9), pa_ / np.maximum(noise_p, 1e-9)])
            variants["raw+pool32/noise"] = (cat_b, cat_a)

    ta = cKDTree(oa)
    for nm, (vb, va) in variants.items():
        idx = np.where(has)[0][::5][:200]
        top1, top5 = 0, 0
        used = 0
        for xi in idx:
            cand = np.asarray(ta.query_ball_point(oa[jtrue[xi]], 0.15))
            d = np.linalg.norm(va[cand] - vb[xi], axis=1)
            c = np.where(cand == jtrue[xi])[0]
            if c.size == 0:
                continue
            used += 1
            rank = (d < d[c[0]]).sum()
            top1 += int(rank == 0)
            top5 += int(rank < 5)
        print(f"{shape:12s} s={seed} {nm:18s} top1={top1/used:.2f} top5={top5/used:.2f} (pool~{len(cand)})")
    print()
