import numpy as np
from proxymatch.synth import FractureSpec, generate
from proxymatch.features import (build_pyramid, describe_base, relief_block,
                                 _tile_to_dim, _tile_plain, _standardize_columns)
from proxymatch.geometry import knn
from proxymatch.matcher import MatchConfig, build_matcher_proxies, _level_stack, _unit_rows
from proxymatch.pmt import pmt_stack
from scipy.spatial import cKDTree

for shape, seed in (("ellipsoid", 0), ("superquadric", 1)):
    s = generate(FractureSpec(shape=shape, parts=2, cut="jittered-plane", seed=seed))
    a, b = s.anchor, 1 - s.anchor
    pb, pa = s.parts[b], s.parts[a]
    ob, oa = s.originals[b].points, s.originals[a].points
    dtrue, jtrue = cKDTree(oa).query(ob)
    has = dtrue < 0.025

    def fine_vals(p):
        blocks = []
        for nb in (16, 32, 64):
            t = knn(p, p, nb)
            blocks.append(describe_base(p, t))
        blocks.append(relief_block(p, t))
        return np.hstack(blocks)

    fb, fa = fine_vals(pb), fine_vals(pa)
    variants = {
        "ms unit":   (_tile_to_dim(fb, 128), _tile_to_dim(fa, 128)),
        "ms zscore": (_tile_plain(_standardize_columns(fb), 128),
                      _tile_plain(_standardize_columns(fa), 128)),
    }
    cfg = MatchConfig(proxy_dims=((32, 128), (64, 128), (64, 128)))
    proxies = build_matcher_proxies(cfg)
    pyr_b, pyr_a = build_pyramid(pb), build_pyramid(pa)
    for nm, (vb, va) in list(variants.items()):
        sb = _unit_rows(pmt_stack(vb, _level_stack(pyr_b.clouds[2], 2, cfg, proxies), "X"))
        sa = _unit_rows(pmt_stack(va, _level_stack(pyr_a.clouds[2], 2, cfg, proxies), "Y"))
        variants[nm + "+stack"] = (sb, sa)

    ta = cKDTree(oa)
    for nm, (vb, va) in variants.items():
        idx = np.where(has)[0][::7][:150]
        top1, margins = 0, []
        for xi in idx:
            cand = np.asarray(ta.query_ball_point(oa[jtrue[xi]], 0.15))
            d = np.linalg.norm(va[cand] - vb[xi], axis=1)
            c = np.where(cand == jtrue[xi])[0]
            if c.size == 0:
                continue
            top1 += int(d[c[0]] == d.min())
            margins.append(d[c[0]] - np.median(d))
        print(f"{shape:12s} s={seed} {nm:16s} top1={top1/len(idx):.2f} "
              f"margin(med)={np.median(margins):+.3f}")
    print()
