import numpy as np
from proxymatch.synth import FractureSpec, generate
from proxymatch.features import build_pyramid
from proxymatch.matcher import (MatchConfig, build_matcher_proxies, _unit_rows,
                                _level_stack)
from proxymatch.pmt import pmt_stack
from scipy.spatial import cKDTree

for pd in (((32, 128), (16, 64), (8, 32)), ((32, 128), (64, 128), (64, 128))):
    for shape, seed in (("ellipsoid", 0), ("superquadric", 1)):
        cfg = MatchConfig(proxy_dims=pd)
        proxies = build_matcher_proxies(cfg)
        s = generate(FractureSpec(shape=shape, parts=2, cut="jittered-plane", seed=seed))
        a, b = s.anchor, 1 - s.anchor
        pyr_b, pyr_a = build_pyramid(s.parts[b]), build_pyramid(s.parts[a])
        ob, oa = s.originals[b].points, s.originals[a].points
        dtrue, jtrue = cKDTree(oa).query(ob)
        has = dtrue < 0.02

        def desc(pyr, side):   # refined descriptors WITHOUT FINE_SCALE
            mid_out = pmt_stack(pyr.features[1].values, _level_stack(pyr.clouds[1], 1, cfg, proxies), side)
            fine_out = pmt_stack(pyr.features[2].values, _level_stack(pyr.clouds[2], 2, cfg, proxies), side)
            return np.hstack([_unit_rows(fine_out), _unit_rows(mid_out)[pyr.parent_fine_to_mid]]) / np.sqrt(2)

        vb, va = desc(pyr_b, "X"), desc(pyr_a, "Y")
        ta = cKDTree(oa)
        idx = np.where(has)[0][::5][:200]
        hit1 = hit5 = used = 0
        dt, df = [], []
        for xi in idx:
            cand = np.asarray(ta.query_ball_point(oa[jtrue[xi]], 0.15))
            geo = np.linalg.norm(oa[cand] - oa[jtrue[xi]], axis=1)
            d = np.linalg.norm(va[cand] - vb[xi], axis=1)
            used += 1
            top = np.argsort(d)
            hit1 += int(geo[top[0]] < 0.05)
            hit5 += int((geo[top[:5]] < 0.05).any())
            near = geo < 0.05
            if near.any() and (~near).any():
                dt.append(d[near].min())
                df.append(np.median(d[~near]))
        print(f"pd={pd[2]} {shape:12s} s={seed} hit1={hit1/used:.2f} hit5={hit5/used:.2f} "
              f"d_true={np.median(dt):.3f} d_false={np.median(df):.3f}")
