import numpy as np
from proxymatch.synth import FractureSpec, generate
from proxymatch.features import build_pyramid
from proxymatch.matcher import (MatchConfig, build_matcher_proxies, _unit_rows,
                                _level_stack, topk_matches, coarse_scores,
                                group_point_to_node)
from proxymatch.pmt import pmt_stack
from scipy.spatial import cKDTree

ladders = {
    "(8,32)":    ((32, 128), (16, 64), (8, 32)),
    "(32,64)":   ((32, 128), (32, 64), (32, 64)),
    "(64,128)":  ((32, 128), (64, 128), (64, 128)),
    "(128,128)": ((32, 128), (128, 128), (128, 128)),
}

for shape, seed in (("ellipsoid", 0), ("superquadric", 1)):
    s = generate(FractureSpec(shape=shape, parts=2, cut="jittered-plane", seed=seed))
    a, b = s.anchor, 1 - s.anchor
    pyr_b, pyr_a = build_pyramid(s.parts[b]), build_pyramid(s.parts[a])
    ob, oa = s.originals[b].points, s.originals[a].points
    dtrue, jtrue = cKDTree(oa).query(ob)
    has = dtrue < 0.025

    for name, pd in ladders.items():
        cfg = MatchConfig(proxy_dims=pd)
        proxies = build_matcher_proxies(cfg)

        def desc(pyr, side):
            mid_out = pmt_stack(pyr.features[1].values, _level_stack(pyr.clouds[1], 1, cfg, proxies), side)
            fine_out = pmt_stack(pyr.features[2].values, _level_stack(pyr.clouds[2], 2, cfg, proxies), side)
            return np.hstack([_unit_rows(fine_out), _unit_rows(mid_out)[pyr.parent_fine_to_mid]]) / np.sqrt(2)

        db, da = desc(pyr_b, "X"), desc(pyr_a, "Y")
        cx = _unit_rows(pmt_stack(pyr_b.features[0].values, _level_stack(pyr_b.clouds[0], 0, cfg, proxies), "X"))
        cy = _unit_rows(pmt_stack(pyr_a.features[0].values, _level_stack(pyr_a.clouds[0], 0, cfg, proxies), "Y"))
        matches = topk_matches(coarse_scores(cx, cy), 128)
        gb = group_point_to_node(pyr_b.parent_fine_to_mid, pyr_b.parent_mid_to_coarse, len(pyr_b.clouds[0]))
        ga = group_point_to_node(pyr_a.parent_fine_to_mid, pyr_a.parent_mid_to_coarse, len(pyr_a.clouds[0]))

        td, fd, top1 = [], [], 0
        for cm in matches:
            mx, my = gb[cm.x], ga[cm.y]
            if mx.size == 0 or my.size == 0:
                continue
            pos = {j: t for t, j in enumerate(my)}
            dmat = np.linalg.norm(db[mx][:, None] - da[my][None, :], axis=2)
            for r, xi in enumerate(mx):
                if has[xi] and jtrue[xi] in pos:
                    c = pos[jtrue[xi]]
                    td.append(dmat[r, c])
                    others = np.delete(dmat[r], c)
                    fd.append(np.median(others))
                    top1 += int(dmat[r, c] == dmat[r].min())
        td, fd = np.array(td), np.array(fd)
        if td.size:
            print(f"{shape:12s} s={seed} {name:10s} reach={td.size:3d} "
                  f"top1={top1 / td.size:.2f} d_true={np.median(td):.3f} "
                  f"d_false={np.median(fd):.3f}")
        else:
            print(f"{shape:12s} s={seed} {name:10s} reach=0")
