import numpy as np
from proxymatch.synth import FractureSpec, generate
from proxymatch.features import build_pyramid
from proxymatch.matcher import (MatchConfig, build_matcher_proxies, _unit_rows,
                                _level_stack, topk_matches, coarse_scores,
                                group_point_to_node)
from proxymatch.pmt import pmt_stack
from scipy.spatial import cKDTree

cfg = MatchConfig()
proxies = build_matcher_proxies(cfg)

for shape, seed in (("ellipsoid", 0), ("superquadric", 2), ("superquadric", 1)):
    s = generate(FractureSpec(shape=shape, parts=2, cut="jittered-plane", seed=seed))
    a, b = s.anchor, 1 - s.anchor
    pyr_b, pyr_a = build_pyramid(s.parts[b]), build_pyramid(s.parts[a])
    ob, oa = s.originals[b].points, s.originals[a].points

    # refined fine descriptors without FINE_SCALE
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

    dtrue, jtrue = cKDTree(oa).query(ob)
    has = dtrue < 0.025
    td, fd = [], []
    for cm in matches:
        mx, my = gb[cm.x], ga[cm.y]
        if mx.size == 0 or my.size == 0:
            continue
        pos = {j: t for t, j in enumerate(my)}
        dmat = np.linalg.norm(db[mx][:, None] - da[my][None, :], axis=2)
        for r, xi in enumerate(mx):
            if has[xi] and jtrue[xi] in pos:
                td.append(dmat[r, pos[jtrue[xi]]])
                fd.extend(dmat[r, [c for c in range(my.size) if c != pos[jtrue[xi]]]][:5])
    td, fd = np.array(td), np.array(fd)
    if td.size:
        print(f"{shape} s={seed}: true pairs reachable={td.size} "
              f"d_true q25/50/75={np.percentile(td,25):.3f}/{np.median(td):.3f}/{np.percentile(td,75):.3f} "
              f"d_false q25/50={np.percentile(fd,25):.3f}/{np.median(fd):.3f}")
    else:
        print(f"{shape} s={seed}: no reachable true pairs")
