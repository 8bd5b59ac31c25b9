"""Decompose: coarse-pair precision vs within-correct-patch fine accuracy."""
import numpy as np

from proxymatch import synth
from proxymatch.features import build_pyramid
from proxymatch.pmt import pmt_stack
from proxymatch.matcher import (MatchConfig, build_matcher_proxies,
                                _level_stack, _unit_rows, coarse_scores,
                                topk_matches, group_point_to_node,
                                refined_fine_descriptors)


def t_rel(s):
    return s.poses[1].inverse().compose(s.poses[0])


for shape, seed in (("ellipsoid", 0), ("superquadric", 1),
                    ("superquadric", 2)):
    spec = synth.FractureSpec(shape=shape, seed=seed, frequency=6.0,
                              total_points=5000)
    s = synth.generate(spec)
    T = t_rel(s)
    px, py = build_pyramid(s.parts[0]), build_pyramid(s.parts[1])
    cfg = MatchConfig()
    pr = build_matcher_proxies(cfg)
    fx = _unit_rows(pmt_stack(px.features[0],
                              _level_stack(px.clouds[0], 0, cfg, pr), "X"))
    fy = _unit_rows(pmt_stack(py.features[0],
                              _level_stack(py.clouds[0], 0, cfg, pr), "Y"))
    S = coarse_scores(fx, fy)
    cx, cy = px.clouds[0].points, py.clouds[0].points
    gx = T.apply(cx)
    D = np.linalg.norm(gx[:, None, :] - cy[None, :, :], axis=2)
    nn_dist = D.min(axis=1)
    rank_of_best = []
    for i in range(len(cx)):
        if nn_dist[i] > 0.12:
            continue
        order = np.argsort(-S[i])
        geo = D[i][order]
        rank_of_best.append(int(np.argmax(geo < 0.15)) if (geo < 0.15).any()
                            else 999)
    rank_of_best = np.array(rank_of_best)
    matches = topk_matches(S, min(cfg.k, S.size))
    pair_d = np.array([D[cm.x, cm.y] for cm in matches])
    print(f"{shape}/{seed}: coarse {len(cx)}x{len(cy)} "
          f"with-counterpart={len(rank_of_best)} "
          f"rank<=1={np.mean(rank_of_best <= 1):.2f} "
          f"rank<=3={np.mean(rank_of_best <= 3):.2f}")
    print(f"  top-{len(matches)}: d<0.15={np.mean(pair_d < .15):.2f} "
          f"d<0.25={np.mean(pair_d < .25):.2f} med_d={np.median(pair_d):.2f}")
    gX = group_point_to_node(px.parent_fine_to_mid, px.parent_mid_to_coarse,
                             len(px.clouds[0]))
    gY = group_point_to_node(py.parent_fine_to_mid, py.parent_mid_to_coarse,
                             len(py.clouds[0]))
    dX = refined_fine_descriptors(px, cfg, pr, "X")
    dY = refined_fine_descriptors(py, cfg, pr, "Y")
    hits1, hits3, cands = [], [], []
    for cm in matches:
        if D[cm.x, cm.y] >= 0.15:
            continue
        xi, yj = gX[cm.x], gY[cm.y]
        if len(xi) == 0 or len(yj) == 0:
            continue
        gxi = T.apply(px.clouds[2].points[xi])
        geo = np.linalg.norm(
            gxi[:, None, :] - py.clouds[2].points[yj][None, :, :], axis=2)
        has = geo.min(axis=1) < 0.05
        if not has.any():
            continue
        d = np.linalg.norm(dX[xi][:, None, :] - dY[yj][None, :, :], axis=2)
        order = np.argsort(d, axis=1)
        g1 = np.take_along_axis(geo, order[:, :1], axis=1)[has]
        g3 = np.take_along_axis(geo, order[:, :3], axis=1)[has]
        hits1 += list((g1 < 0.05).any(axis=1))
        hits3 += list((g3 < 0.05).any(axis=1))
        cands.append(len(yj))
    print(f"  within-correct-patch: q={len(hits1)} hit1={np.mean(hits1):.2f} "
          f"hit3={np.mean(hits3):.2f} med_cands="
          f"{np.median(cands) if cands else 0:.0f}", flush=True)
