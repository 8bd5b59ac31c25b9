"""Does the coarse PMT stack help or hurt coarse ranking?"""
import numpy as np

from proxymatch import synth
from proxymatch.features import build_pyramid
from proxymatch.pmt import pmt_stack
from proxymatch.matcher import (MatchConfig, build_matcher_proxies,
                                _level_stack, _unit_rows, coarse_scores,
                                topk_matches)


def t_rel(s):
    return s.poses[1].inverse().compose(s.poses[0])


def ranks(S, D):
    nn_dist = D.min(axis=1)
    out = []
    for i in range(S.shape[0]):
        if nn_dist[i] > 0.12:
            continue
        order = np.argsort(-S[i])
        geo = D[i][order]
        out.append(int(np.argmax(geo < 0.15)) if (geo < 0.15).any() else 999)
    return np.array(out)


for shape, seed in (("ellipsoid", 0), ("superquadric", 1),
                    ("superquadric", 2)):
    spec = synth.FractureSpec(shape=shape, seed=seed, frequency=6.0,
                              total_points=5000)
    s = synth.generate(spec)
    T = t_rel(s)
    px, py = build_pyramid(s.parts[0]), build_pyramid(s.parts[1])
    cfg = MatchConfig()
    pr = build_matcher_proxies(cfg)
    D = np.linalg.norm(T.apply(px.clouds[0].points)[:, None, :]
                       - py.clouds[0].points[None, :, :], axis=2)
    raw_x = _unit_rows(px.features[0].values)
    raw_y = _unit_rows(py.features[0].values)
    st_x = _unit_rows(pmt_stack(px.features[0],
                                _level_stack(px.clouds[0], 0, cfg, pr), "X"))
    st_y = _unit_rows(pmt_stack(py.features[0],
                                _level_stack(py.clouds[0], 0, cfg, pr), "Y"))
    for name, fx, fy in (("raw ", raw_x, raw_y), ("stack", st_x, st_y)):
        S = coarse_scores(fx, fy)
        r = ranks(S, D)
        matches = topk_matches(S, min(cfg.k, S.size))
        pd = np.array([D[cm.x, cm.y] for cm in matches])
        print(f"{shape}/{seed} {name}: rank<=1={np.mean(r <= 1):.2f} "
              f"rank<=3={np.mean(r <= 3):.2f} "
              f"top128 d<0.15={np.mean(pd < .15):.2f} "
              f"d<0.25={np.mean(pd < .25):.2f}", flush=True)
