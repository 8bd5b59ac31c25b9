import numpy as np
from proxymatch.synth import FractureSpec, generate
from proxymatch.features import build_pyramid
from proxymatch.matcher import MatchConfig, build_matcher_proxies, _level_stack, _unit_rows
from proxymatch.pmt import pmt_stack
from scipy.spatial import cKDTree

cfg = MatchConfig()
proxies = build_matcher_proxies(cfg)

def zscore(m):
    mu, sd = m.mean(axis=0), m.std(axis=0)
    return (m - mu) / np.maximum(sd, 1e-9)

for shape in ("ellipsoid", "superquadric"):
    for seed in range(3):
        s = generate(FractureSpec(shape=shape, parts=2, cut="jittered-plane", seed=seed))
        a, b = s.anchor, 1 - s.anchor
        pyr_b, pyr_a = build_pyramid(s.parts[b]), build_pyramid(s.parts[a])
        ob, oa = s.originals[b].points, s.originals[a].points
        tb = cKDTree(s.parts[b].points); ta = cKDTree(s.parts[a].points)
        _, ib = tb.query(pyr_b.clouds[0].points); _, ia = ta.query(pyr_a.clouds[0].points)
        cb, ca = ob[ib], oa[ia]
        nn = np.median(cKDTree(cb).query(cb, k=2)[0][:, 1])
        dgeo = np.linalg.norm(cb[:, None] - ca[None, :], axis=2)
        true = dgeo < 2.5 * nn          # geometrically close node pairs
        n_true = int(true.sum())

        def recall(fb, fa, tag):
            d2 = ((fb[:, None] - fa[None, :]) ** 2).sum(axis=2)
            order = np.argsort(d2.ravel())[:128]
            hits = true.ravel()[order].sum()
            print(f"  {tag:22s} top128 hits={int(hits):3d}/{n_true}")

        fb0, fa0 = pyr_b.features[0].values, pyr_a.features[0].values
        recall(_unit_rows(fb0), _unit_rows(fa0), "raw unit")
        recall(zscore(fb0) / np.sqrt(fb0.shape[1]), zscore(fa0) / np.sqrt(fa0.shape[1]), "raw zscore")
        sb = _unit_rows(pmt_stack(fb0, _level_stack(pyr_b.clouds[0], 0, cfg, proxies), "X"))
        sa = _unit_rows(pmt_stack(fa0, _level_stack(pyr_a.clouds[0], 0, cfg, proxies), "Y"))
        recall(sb, sa, "stack unit")
        zb = pmt_stack(zscore(fb0) / np.sqrt(fb0.shape[1]), _level_stack(pyr_b.clouds[0], 0, cfg, proxies), "X")
        za = pmt_stack(zscore(fa0) / np.sqrt(fa0.shape[1]), _level_stack(pyr_a.clouds[0], 0, cfg, proxies), "Y")
        recall(_unit_rows(zb), _unit_rows(za), "zscore->stack unit")
        print(f"{shape} s={seed} nodes={len(cb)}x{len(ca)} true={n_true}")
