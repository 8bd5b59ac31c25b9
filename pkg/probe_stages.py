import numpy as np
from proxymatch.synth import FractureSpec, generate
from proxymatch.matcher import MatchConfig, build_matcher_proxies, match_pair
from proxymatch.features import build_pyramid
from scipy.spatial import cKDTree

cfg = MatchConfig()
proxies = build_matcher_proxies(cfg)

for shape in ("ellipsoid", "superquadric"):
    for seed in range(3):
        spec = FractureSpec(shape=shape, parts=2, cut="jittered-plane",
                            amplitude=0.03, seed=seed)
        s = generate(spec)
        a, b = s.anchor, 1 - s.anchor
        pyr_b, pyr_a = build_pyramid(s.parts[b]), build_pyramid(s.parts[a])
        ob, oa = s.originals[b].points, s.originals[a].points

        res, patches = match_pair(pyr_b, pyr_a, cfg, proxies, return_patches=True)

        # coarse nodes in original frame: clouds[0] indices -> need origin indices.
        # pyramid clouds are built from the POSED part; original has same order.
        # coarse cloud points are centroids, not input subsets; map via nearest
        # input point of the posed part (exact enough for recall measurement).
        tb = cKDTree(s.parts[b].points); ta = cKDTree(s.parts[a].points)
        _, ib = tb.query(pyr_b.clouds[0].points); _, ia = ta.query(pyr_a.clouds[0].points)
        cb, ca = ob[ib], oa[ia]
        nn = np.median(cKDTree(cb).query(cb, k=2)[0][:, 1])
        good = 0
        for p in patches:
            if np.linalg.norm(cb[p.coarse.x] - ca[p.coarse.y]) < 2.5 * nn:
                good += 1
        # patch row coverage: fine B points whose true counterpart is in a patch
        taf = cKDTree(oa)
        d_true, j_true = taf.query(ob)           # true counterpart index in A, by original geometry
        has_true = d_true < 0.03
        covered = np.zeros(len(ob), bool)
        for p in patches:
            ymem = set(p.members_y.tolist())
            for xi in p.members_x:
                if has_true[xi] and j_true[xi] in ymem:
                    covered[xi] = True
        n_corr = 0 if not hasattr(res, "src_indices") else len(res)
        if n_corr:
            resid = np.linalg.norm(ob[res.src_indices] - oa[res.dst_indices], axis=1)
            inl = float((resid < 0.05).mean())
        else:
            inl = 0.0
        print(f"{shape:12s} s={seed} patches={len(patches):3d} good={good:3d} "
              f"cover={covered[has_true].mean() if has_true.any() else 0:.2f} "
              f"n={n_corr:4d} inl={inl:.3f}")
