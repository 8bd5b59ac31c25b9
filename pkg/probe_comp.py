import numpy as np
from proxymatch.synth import FractureSpec, generate
from proxymatch.matcher import MatchConfig, build_matcher_proxies, match_pair
from proxymatch.features import build_pyramid
from proxymatch.geometry import kabsch_weighted

cfg = MatchConfig()
proxies = build_matcher_proxies(cfg)

for shape in ("ellipsoid", "superquadric"):
    for seed in range(4):
        spec = FractureSpec(shape=shape, parts=2, cut="jittered-plane",
                            amplitude=0.03, seed=seed)
        s = generate(spec)
        a, b = s.anchor, 1 - s.anchor
        cut = s.cuts[0]
        res = match_pair(build_pyramid(s.parts[b]), build_pyramid(s.parts[a]),
                         cfg, proxies)
        src, dst = res.src_indices, res.dst_indices
        ob, oa = s.originals[b], s.originals[a]
        face_b = np.abs(cut.signed(ob.points)) < 0.045
        face_a = np.abs(cut.signed(oa.points)) < 0.045
        ff = face_b[src] & face_a[dst]          # face-face pairs
        oo = ~face_b[src] & ~face_a[dst]        # outer-outer pairs
        resid = np.linalg.norm(ob.points[src] - oa.points[dst], axis=1)
        true_inl = resid < 0.05
        w = res.weights
        n = len(res)
        print(f"{shape:12s} s={seed} n={n:4d} face-face={ff.mean():.2f} "
              f"outer-outer={oo.mean():.2f} true-inl={true_inl.mean():.3f} "
              f"inl|ff={true_inl[ff].mean() if ff.any() else -1:.2f} "
              f"w(med) inl/out={np.median(w[true_inl]) if true_inl.any() else -1:.3f}"
              f"/{np.median(w[~true_inl]):.3f} "
              f"face frac of cloud={face_b.mean():.2f}")
