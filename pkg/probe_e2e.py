import time
import numpy as np
from proxymatch.synth import FractureSpec, generate
from proxymatch.matcher import MatchConfig, build_matcher_proxies
from proxymatch.assembly import assemble_pair

variants = {
    "default": MatchConfig(),
    "widefine": MatchConfig(proxy_dims=((32, 128), (32, 64), (32, 64))),
}

for shape in ("ellipsoid", "superquadric"):
    for name, cfg in variants.items():
        proxies = build_matcher_proxies(cfg)
        errs, counts, ratios = [], [], []
        t0 = time.time()
        for seed in range(10):
            spec = FractureSpec(shape=shape, parts=2, cut="jittered-plane",
                                amplitude=0.03, seed=seed)
            s = generate(spec)
            b = 1 - s.anchor
            res = assemble_pair(s.parts[b], s.parts[s.anchor], cfg,
                                proxies=proxies, gt_transform=s.poses[b])
            if res.ok:
                errs.append(np.degrees(res.metrics["rotation_error_rad"]))
                counts.append(res.correspondence_count)
                ratios.append(res.inlier_ratio)
            else:
                errs.append(float("nan"))
                counts.append(0)
                ratios.append(0.0)
        el = time.time() - t0
        errs = np.array(errs)
        ok = np.sum(errs < 5.0)
        print(f"{shape:13s} {name:9s} ok={ok}/10  "
              f"err(deg) med={np.nanmedian(errs):7.2f} "
              f"errs={[f'{e:.1f}' for e in errs]} "
              f"corr med={int(np.median(counts))} ratio med={np.median(ratios):.2f} "
              f"({el:.0f}s)")
