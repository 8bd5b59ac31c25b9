"""Descriptor-level hit rates for fine-descriptor variants."""
import numpy as np

from proxymatch import synth
from proxymatch.geometry import knn
from proxymatch.features import describe_base, relief_block, _noise_normalize


def t_rel(s):
    return s.poses[1].inverse().compose(s.poses[0])


def on_cut(points, pose, cut, tol=0.02):
    p = pose.apply(points) - cut.origin
    return np.abs(p @ cut.normal - cut.height(p @ cut.u, p @ cut.v)) < tol


def variant(cloud, which):
    tabs = {k: knn(cloud, cloud, k) for k in (16, 32, 64, 128)}
    if which == "V0":  # current
        blk = np.hstack([describe_base(cloud, tabs[16]),
                         describe_base(cloud, tabs[32]),
                         describe_base(cloud, tabs[64]),
                         relief_block(cloud, tabs[64])])
    elif which == "V1":
        blk = np.hstack([relief_block(cloud, tabs[32]),
                         relief_block(cloud, tabs[64]),
                         relief_block(cloud, tabs[128])])
    elif which == "V2":
        blk = relief_block(cloud, tabs[64])
    elif which == "V3":
        blk = np.hstack([describe_base(cloud, tabs[64]),
                         relief_block(cloud, tabs[32]),
                         relief_block(cloud, tabs[64]),
                         relief_block(cloud, tabs[128])])
    return _noise_normalize(blk, cloud)


rng = np.random.default_rng(7)
for shape, seed in (("ellipsoid", 0), ("superquadric", 1)):
    spec = synth.FractureSpec(shape=shape, seed=seed, frequency=6.0,
                              total_points=5000)
    s = synth.generate(spec)
    X, Y = s.parts[0], s.parts[1]
    T = t_rel(s)
    xc = on_cut(X.points, s.poses[0], s.cuts[0])
    q = rng.choice(np.where(xc)[0], size=min(250, xc.sum()), replace=False)
    y_star = T.apply(X.points[q])          # predicted positions in Y frame
    for which in ("V0", "V1", "V2", "V3"):
        fx = variant(X, which)[q]
        fy = variant(Y, which)
        d = np.linalg.norm(fx[:, None, :] - fy[None, :, :], axis=2)
        order = np.argsort(d, axis=1)
        geo = np.linalg.norm(Y.points[order[:, :5]] - y_star[:, None, :],
                             axis=2)
        hit1 = float(np.mean(geo[:, 0] < 0.05))
        hit5 = float(np.mean((geo < 0.05).any(axis=1)))
        # contrast: descriptor distance to best geometric match vs median
        true_nn = np.argmin(np.linalg.norm(
            Y.points[None, :, :] - y_star[:, None, :], axis=2), axis=1)
        d_true = d[np.arange(len(q)), true_nn]
        print(f"{shape}/{seed} {which}: dim={fx.shape[1]} hit1={hit1:.3f} "
              f"hit5={hit5:.3f} d_true={np.median(d_true):.3f} "
              f"d_med={np.median(d):.3f} ratio="
              f"{np.median(d)/max(np.median(d_true),1e-9):.2f}", flush=True)
