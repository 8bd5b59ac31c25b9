"""Local-quadratic height-field invariants: do they beat moment stats?"""
import numpy as np

from proxymatch import synth
from proxymatch.geometry import knn
from proxymatch.features import describe_base, relief_block, _noise_normalize


def t_rel(s):
    return s.poses[1].inverse().compose(s.poses[0])


def on_cut(points, pose, cut, tol=0.02):
    p = pose.apply(points) - cut.origin
    return np.abs(p @ cut.normal - cut.height(p @ cut.u, p @ cut.v)) < tol


def quad_block(cloud, table):
    """Per point: fit h ~ quadratic over tangent-plane coords of its kNN ball;
    rotation- and flip-invariant summaries of the fitted jet."""
    pts = cloud.points
    n, k = table.indices.shape
    out = np.zeros((n, 6))
    for i in range(n):
        nb = pts[table.indices[i]]
        c = nb.mean(axis=0)
        q = nb - c
        cov = q.T @ q / len(q)
        w, v = np.linalg.eigh(cov)
        normal = v[:, 0]
        a = q @ v[:, 2]
        b = q @ v[:, 1]
        h = q @ normal
        rmax = np.sqrt(a.max() ** 2 + b.max() ** 2) + 1e-12
        A = np.column_stack([np.ones_like(a), a, b, a * a, a * b, b * b])
        coef, *_ = np.linalg.lstsq(A, h, rcond=None)
        resid = h - A @ coef
        c0, c1, c2, c3, c4, c5 = coef
        grad = np.hypot(c1, c2)
        tr = c3 + c5
        det = c3 * c5 - 0.25 * c4 * c4
        out[i] = (abs(c0) / rmax, grad, abs(tr) * rmax, det * rmax * rmax,
                  np.sqrt(np.mean(resid ** 2)) / rmax, np.std(h) / rmax)
    return out


def variant(cloud, which):
    tabs = {k: knn(cloud, cloud, k) for k in (16, 24, 32, 64)}
    if which == "V0":
        blk = np.hstack([describe_base(cloud, tabs[16]),
                         describe_base(cloud, tabs[32]),
                         describe_base(cloud, tabs[64]),
                         relief_block(cloud, tabs[64])])
    elif which == "Q1":    # quadratic jets at two scales
        blk = np.hstack([quad_block(cloud, tabs[24]),
                         quad_block(cloud, tabs[64])])
    elif which == "Q2":    # current + jets
        blk = np.hstack([describe_base(cloud, tabs[16]),
                         describe_base(cloud, tabs[32]),
                         describe_base(cloud, tabs[64]),
                         relief_block(cloud, tabs[64]),
                         quad_block(cloud, tabs[24]),
                         quad_block(cloud, tabs[64])])
    elif which == "Q3":    # jets + base curvature context
        blk = np.hstack([describe_base(cloud, tabs[64]),
                         quad_block(cloud, tabs[16]),
                         quad_block(cloud, tabs[24]),
                         quad_block(cloud, tabs[32]),
                         quad_block(cloud, tabs[64])])
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
    y_star = T.apply(X.points[q])
    for which in ("V0", "Q1", "Q2", "Q3"):
        fx = variant(X, which)[q]
        fy = variant(Y, which)
        d = np.linalg.norm(fx[:, None, :] - fy[None, :, :], axis=2)
        order = np.argsort(d, axis=1)
        geo = np.linalg.norm(Y.points[order[:, :5]] - y_star[:, None, :],
                             axis=2)
        hit1 = float(np.mean(geo[:, 0] < 0.05))
        hit5 = float(np.mean((geo < 0.05).any(axis=1)))
        true_nn = np.argmin(np.linalg.norm(
            Y.points[None, :, :] - y_star[:, None, :], axis=2), axis=1)
        d_true = d[np.arange(len(q)), true_nn]
        print(f"{shape}/{seed} {which}: dim={fx.shape[1]} hit1={hit1:.3f} "
              f"hit5={hit5:.3f} ratio="
              f"{np.median(d)/max(np.median(d_true),1e-9):.2f}", flush=True)
