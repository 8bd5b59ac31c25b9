"""Ring/angular-harmonic relief fingerprint for coarse cells."""
import numpy as np

from proxymatch import synth
from proxymatch.features import build_pyramid, _standardize_columns
from proxymatch.geometry import knn
from proxymatch.matcher import (MatchConfig, _unit_rows, coarse_scores,
                                topk_matches)


def t_rel(s):
    return s.poses[1].inverse().compose(s.poses[0])


def fingerprint(coarse_pts, fine_pts, radius=0.2):
    n = len(coarse_pts)
    out = np.zeros((n, 22))
    for i in range(n):
        d = np.linalg.norm(fine_pts - coarse_pts[i], axis=1)
        nb = fine_pts[d < radius]
        if len(nb) < 24:
            continue
        c = nb.mean(axis=0)
        q = nb - c
        w, v = np.linalg.eigh(q.T @ q / len(q))
        normal = v[:, 0]
        a, b, h = q @ v[:, 2], q @ v[:, 1], q @ normal
        A = np.column_stack([np.ones_like(a), a, b, a * a, a * b, b * b])
        coef, *_ = np.linalg.lstsq(A, h, rcond=None)
        rho = h - A @ coef
        r = np.hypot(a, b)
        theta = np.arctan2(b, a)
        feats = []
        rmax = r.max() + 1e-12
        for lo, hi in ((0, 1 / 3), (1 / 3, 2 / 3), (2 / 3, 1.0)):
            m = (r >= lo * rmax) & (r < hi * rmax)
            if m.sum() < 4:
                feats += [0.0] * 6
                continue
            rr, tt = np.abs(rho[m]), theta[m]
            tot = rr.sum() + 1e-12
            ring = [rr.mean(), np.sqrt(np.mean(rho[m] ** 2))]
            for mm in (1, 2, 3):
                Am = np.sum(rr * np.exp(1j * mm * tt)) / tot
                ring.append(np.abs(Am))
            ring.append(np.sqrt(np.mean(rho[m] ** 2)) / (np.std(h) + 1e-12))
            feats += ring
        # cross-ring alignment for m=1,2 between rings 1-2 and 2-3
        align = []
        for mm in (1, 2):
            As = []
            for lo, hi in ((0, 1 / 3), (1 / 3, 2 / 3), (2 / 3, 1.0)):
                m = (r >= lo * rmax) & (r < hi * rmax)
                rr, tt = np.abs(rho[m]), theta[m]
                As.append(np.sum(rr * np.exp(1j * mm * tt))
                          / (rr.sum() + 1e-12))
            align.append(np.cos(np.angle(As[1] * np.conj(As[0]))))
            align.append(np.cos(np.angle(As[2] * np.conj(As[1]))))
        out[i] = feats + align
    return out


def ranks(S, D):
    nn = D.min(axis=1)
    res = []
    for i in range(S.shape[0]):
        if nn[i] > 0.12:
            continue
        order = np.argsort(-S[i])
        geo = D[i][order]
        res.append(int(np.argmax(geo < 0.15)) if (geo < 0.15).any() else 999)
    return np.array(res)


for shape, seed in (("ellipsoid", 0), ("superquadric", 1),
                    ("superquadric", 2)):
    spec = synth.FractureSpec(shape=shape, seed=seed, frequency=6.0,
                              total_points=5000)
    s = synth.generate(spec)
    T = t_rel(s)
    px, py = build_pyramid(s.parts[0]), build_pyramid(s.parts[1])
    cfg = MatchConfig()
    D = np.linalg.norm(T.apply(px.clouds[0].points)[:, None, :]
                       - py.clouds[0].points[None, :, :], axis=2)
    fpx = fingerprint(px.clouds[0].points, px.clouds[2].points)
    fpy = fingerprint(py.clouds[0].points, py.clouds[2].points)
    variants = {
        "fp-only": (_unit_rows(_standardize_columns(fpx)),
                    _unit_rows(_standardize_columns(fpy))),
        "raw+fp ": (_unit_rows(np.hstack([px.features[0].values,
                                          _standardize_columns(fpx)])),
                    _unit_rows(np.hstack([py.features[0].values,
                                          _standardize_columns(fpy)]))),
    }
    for name, (fx, fy) in variants.items():
        S = coarse_scores(fx, fy)
        r = ranks(S, D)
        matches = topk_matches(S, min(cfg.k, S.size))
        pd = np.array([D[cm.x, cm.y] for cm in matches])
        print(f"{shape}/{seed} {name}: rank<=1={np.mean(r <= 1):.2f} "
              f"rank<=3={np.mean(r <= 3):.2f} "
              f"top128 d<0.15={np.mean(pd < .15):.2f} "
              f"d<0.25={np.mean(pd < .25):.2f}", flush=True)
