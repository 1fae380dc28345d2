"""
Training losses on hand-checkable fixtures
==========================================

The depth group mixes L1, scale-invariant log (silog), and a temporal
photometric term driven by depth-based warping; the feature group mixes
cosine distance and MSE.  Each term is exercised here on inputs small
enough to verify by hand, plus the two structural properties worth
seeing once: silog's invariance to global depth scaling, and the warp
producing an exact integer pixel shift for a fronto-parallel plane under
a pure sideways translation.
"""

import numpy as np

from fgs import (LossComponents, LossWeights, feat_loss, l1_depth,
                 photometric_temporal, silog, total_loss, warp_photo)

# --- L1: mean absolute difference over valid pixels ---------------------
ref = np.full((4, 4), 2.0)
pred = ref + 0.5
print(f"l1(ref, ref+0.5) = {l1_depth(ref, pred)} (exact 0.5)")

# --- silog: variance of log residuals, invariant to global scale --------
rng = np.random.default_rng(0)
depth = rng.uniform(1.0, 5.0, size=(8, 8))
noisy = depth * np.exp(rng.normal(0, 0.05, depth.shape))
base = silog(depth, noisy, lambda_var=1.0)
scaled = silog(depth, noisy * 1000.0, lambda_var=1.0)
print(f"silog base {base:.6f}, after scaling pred by 1000: {scaled:.6f} "
      f"(diff {abs(base - scaled):.2e})")

# --- warp: fronto-parallel plane, sideways camera => pure pixel shift ---
h, w, fx, z, tx = 16, 24, 20.0, 4.0, 0.4
shift = int(round(fx * tx / z))  # u_source = u + fx*tx/z = u + 2
texture = rng.uniform(0.2, 1.0, size=(h, w, 3))
target = np.zeros_like(texture)
target[:, :-shift] = texture[:, shift:]          # what the target camera sees
warped, ok = warp_photo(texture, np.full((h, w), z),
                        (np.eye(3), np.array([tx, 0.0, 0.0])),
                        (fx, fx, (w - 1) / 2, (h - 1) / 2))
err = np.abs(warped - target)[ok].max()
print(f"warp of a z={z} plane under tx={tx}: shift {shift} px, "
      f"max |err| on the {int(ok.sum())} covered pixels {err:.2e}")

# --- photometric temporal: identical frames cost nothing ----------------
photo = rng.uniform(size=(12, 16, 3))
zero = photometric_temporal(photo, [photo], np.full((12, 16), 3.0),
                            [(np.eye(3), np.zeros(3))],
                            (20.0, 20.0, 7.5, 5.5))
print(f"photometric(target, [target], identity pose) = {zero:.2e}")

# --- feature terms: cosine distance and MSE ------------------------------
f_ref = rng.normal(size=(6, 5, 8))
cos, mse = feat_loss(f_ref, 2.0 * f_ref)       # same direction, double length
print(f"feat_loss(F, 2F): cos {cos:.2e} (aligned), mse {mse:.4f} "
      f"(= mean ||F||^2 = {np.mean(np.sum(f_ref**2, axis=-1)):.4f})")

# --- the weighted total and its breakdown --------------------------------
parts = LossComponents(l1=0.5, silog=0.2, temporal=0.1, cos=0.3, mse=0.4)
total, breakdown = total_loss(parts, LossWeights(lambda_feat=2.0))
print(f"total {total:.4f}")
for key, val in breakdown.items():
    print(f"  {key:12s} {val:.4f}")
