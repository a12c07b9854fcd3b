"""Sampling the truncated Gibbs measure.

Draw Gaussian states, reweight them towards the Gibbs measure of the cubic
model and compare a few estimates with their Gaussian values.

    python3 demos/01_gibbs_sampling.py
"""
import math

from nlsgibbs import gibbs
from nlsgibbs.fourier_state import ModelParams, action, hs_norm
from nlsgibbs.gibbs import SamplerConfig

N = 16
for beta in (8.0, 32.0):
    p = ModelParams((1.0,), beta, N)
    cfg = SamplerConfig(p, seed=1, n_samples=50_000)
    batch = gibbs.draw(cfg)
    w = batch.weights
    print(f"beta = {beta:g}  (effective sample size {w.sum() ** 2 / (w * w).sum():.0f})")
    for k in (0, 1, 3):
        g = 2 / (beta * (1 + k * k))
        est = gibbs.weighted_mean(action(batch.states, k), batch.log_weight)
        print(f"  <|psi_{k}|^2>: Gibbs {est.mean:.5f} +- {est.stderr:.5f}, Gaussian {g:.5f}")
    z = gibbs.partition_ratio(cfg)
    print(f"  Z/Z_g = {z.mean:.4f} +- {z.stderr:.4f}")
    tail = gibbs.weighted_mean(hs_norm(batch.states, 1 / 3) > 4 / math.sqrt(beta), batch.log_weight)
    print(f"  P(||psi||_(H^1/3) > 4 beta^(-1/2)) = {tail.mean:.4f}")
