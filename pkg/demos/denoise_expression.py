"""Train an expression denoiser on a toy face model and look at what it learned.

Run: python3 demos/denoise_expression.py   (about ten seconds on one core)
"""
import numpy as np

from face_manifold._rng import derive_rng
from face_manifold.autoencoder import build, forward
from face_manifold.dataset import CorruptionConfig, build_dataset, split, unique_clean
from face_manifold.evaluator import default_sigma_grid, noise_sweep
from face_manifold.morphable_model import make_toy_model, sample_normal_batch
from face_manifold.trainer import TrainConfig, evaluate_mse, train

SEED = 1

# A procedural face model: 642 vertices, 199 identity and 29 expression
# parameters whose scales decay geometrically.
model = make_toy_model()
print("expression scales:", np.round(model.exp_scale[:6], 3), "...")

# Plausible expressions are Gaussian draws.  Each one is corrupted 25 times:
# a random number of entries gets N(0, 2) noise added.
clean = sample_normal_batch(model, "expression", 300, derive_rng(SEED, "clean"))
pairs = build_dataset(clean, CorruptionConfig(sigma=2.0, copies=25, seed=SEED))
train_set, test_set = split(pairs, 0.1, SEED)
print(f"{len(train_set)} training pairs, {len(test_set)} held-out pairs")

weights, history = train(build(29), train_set, test_set, TrainConfig(epochs=5, seed=SEED), log=print)
out_mse, in_mse = evaluate_mse(weights, test_set)
print(f"held-out MSE: noisy {in_mse:.3f} -> denoised {out_mse:.3f}")

# One pair up close.  Corrupted entries get pulled back; clean ones mostly stay put.
pair = next(p for p in test_set if np.count_nonzero(p.noisy != p.clean) <= 6)
denoised, _ = forward(weights, pair.noisy)
hit = np.flatnonzero(pair.noisy != pair.clean)
print("corrupted entries:", hit.tolist())
for i in sorted(set(hit[:4]) | {0, 1}):
    print(f"  a[{i:2d}]  clean {pair.clean[i]:+.3f}  noisy {pair.noisy[i]:+.3f}  denoised {denoised[i]:+.3f}")

# Robustness: sweep the noise level around the training value.
sweep = noise_sweep(weights, unique_clean(test_set), default_sigma_grid(2.0, 5), copies=10, seed=SEED)
print("sigma   input_mse  output_mse")
for sigma, i_mse, o_mse in sweep.rows():
    print(f"{sigma:5.2f}  {i_mse:9.3f}  {o_mse:10.3f}")
