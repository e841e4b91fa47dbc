"""Recover a known density ratio with the discriminator pair.

Offline next states come from N(0, 1) and model next states from
N(shift, 1), so the true-over-model ratio is exp(shift^2 / 2 - shift x).

    python demos/ratio_gaussians.py [shift]
"""

import sys

import numpy as np

from midl_rl.ratio import DiscriminatorPair, log_model_ratio, train_discriminators
from midl_rl.toy import OfflineDataset


def main(shift=0.5, steps=2000):
    rng = np.random.default_rng(0)
    n = 20000
    zeros = np.zeros((n, 1))
    off = OfflineDataset(zeros, zeros, np.zeros(n), rng.normal(0.0, 1.0, (n, 1)))
    mod = OfflineDataset(zeros, zeros, np.zeros(n), rng.normal(shift, 1.0, (n, 1)))
    pair = DiscriminatorPair(1, 1, rng=0, offline=off)
    loss = train_discriminators(pair, off, mod, steps, rng)
    print(f"after {steps} steps: losses (s,a,s') {loss[0]:.4f}, (s,a) {loss[1]:.4f}")
    print("     x   estimated   analytic")
    for x in np.linspace(-1.5, 2.0, 8):
        xs = np.full((1, 1), x)
        est = float(np.exp(-log_model_ratio(pair, np.zeros((1, 1)), np.zeros((1, 1)), xs))[0])
        print(f"{x:6.2f}   {est:9.4f}   {np.exp(0.5 * shift ** 2 - shift * x):8.4f}")


if __name__ == "__main__":
    main(float(sys.argv[1]) if len(sys.argv) > 1 else 0.5)
