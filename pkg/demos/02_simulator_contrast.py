"""Dark-field contrast simulation and histogram-based parameter fitting.

Generates an organelle-like phantom, maps it through the saturating
contrast model at a randomly sampled acquisition geometry, then recovers
the contrast parameters by matching projection histograms.
"""

from pathlib import Path

import numpy as np

import tomodiff as td

OUT = Path(__file__).parent / "out" / "02_simulator"
OUT.mkdir(parents=True, exist_ok=True)

phantom = td.generate_phantom(
    td.PhantomSpec(dims=(40, 128, 128), seed=2, background_level=0.12, background_texture=0.08)
)
print(f"phantom {phantom.shape}, occupancy above 0.1: "
      f"{float((phantom.data > 0.1).mean()):.1%}")

sampler = td.AcquisitionSampler(seed=7)
acq = td.sample_acquisition(sampler)
print(f"sampled acquisition: range {acq.range_deg} deg, step {acq.step_deg} deg "
      f"-> {acq.n_tilts} tilts")

true_params = td.ContrastParams(c=0.03, gamma=0.9, k=1.1)
tilts = td.synthesize_haadf(phantom, acq, true_params)
print(f"projection range [{tilts.frames.min():.3f}, {tilts.frames.max():.3f}] "
      f"(saturation bound k={true_params.k})")

edges = np.linspace(0.0, 1.3 * true_params.k, 33)
target = td.tilt_histogram(tilts, edges)
fitted, dist = td.fit_contrast(
    (edges, target), phantom, acq,
    c_grid=np.geomspace(0.01, 0.06, 9),
    gamma_grid=np.linspace(0.7, 1.1, 9),
    k_grid=np.linspace(0.9, 1.3, 9),
)
print(f"fit: c={fitted.c:.3f} gamma={fitted.gamma:.2f} k={fitted.k:.2f} "
      f"(truth 0.030/0.90/1.10), histogram L1 distance {dist:.4f}")

manifest = td.make_dataset(
    OUT / "dataset", n_samples=4, dims=(8, 32, 32),
    sampler=td.AcquisitionSampler(seed=3), params=true_params, seed=100,
)
print(f"wrote a 4-sample dataset with manifest {manifest}")
for rec in td.read_manifest(manifest):
    print(f"  sample {rec['id']}: range {rec['range_deg']} step {rec['step_deg']} "
          f"seed {rec['seed']}")
