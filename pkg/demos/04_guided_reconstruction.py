"""The headline pipeline: guided diffusion against FBP and SART at 10 degrees.

Reconstructs noisy narrow-wedge acquisitions of several phantoms with the
three methods and prints the aligned metric table. The diffusion loop here
uses the built-in Gaussian-blur denoiser as its prior; a learned model can
be plugged in through the external-denoiser protocol without changing
anything else.
"""

from pathlib import Path

import numpy as np

import tomodiff as td

OUT = Path(__file__).parent / "out" / "04_guided"
OUT.mkdir(parents=True, exist_ok=True)

spec = td.AngleSpec(10, 1)
print(f"acquisition: {spec.n_tilts} tilts over {spec.range_deg} deg\n")
print(f"{'seed':>4}  {'fbp':>8}  {'sart':>8}  {'diffusion':>9}")

scores = {"fbp": [], "sart": [], "diffusion": []}
for seed in range(5):
    gt = td.generate_phantom(
        td.PhantomSpec(dims=(16, 32, 32), seed=seed, background_level=0.15, background_texture=0.1)
    )
    clean = td.forward_project(gt, spec)
    rng = np.random.default_rng(seed + 500)
    sigma = 0.05 * float(np.abs(clean.frames).max())
    y = td.TiltSeries(spec, clean.frames + rng.normal(0, sigma, clean.frames.shape).astype(np.float32))

    recons = {
        "fbp": td.fbp(y, depth=16),
        "sart": td.sart(y, depth=16, iters=50),
        "diffusion": td.guided_sample(
            y,
            td.SmoothingDenoiser(3.0),
            td.GuidanceConfig(
                cfg_scale=1.0,
                projector=td.ProjectorConfig(n_steps=20),
                schedule=td.make_schedule(50),
                seed=seed + 100,
            ),
            depth=16,
        ),
    }
    row = []
    for name, rec in recons.items():
        rmse = td.evaluate(rec, gt, align=True).rmse
        scores[name].append(rmse)
        row.append(rmse)
        if seed == 0:
            td.export_slices(rec, 0, OUT / f"{name}_seed0", normalize="global")
    print(f"{seed:>4}  {row[0]:>8.4f}  {row[1]:>8.4f}  {row[2]:>9.4f}")

print("-" * 36)
means = {k: float(np.mean(v)) for k, v in scores.items()}
print(f"mean  {means['fbp']:>8.4f}  {means['sart']:>8.4f}  {means['diffusion']:>9.4f}")
print(f"\nslice images for seed 0 in {OUT}")
