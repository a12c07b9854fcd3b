"""A small drift experiment.

Integrate a few dozen Gibbs samples at two temperatures, compare the drift
of the approximate invariant with that of the action and check the
Chebyshev envelope.  The same run is available from the command line:

    nlsgibbs drift --config demos/drift_small.toml --out drift.csv
"""
from pathlib import Path

from nlsgibbs import harness
from nlsgibbs.harness import ExperimentConfig

config = ExperimentConfig.from_toml(Path(__file__).with_name("drift_small.toml"))
exp = harness.run_drift_experiment(config, progress=print)
for run in exp.runs:
    vI, w = run.arrays(1, "I")
    vP, _ = run.arrays(1, "phi")
    print(f"beta = {run.beta:g}, T = {run.T:g}: median drift I {harness.weighted_median(vI, w):.3e}, "
          f"Phi {harness.weighted_median(vP, w):.3e}")
    for rep in harness.chebyshev_reports(run, 1):
        print(f"  eta1 = {rep.eta1:g}: bad fraction {rep.fraction:.3f}, envelope {rep.envelope:.3g}")
