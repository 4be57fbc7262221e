# Are the p-values uniform when the model is right?
#
# Repeat the correctly specified first design a few hundred times and look
# at the empirical distribution of the p-values.

import numpy as np

from cafe.simulation import ScenarioSpec, run_scenario

spec = ScenarioSpec(setting="P1", m=800, n=120, replicates=300, seed=1)
report = run_scenario(spec)

# %%
for key in ("p_cafe", "p_cafe_m"):
    q = report.qq(key)
    print(f"{key:9s} rejection rate {report.rejection_rate(key):.3f}   KS {q.ks_statistic:.3f}")

# %%
# A coarse text Q-Q plot: deciles of the p-values against the uniform.
for key in ("p_cafe", "p_cafe_m"):
    deciles = np.quantile(report.valid(key), np.linspace(0.1, 0.9, 9))
    print(key, " ".join(f"{d:.2f}" for d in deciles))

# %%
# The max-type test is conservative at small K: its extreme-value constants
# put the 5% critical value far above the true one for three groups.
from cafe.numerics import gumbel_constants, normal_quantile

a, b = gumbel_constants(3)
critical = a - b * np.log(-np.log(0.95))
exact = normal_quantile(1 - (1 - 0.95 ** (1 / 3)) / 2)
print(f"Gumbel critical value {critical:.2f}, exact 5% point of max|Z| over 3 groups {exact:.2f}")

# %%
# Write the Q-Q points for plotting elsewhere.
report.write_qq_csv("null_qq.csv")
