# Which stratification finds the problem?
#
# A model that ignores x5 is wrong only along x5.  Stratifying the trial on
# the propensity score or on the predicted effect averages that error away;
# stratifying on x5 keeps it.

from cafe.simulation import ScenarioSpec, run_scenario

rates = {}
for partition_by in ("propensity", "cate", "covariate:x5"):
    spec = ScenarioSpec(setting="P1", spec_variant="misspecified", m=800, n=120,
                        partition_by=partition_by, replicates=200, seed=5)
    report = run_scenario(spec)
    rates[partition_by] = (report.rejection_rate("p_cafe"), report.rejection_rate("p_cafe_m"))

# %%
print(f"{'partition':14s} {'CAFE':>6s} {'CAFE-M':>7s}")
for name, (t, m) in rates.items():
    print(f"{name:14s} {t:6.3f} {m:7.3f}")

# %%
# Larger trials help only when the partition can see the error.
for n in (40, 120, 400):
    spec = ScenarioSpec(setting="P1", spec_variant="misspecified", m=800, n=n,
                        partition_by="covariate:x5", replicates=200, seed=5)
    print(n, run_scenario(spec).rejection_rate("p_cafe"))
