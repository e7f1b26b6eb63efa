"""
Writing your own policy
=======================

Policies live in the TOML configuration as ``[lower, upper, mode]`` rows.
Bands are half-open, ``(lower, upper]``, and must tile (0, 100] exactly.
"""

from qrm_edge import config
from qrm_edge.domain import Policy, PolicyError, band_for, validate_policy
from qrm_edge.energy import evaluate_policy

cfg = config.load()

# Hold the best model down to 70%, then fall straight to the lightest one.
early = Policy.from_rows("early_drop", [[70, 100, 0], [0, 70, 2]])
validate_policy(early, cfg.profiles)
print("at 70.0% ->", band_for(early, 70.0), "| at 70.1% ->", band_for(early, 70.1))

report = evaluate_policy(early, cfg.profiles, cfg.capacity_wh)
print(f"{early.name}: {report.display_time}, F1 {report.weighted_f1_pct:.2f}")

###############################################################################
# A gap between bands is refused.

try:
    validate_policy(Policy.from_rows("gappy", [[50, 100, 0], [0, 40, 1]]))
except PolicyError as exc:
    print("rejected:", exc)

###############################################################################
# Add the policy to a configuration and save it. Reloading the text gives the
# same configuration back.

custom = cfg.with_overrides(policies={**cfg.policies, early.name: early}, default_policy=early.name)
text = config.dumps(custom)
assert config.loads(text) == custom
print("reloaded:", config.loads(text).policy("early_drop").rows())
