"""
Working time against F1 for the bundled policies
================================================

Every policy maps battery bands to operating modes. Because each mode draws a
constant average power, a policy's working time and time-weighted F1 follow
in closed form.
"""

from qrm_edge import config
from qrm_edge.energy import evaluate_policy, extension_ratio

cfg = config.load()

# The three modes: heavier models cost more power and score higher.
for mode, p in cfg.profiles.items():
    print(f"mode {mode}: {p.model_name:<22} {p.device_power_w:.2f} W  F1 {p.f1_pct:.2f}")

###############################################################################
# Evaluate each policy from a full 47.7 Wh battery and compare it with the
# all-heaviest baseline.

baseline = evaluate_policy(cfg.policy("scenario1"), cfg.profiles, cfg.capacity_wh)
print()
for name, policy in cfg.policies.items():
    r = evaluate_policy(policy, cfg.profiles, cfg.capacity_wh)
    print(f"{name}: {r.display_time:>8}  F1 {r.weighted_f1_pct:5.2f}  "
          f"+{extension_ratio(r, baseline):5.1f}% time  modes {policy.modes}")

###############################################################################
# Scenario 7 steps down through all three modes. It buys about a fifth more
# working time for under four F1 points.

s7 = evaluate_policy(cfg.policy("scenario7"), cfg.profiles, cfg.capacity_wh)
for seg in s7.segments:
    print(f"mode {seg.mode}: {seg.duration_s / 3600:.3f} h on {seg.energy_wh:.2f} Wh")
