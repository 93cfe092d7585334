"""
Checking every analytic gradient
================================

Compare each hand-derived gradient against central finite differences, then
show that a deliberately wrong gradient is caught.
"""

from stembed.gradcheck import passed, run_checks

worst = run_checks(seed=0, trials=5)
for name, err in worst.items():
    print(f"{name:15s} worst relative error {err:.2e}")
print("all within tolerance:", passed(worst))

flipped = run_checks(seed=0, trials=1, flip_sign=True)
print("sign-flipped gradients pass?", passed(flipped))
