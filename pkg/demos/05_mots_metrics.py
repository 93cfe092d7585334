"""
Scoring tracks with mask metrics
================================

Hand-made two-object sequence: perfect, then with a false alarm, then with an
identity switch.
"""

import numpy as np

from stembed import mots_metrics as mm

a = np.zeros((4, 8), dtype=bool)
a[:2, :2] = True
b = np.zeros_like(a)
b[2:, 4:6] = True
gt = {1: a, 2: b}

perfect = [({10: a, 20: b}, gt)] * 5
print("perfect:", mm.report_json(mm.accumulate(perfect)))

alarm = np.zeros_like(a)
alarm[0, 7] = True
with_fp = perfect[:2] + [({10: a, 20: b, 30: alarm}, gt)] + perfect[3:]
print("one false positive:", mm.report_json(mm.accumulate(with_fp)))

switched = perfect[:2] + [({11: a, 20: b}, gt)] * 3
print("one id switch:", mm.report_json(mm.accumulate(switched)))
