"""
Checking hand-written gradients
===============================

Every layer in the engine has a hand-derived backward pass.  Central
finite differences in double precision check each of them, and each full
architecture, on toy shapes.
"""

import numpy as np

from roomclass.checks import gradcheck_suite
from roomclass.models import ModelSpec, build_model, predict
from roomclass.nn import grad_check

rows = gradcheck_suite(seed=0)
for r in rows:
    status = "ok" if r["error"] < r["threshold"] else "FAIL"
    print(f"{r['name']:<32} {r['error']:.2e}  threshold {r['threshold']:g}  {status}")

# %%
# A single model by hand
# ----------------------
# The same check on a small attention CRNN, with a different seed.
spec = ModelSpec("att_crnn", (16, 12), 4, conv_filters=(3,), gru_units=5, head_units=6)
model = build_model(spec, seed=7)
x = np.random.default_rng(1).standard_normal((2, 16, 12))
print(f"att_crnn max relative error: {grad_check(model, x, [1, 3]):.2e}")
print("class probabilities for one input:", np.round(predict(model, x[0]), 3))
