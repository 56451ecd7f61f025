"""Trust, but differentiate.

Every gradient in this package is derived and coded by hand, so before
any training run is believed, the analytic gradients are compared
against central finite differences on a small model.  The finite
difference side runs in extended precision so that the comparison is
limited by the O(epsilon^2) truncation error of the scheme rather than
by float64 cancellation noise.

The same check is available from the command line:

    scrnlm gradcheck --arch scrn-adaptive --softmax hsm

This script runs it for two architectures and then demonstrates that
the harness actually catches wrong gradients by corrupting one block.

Run:  python3 demos/02_gradient_check.py   (about 10 seconds)
"""

from dataclasses import replace

import numpy as np

from scrnlm.gradcheck import (DEFAULT_EPSILON, DEFAULT_TOLERANCE,
                              analytic_window_gradients, check_all,
                              compare_gradients, numeric_gradient, window_loss)
from scrnlm.models import create_model

for arch, softmax in (("scrn-adaptive", "full"), ("lstm", "hsm")):
    print(f"== {arch} with {softmax} softmax ==")
    report = check_all(arch, softmax)
    for line in report.lines():
        print(line)
    print()

print("== a sign error does not go unnoticed ==")
model = create_model("scrn", 13, 7, 5, seed=3, dtype=np.float64)
tokens = np.random.default_rng(4).integers(0, 13, size=(2, 12))
analytic = analytic_window_gradients(model, tokens)
analytic["P"] = -analytic["P"]  # pretend we got one derivation wrong
fd_model = replace(model,
                   cell={k: v.astype(np.longdouble) for k, v in model.cell.items()},
                   out={k: v.astype(np.longdouble) for k, v in model.out.items()})
numeric = numeric_gradient(lambda _: window_loss(fd_model, tokens),
                           fd_model.blocks(), DEFAULT_EPSILON)
report = compare_gradients(analytic, numeric, DEFAULT_TOLERANCE)
for line in report.lines():
    print(line)
print(f"failing blocks: {report.failing_blocks()}")
