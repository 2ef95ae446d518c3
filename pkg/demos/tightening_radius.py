"""
When does the sharpness-aware bound win?
----------------------------------------

Sweep the perturbation radius for one set of constants and mark where the
local bound beats the standard one.  The crossover sits at the positive
root of a quadratic in the radius.
"""

import numpy as np

from kdlab import bounds as B

c = B.SharpnessConstants(a=0.0, b=1.0, L=1.0, g0=0.1, alpha=2.0, stab_kappa=0.5, tau_op=2.0, n=20)
gen_t, kn = 0.35, 10.0

rho0 = B.rho_zero(c, kn)
print("tightening radius rho0 = %.6f" % rho0)
print("%8s %9s %9s %s" % ("rho", "B_std", "B_sh", ""))
for r in np.linspace(0, 2 * rho0, 11):
    cmp = B.b_std_vs_b_sh(c.at(r), gen_t, kn)
    print("%8.4f %9.4f %9.4f %s" % (r, cmp.b_std, cmp.b_sh, "<-" if cmp.improved else ""))

# a local gradient as large as the global Lipschitz constant leaves nothing to gain
flat = B.SharpnessConstants(a=0.0, b=1.0, L=1.0, g0=1.0, alpha=2.0, stab_kappa=0.5, tau_op=2.0, n=20)
print("\ng0 = L gives rho0 =", B.rho_zero(flat, kn))
