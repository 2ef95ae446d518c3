"""
Where the distillation divergence comes from
--------------------------------------------

Fit a Gibbs teacher on one synthetic regression problem, compress it to a
rank-1 student and print each term of the divergence ledger.  Then repeat
over many datasets and compare the two ways of adding the algorithm terms.
"""

import numpy as np

from kdlab.divergence import (apx_term, assemble_ledger, bias_term, cov_term, dataset_shift_bound,
                              spread_term, var_term)
from kdlab.numcore import make_stream
from kdlab.processes import (ProblemSpec, StudentConfig, TeacherConfig, draw_dataset,
                             fit_teacher_posterior, rank_project, sample_teacher)

q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((5, 2)))
spec = ProblemSpec(d=5, k=2, n=20, w_star=q.T, nu=0.5)
teacher = TeacherConfig(lam=1.0, beta_t=1.0)

data = draw_dataset(spec, make_stream(1))
post = fit_teacher_posterior(data, teacher, spec)
print("posterior mean\n", np.round(post.mean, 3))
print("posterior column covariance eigenvalues", np.round(np.linalg.eigvalsh(post.col_cov), 4))

# one teacher draw and its rank-1 projection in prediction space
w = sample_teacher(post, make_stream(1, 0, "draw"))
theta = rank_project(w, data.X, 1)
print("rank of the student centre:", np.linalg.matrix_rank(theta))
print("prediction residual of the projection: %.4f" % np.sum(((w - theta) @ data.X) ** 2))

bias, var = bias_term(post, spec.w_star, data.X), var_term(post, data.X)
print("\nsingle dataset")
print("  bias        %.4f" % bias)
print("  var         %.4f" % var)
print("  data shift  %.4f" % dataset_shift_bound(bias, var, spec.k, spec.nu))
apx, apx_se = apx_term(post, data.X, 1, teacher.lam, teacher.beta_t, spec.nu, make_stream(1, 0, "apx"), 1000)
print("  apx         %.4f  (+- %.4f)" % (apx, apx_se))
print("  cov         %.4f" % cov_term(post.col_cov, post.col_cov, spec.k))  # match-teacher: zero
# always k*d: the posterior covariance cancels its own precision
print("  spread      %.4f" % spread_term(post, data.X, spec.k, teacher.lam, teacher.beta_t, spec.nu))

ledger = assemble_ledger(spec, teacher, StudentConfig(1), 200, 200, 42)
print("\naveraged over %d datasets" % ledger.trials)
for name in ("dataset_shift", "apx", "cov", "spread", "kn_upper", "kn_upper_doubled"):
    print("  %-17s %.4f" % (name, getattr(ledger, name)))

# a full-rank student has no bottleneck, so only the spread survives
full = assemble_ledger(spec, teacher, StudentConfig(2), 50, 200, 42)
print("\nrank 2 student: apx %.2e, spread %.4f" % (full.apx, full.spread))
