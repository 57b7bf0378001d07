"""Continuous prescribed-performance feedback for one atomic task."""

import numpy as np

from .errors import SingularInput
from .funnel import transform_error
from .robustness import CompiledBody, SmoothConfig


def control_input(sys, body, params, x, t_local, cfg=SmoothConfig()):
    """u = -eps(x, t) g(x)^T grad rho(x).

    ``body`` may be a non-temporal formula or an already compiled body.
    Raises FunnelViolation when x is outside the funnel at ``t_local``.
    """
    x = np.asarray(x, dtype=float)
    f = body if isinstance(body, CompiledBody) else CompiledBody(body, x.shape[0], cfg)
    rho, grad = f.value_and_grad(x)
    err = transform_error(rho, params, t_local)
    u = -err.eps * (sys.g(x).T @ grad)
    if not np.all(np.isfinite(u)):
        raise SingularInput(f"non-finite control input at t={t_local:.4f}")
    return u
