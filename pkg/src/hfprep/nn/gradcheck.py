import numpy as np


def numeric_grad(f, x, index, eps):
    """Central difference of scalar ``f()`` w.r.t. ``x[index]`` (perturbed in place)."""
    old = x[index]
    x[index] = old + eps
    fp = f()
    x[index] = old - eps
    fm = f()
    x[index] = old
    return (fp - fm) / (2 * eps)


def grad_check(fn, inputs, epsilon=1e-5, max_entries=None, rng=None, floor=1e-3, mode="entry"):
    """Worst relative error between analytic and central-difference gradients.

    ``fn(inputs)`` returns ``(loss, grads)`` where ``grads`` maps a subset of
    the ``inputs`` keys to analytic gradients. Inputs are perturbed in place
    and restored. The error of one entry is ``|a - n| / max(|a|, |n|, s)``
    with ``s = floor * max|a|`` over every checked tensor, so entries whose
    true gradient is ~0 are judged against the overall gradient scale rather
    than against round-off. ``max_entries`` caps the entries per tensor,
    sampled with ``rng``.

    ``mode="norm"`` instead reports, per tensor, ``|a - n|_2 / (|a|_2 + |n|_2)``
    and returns the worst tensor. This is the useful measure in 32-bit, where
    forward round-off puts an absolute noise of roughly ``ulp / epsilon`` on
    every finite difference.
    """
    if mode not in ("entry", "norm"):
        raise ValueError(f"unknown mode {mode!r}")
    _, grads = fn(inputs)
    grads = {k: np.array(v, dtype=np.float64) for k, v in grads.items()}
    scale = max(float(np.abs(g).max()) for g in grads.values() if g.size)
    s = floor * scale + 1e-300
    rng = rng if rng is not None else np.random.default_rng(0)
    worst = 0.0
    for name, ana in grads.items():
        x = inputs[name]
        flat = range(x.size)
        if max_entries is not None and x.size > max_entries:
            flat = sorted(rng.choice(x.size, size=max_entries, replace=False))
        a_vals, n_vals = [], []
        for i in flat:
            idx = np.unravel_index(i, x.shape)
            n_vals.append(numeric_grad(lambda: float(fn(inputs)[0]), x, idx, epsilon))
            a_vals.append(float(ana[idx]))
        a_vals, n_vals = np.array(a_vals), np.array(n_vals)
        if mode == "entry":
            den = np.maximum(np.maximum(np.abs(a_vals), np.abs(n_vals)), s)
            err = float(np.max(np.abs(a_vals - n_vals) / den)) if a_vals.size else 0.0
        else:
            den = np.linalg.norm(a_vals) + np.linalg.norm(n_vals)
            err = float(np.linalg.norm(a_vals - n_vals) / den) if den > 0 else 0.0
        worst = max(worst, err)
    return worst
