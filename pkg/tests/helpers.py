"""Independent oracle implementations shared by the test modules.

Everything here is deliberately written as straight-line code, separate from
the package's implementations, so tests compare two different routes to the
same numbers.
"""

import numpy as np

from mtlgrouping.engine import StepTrace


def naive_basis(z: float, degree: int, knots) -> np.ndarray:
    """Textbook recursive B-spline evaluation (half-open intervals, closed right end)."""
    t = [float(k) for k in knots]
    m = len(t) - degree - 1

    def b(i, k):
        if k == 0:
            if t[i] <= z < t[i + 1]:
                return 1.0
            if z == t[-1] and t[i] < t[i + 1] == t[-1]:
                return 1.0
            return 0.0
        left = 0.0
        if t[i + k] != t[i]:
            left = (z - t[i]) / (t[i + k] - t[i]) * b(i, k - 1)
        right = 0.0
        if t[i + k + 1] != t[i + 1]:
            right = (t[i + k + 1] - z) / (t[i + k + 1] - t[i + 1]) * b(i + 1, k - 1)
        return left + right

    return np.array([b(i, degree) for i in range(m)])


def centered_ridge(X, y, lam):
    """Normal-equation ridge with unpenalized intercept, via plain numpy solve."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    xm = X.mean(axis=0)
    ym = y.mean()
    Xc = X - xm
    w = np.linalg.solve(Xc.T @ Xc + lam * np.eye(X.shape[1]), Xc.T @ (y - ym))
    return w, float(ym - xm @ w)


def random_trace(rng, n_tasks, dim, steps):
    """Synthetic training trace with random gradients, losses and velocities."""
    out = []
    for k in range(steps):
        out.append(StepTrace(
            step=k,
            losses={t: float(rng.uniform(0.1, 2.0)) for t in range(n_tasks)},
            gradients={t: rng.standard_normal(dim) for t in range(n_tasks)},
            velocity_in=rng.standard_normal(dim) if k else np.zeros(dim),
        ))
    return out


def mlp_forward_by_hand(shared_layers, head, X):
    """Loop-based forward pass for a tanh encoder plus linear head."""
    outputs = []
    for row in X:
        a = list(row)
        for w, b in shared_layers:
            a = [np.tanh(sum(w[i][j] * a[j] for j in range(len(a))) + b[i])
                 for i in range(len(b))]
        outputs.append(sum(head[i] * a[i] for i in range(len(a))) + head[-1])
    return np.array(outputs)
