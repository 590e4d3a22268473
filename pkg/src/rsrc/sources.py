"""Built-in test sources on Omega_0 = [-1, 1]^2."""
import numpy as np


def g(x1, x2):
    """Mean source (a peaks-type surface)."""
    return (0.3 * (1 - x1) ** 2 * np.exp(-x1 ** 2 - (x2 + 1) ** 2)
            - (0.2 * x1 - x1 ** 3 - x2 ** 5) * np.exp(-x1 ** 2 - x2 ** 2)
            - 0.03 * np.exp(-(x1 + 1) ** 2 - x2 ** 2))


def sigma(x1, x2):
    """Standard deviation of the random source, radially symmetric."""
    r = np.hypot(x1, x2)
    return 0.6 * np.exp(-8.0 * (r ** 3 - 0.75 * r ** 2))


def g1(x1, x2):
    return g(3.0 * x1, 3.0 * x2)


def sigma1(x1, x2):
    """Variance field sigma^2 used for the inversion experiments."""
    return sigma(x1, x2) ** 2


def sigma1_std(x1, x2):
    """Standard deviation whose square is sigma1."""
    return sigma(x1, x2)


REGISTRY = {"g": g, "sigma": sigma, "g1": g1, "sigma1": sigma1,
            "sigma1_std": sigma1_std}
