"""Independent oracles for values frozen into the test suite.

Run once with ``python tests/oracles/make_oracles.py``; the printed values are
pasted into the tests.  Nothing here imports the package's solvers or proxes.
"""

import hashlib
import itertools
import math

import numpy as np
from scipy import optimize, stats


def herman_meyer_enum(n):
    """Digit-reversal by explicit enumeration of mixed-radix digit tuples."""
    primes, m, p = [], n, 2
    while m > 1:
        while m % p == 0:
            primes.append(p)
            m //= p
        p += 1
    order = []
    # counting with the first prime as the fastest-varying digit
    for digits in itertools.product(*[range(q) for q in reversed(primes)]):
        digits = digits[::-1]
        value, weight = 0, n
        for dgt, q in zip(digits, primes):
            weight //= q
            value += dgt * weight
        order.append(value)
    return order


def bit_reverse(n_bits):
    return [int(format(k, f"0{n_bits}b")[::-1], 2) for k in range(2**n_bits)]


def tv_pair_grid(z, lam, tau):
    """argmin over a 2-D grid plus local refinement of lam*tau*|x2-x1| + ||x-z||^2/2."""
    f = lambda x: lam * tau * abs(x[1] - x[0]) + 0.5 * ((x[0] - z[0]) ** 2 + (x[1] - z[1]) ** 2)
    g = np.linspace(-1, 3, 401)
    best = min(((a, b) for a in g for b in g), key=f)
    res = optimize.minimize(f, best, method="Nelder-Mead", options={"xatol": 1e-12, "fatol": 1e-14})
    return res.x


def kl_conj_prox_golden(v, sigma, z):
    """argmin_y -v log(1 - y) + (y - z)^2 / (2 sigma) on y < 1 (conjugate of KL with zero background)."""
    f = lambda y: -v * math.log(1 - y) + (y - z) ** 2 / (2 * sigma)
    res = optimize.minimize_scalar(f, bracket=(-5.0, 0.0, 1 - 1e-9), method="golden", tol=1e-14)
    return res.x


def affine_l1_grid(z, scale, tau):
    """argmin_x |scale x| + (x - z)^2 / (2 tau) on a fine grid, refined."""
    xs = np.linspace(z - 5, z + 5, 200001)
    vals = np.abs(scale * xs) + (xs - z) ** 2 / (2 * tau)
    x0 = xs[np.argmin(vals)]
    res = optimize.minimize_scalar(lambda x: abs(scale * x) + (x - z) ** 2 / (2 * tau),
                                   bounds=(x0 - 1e-3, x0 + 1e-3), method="bounded",
                                   options={"xatol": 1e-13})
    return res.x


def beer_lambert_expectation(v, I0):
    """Exact E|-log(max(N,1)/I0) - v| for N ~ Poisson(I0 exp(-v)), by summing the pmf."""
    lam = I0 * math.exp(-v)
    hi = int(lam + 40 * math.sqrt(lam) + 50)
    k = np.arange(0, hi + 1)
    pmf = stats.poisson.pmf(k, lam)
    out = -np.log(np.maximum(k, 1) / I0)
    return float(np.sum(pmf * np.abs(out - v)))


def shepp_logan_128():
    """Independent rasterisation of the modified Shepp-Logan table at pixel centres."""
    table = [
        (1.0, 0.69, 0.92, 0.0, 0.0, 0.0), (-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0),
        (-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0), (-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0),
        (0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0), (0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0),
        (0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0), (0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0),
        (0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0), (0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0)]
    n = 128
    img = np.zeros((n, n))
    for r in range(n):
        y = 1.0 - (r + 0.5) * 2.0 / n
        for c in range(n):
            x = (c + 0.5) * 2.0 / n - 1.0
            s = 0.0
            for A, a, b, x0, y0, phi in table:
                t = math.radians(phi)
                xr = (x - x0) * math.cos(t) + (y - y0) * math.sin(t)
                yr = -(x - x0) * math.sin(t) + (y - y0) * math.cos(t)
                if (xr / a) ** 2 + (yr / b) ** 2 <= 1.0:
                    s += A
            img[r, c] = min(max(s, 0.0), 1.0)
    return img


if __name__ == "__main__":
    print("herman-meyer 8:", herman_meyer_enum(8), "bitrev:", bit_reverse(3))
    for n in (6, 12, 30, 60):
        print(f"herman-meyer {n}:", herman_meyer_enum(n))
    print("tv pair (0,2):", tv_pair_grid((0.0, 2.0), 1.0, 1.0))
    print("kl conj prox v=1 sigma=.5 z=2:", repr(kl_conj_prox_golden(1.0, 0.5, 2.0)))
    print("affine l1 scale=2 tau=.3 z=1.7:", repr(affine_l1_grid(1.7, 2.0, 0.3)))
    print("affine l1 scale=2 tau=.3 z=0.4:", repr(affine_l1_grid(0.4, 2.0, 0.3)))
    img = shepp_logan_128()
    print("shepp-logan 128 sha256:", hashlib.sha256(np.ascontiguousarray(img, dtype="<f8").tobytes()).hexdigest())
    print("shepp-logan 128 sum:", repr(float(img.sum())))
    print("beer-lambert v=0 I0=1e6:", repr(beer_lambert_expectation(0.0, 1e6)))


def beer_lambert_ct_oracle(I0=5000.0, size=64, n_angles=120, mc_samples=10**6, seed=12345):
    """Mean absolute perturbation on the CT sinogram: exact (pmf) and Monte-Carlo.

    The sinogram itself comes from the package's projector (it is the input
    of the pipeline, not the quantity under test).
    """
    from stochograd.experiments import gen_shepp_logan
    from stochograd.linops import make_parallel_radon
    K = make_parallel_radon(size, size, n_angles)
    v = (4.0 / size) * K.apply(gen_shepp_logan(size).reshape(-1))
    exact = float(np.mean([beer_lambert_expectation(float(t), I0) for t in v]))
    rng = np.random.Generator(np.random.PCG64(seed))
    idx = rng.integers(0, v.size, size=mc_samples)
    counts = np.maximum(rng.poisson(I0 * np.exp(-v[idx])), 1)
    mc = float(np.mean(np.abs(-np.log(counts / I0) - v[idx])))
    bound = 3.0 * float(np.mean(np.exp(v / 2))) / math.sqrt(I0)
    return exact, mc, bound, float(v.max())


if __name__ == "__main__":
    print("beer-lambert ct (exact, mc, bound, vmax):", beer_lambert_ct_oracle())
