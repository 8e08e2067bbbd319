"""Random variates and normal-distribution special functions.

Every stochastic quantity in the package is drawn from an :class:`RngStream`,
a Philox (counter-based) generator keyed by ``(master_seed, stream_id)``.  A
replicate's draws therefore depend only on its own key, never on how many
replicates ran before it or on which worker ran it.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import ndtr, ndtri

_UINT64_MAX = 2**64 - 1

# Gauss-Legendre abscissae/weights (half-sets on (0, 1)) used by the Genz
# bivariate normal routine; 6, 12 and 20 point rules.
_GL_X = (
    np.array([0.9324695142031522, 0.6612093864662647, 0.2386191860831970]),
    np.array([
        0.9815606342467191, 0.9041172563704750, 0.7699026741943050,
        0.5873179542866171, 0.3678314989981802, 0.1252334085114692,
    ]),
    np.array([
        0.9931285991850949, 0.9639719272779138, 0.9122344282513259,
        0.8391169718222188, 0.7463319064601508, 0.6360536807265150,
        0.5108670019508271, 0.3737060887154196, 0.2277858511416451,
        0.07652652113349733,
    ]),
)
_GL_W = (
    np.array([0.1713244923791705, 0.3607615730481384, 0.4679139345726904]),
    np.array([
        0.04717533638651177, 0.1069393259953183, 0.1600783285433464,
        0.2031674267230659, 0.2334925365383547, 0.2491470458134029,
    ]),
    np.array([
        0.01761400713915212, 0.04060142980038694, 0.06267204833410906,
        0.08327674157670475, 0.1019301198172404, 0.1181945319615184,
        0.1316886384491766, 0.1420961093183821, 0.1491729864726037,
        0.1527533871307259,
    ]),
)
_TWO_PI = 2.0 * math.pi


class RngStream:
    """Replayable random stream for one replicate.

    Args:
        master_seed: 64-bit seed shared by a whole simulation run.
        stream_id: 64-bit replicate identifier.

    Two streams with the same key produce the same sequence bit for bit;
    streams with different ``stream_id`` are independent Philox streams
    derived through :class:`numpy.random.SeedSequence`.
    """

    __slots__ = ("master_seed", "stream_id", "generator")

    def __init__(self, master_seed: int, stream_id: int = 0):
        for name, value in (("master_seed", master_seed), ("stream_id", stream_id)):
            if not isinstance(value, (int, np.integer)) or not 0 <= value <= _UINT64_MAX:
                raise ValueError(f"{name} must be an integer in [0, 2**64), got {value!r}")
        self.master_seed = int(master_seed)
        self.stream_id = int(stream_id)
        seq = np.random.SeedSequence(self.master_seed, spawn_key=(self.stream_id,))
        self.generator = np.random.Generator(np.random.Philox(seq))

    def uniform(self, size=None):
        """Uniform draws on [0, 1)."""
        return self.generator.random(size)

    def __repr__(self) -> str:
        return f"RngStream(master_seed={self.master_seed}, stream_id={self.stream_id})"


def normal_cdf(x):
    """Standard normal CDF.  Accepts scalars or arrays of finite values."""
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("normal_cdf requires finite input")
    out = ndtr(arr)
    return float(out) if out.ndim == 0 else out


def normal_quantile(p):
    """Inverse of :func:`normal_cdf` on the open interval (0, 1)."""
    arr = np.asarray(p, dtype=float)
    if not np.all((arr > 0.0) & (arr < 1.0)):
        raise ValueError("normal_quantile requires 0 < p < 1")
    out = ndtri(arr)
    return float(out) if out.ndim == 0 else out


def _bvn_upper(h: float, k: float, r: float) -> float:
    """P(X > h, Y > k) for a standard bivariate normal with correlation r.

    Drezner-Wesolowsky reduction with the Gauss-Legendre rules and the
    high-correlation series of Genz (2004); accurate to ~1e-15.
    """
    if r == 0.0:
        return float(ndtr(-h) * ndtr(-k))
    ar = abs(r)
    ng = 0 if ar < 0.3 else (1 if ar < 0.75 else 2)
    x = np.concatenate([1.0 - _GL_X[ng], 1.0 + _GL_X[ng]])
    w = np.concatenate([_GL_W[ng], _GL_W[ng]])
    hk = h * k

    if ar < 0.925:
        hs = 0.5 * (h * h + k * k)
        asr = math.asin(r)
        sn = np.sin(0.5 * asr * x)
        bvn = float(np.dot(w, np.exp((sn * hk - hs) / (1.0 - sn * sn))))
        return bvn * asr / (2.0 * _TWO_PI) + float(ndtr(-h) * ndtr(-k))

    if r < 0.0:
        k = -k
        hk = -hk
    bvn = 0.0
    if ar < 1.0:
        a2 = (1.0 - r) * (1.0 + r)
        a = math.sqrt(a2)
        bs = (h - k) ** 2
        c = (4.0 - hk) / 8.0
        d = (12.0 - hk) / 16.0
        asr = -0.5 * (bs / a2 + hk)
        if asr > -100.0:
            bvn = a * math.exp(asr) * (
                1.0 - c * (bs - a2) * (1.0 - d * bs / 5.0) / 3.0 + c * d * a2 * a2 / 5.0
            )
        if hk > -160.0:
            b = math.sqrt(bs)
            bvn -= (
                math.exp(-0.5 * hk) * math.sqrt(_TWO_PI) * float(ndtr(-b / a)) * b
                * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0)
            )
        a *= 0.5
        xs = (a * x) ** 2
        asr_v = -0.5 * (bs / xs + hk)
        keep = asr_v > -100.0
        xs = xs[keep]
        rs = np.sqrt(1.0 - xs)
        terms = np.exp(asr_v[keep]) * (
            np.exp(-hk * xs / (2.0 * (1.0 + rs) ** 2)) / rs - (1.0 + c * xs * (1.0 + d * xs))
        )
        bvn = -(bvn + a * float(np.dot(w[keep], terms))) / _TWO_PI
    if r > 0.0:
        return bvn + float(ndtr(-max(h, k)))
    return -bvn + max(0.0, float(ndtr(-h) - ndtr(-k)))


def bivariate_normal_cdf(a: float, b: float, rho: float) -> float:
    """P(X <= a, Y <= b) for standard normals with correlation ``rho``.

    ``a`` and ``b`` may be +/-inf.  Raises ``ValueError`` when |rho| >= 1.
    """
    if not -1.0 < rho < 1.0:
        raise ValueError(f"correlation must lie in (-1, 1), got {rho}")
    a = float(a)
    b = float(b)
    if math.isnan(a) or math.isnan(b):
        raise ValueError("bivariate_normal_cdf limits must not be NaN")
    if a == -math.inf or b == -math.inf:
        return 0.0
    if a == math.inf:
        return float(ndtr(b))
    if b == math.inf:
        return float(ndtr(a))
    return min(1.0, max(0.0, _bvn_upper(-a, -b, float(rho))))


def exponential_from_uniform(u, rate):
    """Inverse-CDF transform ``-ln(u) / rate`` for ``u`` in (0, 1]."""
    return -np.log(u) / rate


def sample_exponential(rate: float, rng: RngStream, size=None):
    """Exponential draws (mean ``1/rate``) by inversion of a uniform."""
    if not rate > 0:
        raise ValueError(f"rate must be positive, got {rate}")
    # 1 - U lies in (0, 1], so the log is always finite.
    return exponential_from_uniform(1.0 - rng.uniform(size), rate)


def sample_gamma(shape: float, scale: float, rng: RngStream, size=None):
    """Gamma(shape, scale) draws; numpy's Marsaglia-Tsang sampler."""
    if not (shape > 0 and scale > 0):
        raise ValueError(f"shape and scale must be positive, got {shape}, {scale}")
    return rng.generator.standard_gamma(shape, size) * scale


def sample_uniform(lo: float, hi: float, rng: RngStream, size=None):
    """Uniform draws on [lo, hi)."""
    if lo > hi:
        raise ValueError(f"lo must not exceed hi ({lo} > {hi})")
    return lo + (hi - lo) * rng.uniform(size)
