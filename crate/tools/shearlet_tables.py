"""Generate the default shearlet building blocks (h1, P) as Rust constants.

h1: 9-tap zero-phase maximally flat low-pass. Amplitude in x = cos(w):
    H(x) = ((1+x)/2)^2 * (1 + 2 s + 3 s^2),  s = (1-x)/2
    (two double zeros at w = pi, flatness of order 6 at w = 0, H(pi/2) = 0.6875).
P:  17x17 fan filter. The 1-D maximally flat half-band filter of degree 7 in x
    (Daubechies form, p = 4) is mapped to 2-D with the diamond McClellan
    transform x -> (cos w1 + cos w2) / 2, modulated by (-1)^n along columns
    and normalized to unit l1 norm. The 15x15 support is centered in 17x17.

Usage: python3 tools/shearlet_tables.py > crates/core/src/shearlet/tables.rs
"""
from math import comb

import numpy as np
from numpy.polynomial import chebyshev as cheb
from numpy.polynomial import polynomial as poly


def amplitude_to_taps(coeffs_x):
    """Power-series coefficients in x = cos w -> symmetric taps h[-d..d]."""
    c = cheb.poly2cheb(coeffs_x)
    d = len(c) - 1
    taps = np.zeros(2 * d + 1)
    taps[d] = c[0]
    for k in range(1, d + 1):
        taps[d + k] = taps[d - k] = c[k] / 2.0
    return taps


def maxflat(k, l):
    """((1+x)/2)^k * sum_{i<l} C(k-1+i, i) ((1-x)/2)^i as a power series in x."""
    one_plus = poly.polypow([0.5, 0.5], k)
    s = np.array([0.5, -0.5])
    tail = np.zeros(1)
    for i in range(l):
        tail = poly.polyadd(tail, comb(k - 1 + i, i) * poly.polypow(s, i))
    return poly.polymul(one_plus, tail)


def mcclellan_diamond(coeffs_x):
    """Substitute x -> (cos w1 + cos w2)/2; returns the 2-D taps array."""
    d = len(coeffs_x) - 1
    size = 2 * d + 1
    # t = (cos w1 + cos w2)/2 as a 3x3 kernel
    t = np.zeros((3, 3))
    t[0, 1] = t[2, 1] = t[1, 0] = t[1, 2] = 0.25
    out = np.zeros((size, size))
    power = np.zeros((1, 1))
    power[0, 0] = 1.0
    for n, a in enumerate(coeffs_x):
        if n > 0:
            power = conv2_full(power, t)
        r = power.shape[0] // 2
        out[d - r:d + r + 1, d - r:d + r + 1] += a * power
    return out


def conv2_full(a, b):
    ra, ca = a.shape
    rb, cb = b.shape
    out = np.zeros((ra + rb - 1, ca + cb - 1))
    for i in range(ra):
        for j in range(ca):
            out[i:i + rb, j:j + cb] += a[i, j] * b
    return out


def main():
    h1 = amplitude_to_taps(maxflat(2, 3))
    assert len(h1) == 9 and abs(h1.sum() - 1.0) < 1e-14

    halfband = maxflat(4, 4)
    assert len(halfband) == 8
    diamond = mcclellan_diamond(halfband)
    assert diamond.shape == (15, 15)
    cols = np.arange(15) - 7
    fan = diamond * ((-1.0) ** cols)[None, :]
    fan /= np.abs(fan).sum()
    p = np.zeros((17, 17))
    p[1:16, 1:16] = fan

    print("// Generated by tools/shearlet_tables.py. Do not edit by hand.")
    print()
    print("/// Default 9-tap maximally flat low-pass filter, centered at index 4.")
    print("pub const DEFAULT_H1: [f64; 9] = [")
    for v in h1:
        print(f"    {float(v) + 0.0!r},")
    print("];")
    print()
    print("/// Default 17x17 fan filter (row-major), unit l1 norm, centered at (8, 8).")
    print("pub const DEFAULT_P: [f64; 289] = [")
    for row in p:
        print("    " + " ".join(f"{float(v) + 0.0!r}," for v in row))
    print("];")


if __name__ == "__main__":
    main()
