"""Numba-compiled inner kernel for the swing/governor derivative.

Importing this module requires numba; dynamics.py falls back to the numpy
implementation when the import fails. Results agree with the numpy path to
machine epsilon (no fastmath).
"""
import numba
import numpy as np


@numba.njit(cache=True, fastmath=False)
def swing_deriv(delta, domega, pm, e_mag, y_red, mb_ratio, d, inv_h2,
                pref, inv_r, gain, pmin, pmax, ws):
    n = delta.shape[0]
    dd = np.empty(n)
    ddom = np.empty(n)
    dpm = np.empty(n)
    pe = np.empty(n)
    e = e_mag * np.exp(1j * delta)
    for i in range(n):
        acc = 0.0 + 0.0j
        for j in range(n):
            acc += y_red[i, j] * e[j]
        pe[i] = (e[i].real * acc.real + e[i].imag * acc.imag) * mb_ratio[i]
    for i in range(n):
        dd[i] = ws * domega[i]
        ddom[i] = (pm[i] - pe[i] - d[i] * domega[i]) * inv_h2[i]
        g = (pref[i] - domega[i] * inv_r[i] - pm[i]) * gain[i]
        if (pm[i] >= pmax[i] and g > 0.0) or (pm[i] <= pmin[i] and g < 0.0):
            g = 0.0
        dpm[i] = g
    return dd, ddom, dpm, pe
