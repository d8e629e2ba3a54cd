"""Numba-compiled kernel implementations (explicit loops, cached)."""

import numpy as np
from numba import njit


@njit(cache=True)
def conv2d_forward(x, f, stride, pad):
    h, w, cin = x.shape
    kw, kh, _, cout = f.shape
    oh = (h + 2 * pad - kw) // stride + 1
    ow = (w + 2 * pad - kh) // stride + 1
    y = np.zeros((oh, ow, cout))
    for i in range(oh):
        for j in range(ow):
            for u in range(kw):
                m = i * stride + u - pad
                if m < 0 or m >= h:
                    continue
                for v in range(kh):
                    n = j * stride + v - pad
                    if n < 0 or n >= w:
                        continue
                    for ic in range(cin):
                        xv = x[m, n, ic]
                        for oc in range(cout):
                            y[i, j, oc] += xv * f[u, v, ic, oc]
    return y


@njit(cache=True)
def conv2d_grad_input(gy, f, stride, pad, h, w):
    oh, ow, cout = gy.shape
    kw, kh, cin, _ = f.shape
    gx = np.zeros((h, w, cin))
    for i in range(oh):
        for j in range(ow):
            for u in range(kw):
                m = i * stride + u - pad
                if m < 0 or m >= h:
                    continue
                for v in range(kh):
                    n = j * stride + v - pad
                    if n < 0 or n >= w:
                        continue
                    for oc in range(cout):
                        gv = gy[i, j, oc]
                        for ic in range(cin):
                            gx[m, n, ic] += gv * f[u, v, ic, oc]
    return gx


@njit(cache=True)
def conv2d_grad_filters(x, gy, stride, pad, kw, kh):
    h, w, cin = x.shape
    oh, ow, cout = gy.shape
    gf = np.zeros((kw, kh, cin, cout))
    for i in range(oh):
        for j in range(ow):
            for u in range(kw):
                m = i * stride + u - pad
                if m < 0 or m >= h:
                    continue
                for v in range(kh):
                    n = j * stride + v - pad
                    if n < 0 or n >= w:
                        continue
                    for ic in range(cin):
                        xv = x[m, n, ic]
                        for oc in range(cout):
                            gf[u, v, ic, oc] += xv * gy[i, j, oc]
    return gf
