"""Pure-numpy kernel implementations.

Layouts: images are (h, w, c) and filters are (kw, kh, c_in, c_out), all
float64.  The spatial loops run over the kernel taps only (kw*kh
iterations), each tap being one strided slice plus a BLAS matmul.
"""

import numpy as np


def conv2d_forward(x, f, stride, pad):
    """Cross-correlation of x (h,w,cin) with f (kw,kh,cin,cout), no bias."""
    h, w, cin = x.shape
    kw, kh, _, cout = f.shape
    oh = (h + 2 * pad - kw) // stride + 1
    ow = (w + 2 * pad - kh) // stride + 1
    xp = np.zeros((h + 2 * pad, w + 2 * pad, cin))
    xp[pad:pad + h, pad:pad + w] = x
    y = np.zeros((oh, ow, cout))
    for u in range(kw):
        for v in range(kh):
            patch = xp[u:u + stride * oh:stride, v:v + stride * ow:stride, :]
            y += (patch.reshape(oh * ow, cin) @ f[u, v]).reshape(oh, ow, cout)
    return y


def conv2d_grad_input(gy, f, stride, pad, h, w):
    """Adjoint of conv2d_forward w.r.t. its input; output shape (h,w,cin)."""
    oh, ow, cout = gy.shape
    kw, kh, cin, _ = f.shape
    gxp = np.zeros((h + 2 * pad, w + 2 * pad, cin))
    g2 = gy.reshape(oh * ow, cout)
    for u in range(kw):
        for v in range(kh):
            gxp[u:u + stride * oh:stride, v:v + stride * ow:stride, :] += (
                g2 @ f[u, v].T
            ).reshape(oh, ow, cin)
    return gxp[pad:pad + h, pad:pad + w].copy()


def conv2d_grad_filters(x, gy, stride, pad, kw, kh):
    """Adjoint of conv2d_forward w.r.t. the filters; output (kw,kh,cin,cout)."""
    h, w, cin = x.shape
    oh, ow, cout = gy.shape
    xp = np.zeros((h + 2 * pad, w + 2 * pad, cin))
    xp[pad:pad + h, pad:pad + w] = x
    g2 = gy.reshape(oh * ow, cout)
    gf = np.zeros((kw, kh, cin, cout))
    for u in range(kw):
        for v in range(kh):
            patch = xp[u:u + stride * oh:stride, v:v + stride * ow:stride, :]
            gf[u, v] = patch.reshape(oh * ow, cin).T @ g2
    return gf
