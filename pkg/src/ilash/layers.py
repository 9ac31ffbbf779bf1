"""Forward and backward passes for the layer kinds of :mod:`ilash.graph`.

Tensors are NHWC float64.  Every ``forward`` returns ``(out, cache)``;
``backward(dout, cache, params)`` returns ``(dx, grads)``.
"""
from __future__ import annotations

import numpy as np

from .graph import Activation, LayerKind, LayerSpec, Padding


def _same_pads(size, k, s):
    out = -(-size // s)
    total = max((out - 1) * s + k - size, 0)
    return total // 2, total - total // 2


def _pad(x, spec: LayerSpec):
    if spec.padding is Padding.VALID:
        return x, (0, 0, 0, 0)
    k, s = spec.kernel_size, spec.stride
    top, bottom = _same_pads(x.shape[1], k, s)
    left, right = _same_pads(x.shape[2], k, s)
    pads = (top, bottom, left, right)
    if any(pads):
        x = np.pad(x, ((0, 0), (top, bottom), (left, right), (0, 0)))
    return x, pads


def _out_hw(xp_shape, k, s):
    return (xp_shape[1] - k) // s + 1, (xp_shape[2] - k) // s + 1


def conv2d_forward(x, W, b, spec: LayerSpec):
    k, s = spec.kernel_size, spec.stride
    xp, pads = _pad(x, spec)
    oh, ow = _out_hw(xp.shape, k, s)
    out = np.zeros((x.shape[0], oh, ow, W.shape[3]))
    for i in range(k):
        for j in range(k):
            patch = xp[:, i:i + s * (oh - 1) + 1:s, j:j + s * (ow - 1) + 1:s, :]
            out += patch @ W[i, j]
    out += b
    return out, (xp.shape, pads, xp)


def conv2d_backward(dout, W, spec: LayerSpec, cache):
    xp_shape, pads, xp = cache
    k, s = spec.kernel_size, spec.stride
    oh, ow = dout.shape[1:3]
    dxp = np.zeros(xp_shape)
    dW = np.zeros_like(W)
    flat = dout.reshape(-1, dout.shape[3])
    for i in range(k):
        for j in range(k):
            sl = (slice(None), slice(i, i + s * (oh - 1) + 1, s), slice(j, j + s * (ow - 1) + 1, s))
            patch = xp[sl]
            dW[i, j] = patch.reshape(-1, patch.shape[3]).T @ flat
            dxp[sl] += dout @ W[i, j].T
    db = flat.sum(axis=0)
    return _unpad(dxp, pads), {"W": dW, "b": db}


def depthwise_forward(x, W, b, spec: LayerSpec):
    k, s = spec.kernel_size, spec.stride
    m = W.shape[3]
    xp, pads = _pad(x, spec)
    oh, ow = _out_hw(xp.shape, k, s)
    c = x.shape[3]
    out = np.zeros((x.shape[0], oh, ow, c, m))
    for i in range(k):
        for j in range(k):
            patch = xp[:, i:i + s * (oh - 1) + 1:s, j:j + s * (ow - 1) + 1:s, :]
            out += patch[..., None] * W[i, j]
    out = out.reshape(x.shape[0], oh, ow, c * m) + b
    return out, (xp.shape, pads, xp)


def depthwise_backward(dout, W, spec: LayerSpec, cache):
    xp_shape, pads, xp = cache
    k, s = spec.kernel_size, spec.stride
    c, m = W.shape[2], W.shape[3]
    n, oh, ow = dout.shape[:3]
    d5 = dout.reshape(n, oh, ow, c, m)
    dxp = np.zeros(xp_shape)
    dW = np.zeros_like(W)
    for i in range(k):
        for j in range(k):
            sl = (slice(None), slice(i, i + s * (oh - 1) + 1, s), slice(j, j + s * (ow - 1) + 1, s))
            patch = xp[sl]
            dW[i, j] = np.einsum("nhwc,nhwcm->cm", patch, d5)
            dxp[sl] += (d5 * W[i, j]).sum(axis=-1)
    db = dout.reshape(-1, c * m).sum(axis=0)
    return _unpad(dxp, pads), {"W": dW, "b": db}


def _unpad(dxp, pads):
    top, bottom, left, right = pads
    return dxp[:, top:dxp.shape[1] - bottom, left:dxp.shape[2] - right, :]


def pool_forward(x):
    n, h, w, c = x.shape
    oh, ow = h // 2, w // 2
    xc = x[:, :2 * oh, :2 * ow, :]
    win = xc.reshape(n, oh, 2, ow, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, oh, ow, c, 4)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, (x.shape, arg)


def pool_backward(dout, cache):
    x_shape, arg = cache
    n, h, w, c = x_shape
    oh, ow = h // 2, w // 2
    win = np.zeros((n, oh, ow, c, 4))
    np.put_along_axis(win, arg[..., None], dout[..., None], axis=-1)
    dxc = win.reshape(n, oh, ow, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, 2 * oh, 2 * ow, c)
    dx = np.zeros(x_shape)
    dx[:, :2 * oh, :2 * ow, :] = dxc
    return dx


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                    np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def activate(z, act: Activation):
    if act is Activation.RELU:
        return np.maximum(z, 0.0)
    if act is Activation.SIGMOID:
        return sigmoid(z)
    if act is Activation.SOFTMAX:
        return softmax(z)
    return z


def activation_backward(dy, z, y, act: Activation):
    if act is Activation.RELU:
        return dy * (z > 0)
    if act is Activation.SIGMOID:
        return dy * y * (1.0 - y)
    if act is Activation.SOFTMAX:
        return y * (dy - (dy * y).sum(axis=-1, keepdims=True))
    return dy


def forward(spec: LayerSpec, x, params, apply_activation=True):
    """Run one layer.  Output heads may skip their activation to expose logits."""
    kind = spec.kind
    if kind is LayerKind.CONV2D:
        z, inner = conv2d_forward(x, params["W"], params["b"], spec)
    elif kind is LayerKind.DEPTHWISE_CONV2D:
        z, inner = depthwise_forward(x, params["W"], params["b"], spec)
    elif kind in (LayerKind.DENSE, LayerKind.OUTPUT):
        z, inner = x @ params["W"] + params["b"], x
    elif kind is LayerKind.POOL:
        z, inner = pool_forward(x)
    elif kind is LayerKind.FLATTEN:
        z, inner = x.reshape(x.shape[0], -1), x.shape
    else:
        z, inner = x, None
    y = activate(z, spec.activation) if apply_activation else z
    return y, (inner, z, y, apply_activation)


def backward(spec: LayerSpec, dy, cache, params):
    inner, z, y, applied = cache
    dz = activation_backward(dy, z, y, spec.activation) if applied else dy
    kind = spec.kind
    if kind is LayerKind.CONV2D:
        return conv2d_backward(dz, params["W"], spec, inner)
    if kind is LayerKind.DEPTHWISE_CONV2D:
        return depthwise_backward(dz, params["W"], spec, inner)
    if kind in (LayerKind.DENSE, LayerKind.OUTPUT):
        return dz @ params["W"].T, {"W": inner.T @ dz, "b": dz.sum(axis=0)}
    if kind is LayerKind.POOL:
        return pool_backward(dz, inner), {}
    if kind is LayerKind.FLATTEN:
        return dz.reshape(inner), {}
    return dz, {}
