"""Minimal reverse-mode autodiff over dense numpy tensors.

A closed set of differentiable operators: 1-D (grouped/depthwise-separable)
convolutions, transposed convolution, nearest-neighbor interpolation, 1-D
pixel shuffle, PReLU/ReLU, global layer norm, channel concat/sum, and the
elementwise/reduction arithmetic needed to build losses on top.

Tensors are rank <= 2 arrays laid out channels x frames (loss values are
rank 0).  Gradients are accumulated by closures recorded at forward time
and replayed in reverse topological order, one graph per loss.
"""

import numpy as np

from .errors import ConfigError, DimensionError, UsageError

DTYPES = {"f32": np.float32, "f64": np.float64}


def resolve_dtype(dtype):
    if isinstance(dtype, str):
        try:
            return DTYPES[dtype]
        except KeyError:
            raise ConfigError(f"unknown dtype {dtype!r}; expected one of {sorted(DTYPES)}")
    return np.dtype(dtype).type


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev", "name")

    def __init__(self, data, requires_grad=False, _prev=(), name=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None
        self._prev = _prev
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype}, name={self.name})"


def tensor(data, dtype="f32", requires_grad=False, name=None):
    arr = np.asarray(data, dtype=resolve_dtype(dtype))
    return Tensor(arr, requires_grad=requires_grad, name=name)


def _as_tensor(x, like):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _needs_grad(*ts):
    return any(t.requires_grad for t in ts)


def _unbroadcast(grad, shape):
    """Sum grad down to `shape` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def backward(loss, seed=None):
    """Run reverse-mode accumulation from `loss` through its recorded graph."""
    if seed is None:
        seed = np.ones_like(loss.data)
    topo, visited = [], set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for child in node._prev:
            if id(child) not in visited:
                stack.append((child, False))
    loss.grad = np.asarray(seed, dtype=loss.data.dtype)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward()


def gradient_map(loss, params, seed=None):
    """Gradients of `loss` w.r.t. a name->Tensor map.

    Raises UsageError for parameters that never entered the recorded graph.
    """
    for p in params.values():
        p.grad = None
    backward(loss, seed=seed)
    grads = {}
    for name, p in params.items():
        if p.grad is None:
            raise UsageError(f"tensor {name!r} is not recorded in the loss graph")
        grads[name] = p.grad
    return grads


# ---------------------------------------------------------------------------
# elementwise / reduction arithmetic


def add2(a, b):
    b = _as_tensor(b, a)
    out = Tensor(a.data + b.data, _prev=(a, b), requires_grad=_needs_grad(a, b))

    def _bw():
        if a.requires_grad or a._prev:
            a.accumulate(_unbroadcast(out.grad, a.shape))
        if b.requires_grad or b._prev:
            b.accumulate(_unbroadcast(out.grad, b.shape))

    out._backward = _bw
    return out


def sub(a, b):
    b = _as_tensor(b, a)
    out = Tensor(a.data - b.data, _prev=(a, b), requires_grad=_needs_grad(a, b))

    def _bw():
        if a.requires_grad or a._prev:
            a.accumulate(_unbroadcast(out.grad, a.shape))
        if b.requires_grad or b._prev:
            b.accumulate(-_unbroadcast(out.grad, b.shape))

    out._backward = _bw
    return out


def mul(a, b):
    b = _as_tensor(b, a)
    out = Tensor(a.data * b.data, _prev=(a, b), requires_grad=_needs_grad(a, b))

    def _bw():
        if a.requires_grad or a._prev:
            a.accumulate(_unbroadcast(out.grad * b.data, a.shape))
        if b.requires_grad or b._prev:
            b.accumulate(_unbroadcast(out.grad * a.data, b.shape))

    out._backward = _bw
    return out


def div(a, b):
    b = _as_tensor(b, a)
    out = Tensor(a.data / b.data, _prev=(a, b), requires_grad=_needs_grad(a, b))

    def _bw():
        if a.requires_grad or a._prev:
            a.accumulate(_unbroadcast(out.grad / b.data, a.shape))
        if b.requires_grad or b._prev:
            b.accumulate(_unbroadcast(-out.grad * a.data / (b.data * b.data), b.shape))

    out._backward = _bw
    return out


def sum_all(a):
    out = Tensor(a.data.sum(), _prev=(a,), requires_grad=a.requires_grad)

    def _bw():
        a.accumulate(np.full_like(a.data, out.grad))

    out._backward = _bw
    return out


def mean_all(a):
    n = a.data.size
    out = Tensor(a.data.mean(), _prev=(a,), requires_grad=a.requires_grad)

    def _bw():
        a.accumulate(np.full_like(a.data, out.grad / n))

    out._backward = _bw
    return out


def square(a):
    return mul(a, a)


def sqrt(a):
    root = np.sqrt(a.data)
    out = Tensor(root, _prev=(a,), requires_grad=a.requires_grad)

    def _bw():
        a.accumulate(out.grad * 0.5 / root)

    out._backward = _bw
    return out


def log10(a):
    out = Tensor(np.log10(a.data), _prev=(a,), requires_grad=a.requires_grad)

    def _bw():
        a.accumulate(out.grad / (a.data * np.log(10.0)))

    out._backward = _bw
    return out


def reshape(a, shape):
    out = Tensor(a.data.reshape(shape), _prev=(a,), requires_grad=a.requires_grad)

    def _bw():
        a.accumulate(out.grad.reshape(a.shape))

    out._backward = _bw
    return out


def slice_channels(a, start, stop):
    out = Tensor(a.data[start:stop], _prev=(a,), requires_grad=a.requires_grad)

    def _bw():
        g = np.zeros_like(a.data)
        g[start:stop] = out.grad
        a.accumulate(g)

    out._backward = _bw
    return out


def slice_frames(a, start, stop):
    out = Tensor(a.data[:, start:stop], _prev=(a,), requires_grad=a.requires_grad)

    def _bw():
        g = np.zeros_like(a.data)
        g[:, start:stop] = out.grad
        a.accumulate(g)

    out._backward = _bw
    return out


def pad_frames(a, before, after):
    out = Tensor(
        np.pad(a.data, ((0, 0), (before, after))), _prev=(a,), requires_grad=a.requires_grad
    )

    def _bw():
        stop = out.grad.shape[1] - after
        a.accumulate(out.grad[:, before:stop])

    out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# fusion primitives


def add(xs):
    """Elementwise sum of equally-shaped feature maps."""
    base = xs[0].shape
    for i, x in enumerate(xs[1:], start=1):
        if x.shape != base:
            raise DimensionError(
                f"add: input {i} has shape {tuple(x.shape)}, expected {tuple(base)}"
            )
    out = Tensor(sum(x.data for x in xs), _prev=tuple(xs), requires_grad=_needs_grad(*xs))

    def _bw():
        for x in xs:
            x.accumulate(out.grad)

    out._backward = _bw
    return out


def concat_channels(xs, edge=None):
    frames = xs[0].shape[-1]
    for i, x in enumerate(xs[1:], start=1):
        if x.shape[-1] != frames:
            where = f" at {edge}" if edge else ""
            raise DimensionError(
                f"concat_channels{where}: input {i} has {x.shape[-1]} frames, expected {frames}"
            )
    out = Tensor(
        np.concatenate([x.data for x in xs], axis=0),
        _prev=tuple(xs),
        requires_grad=_needs_grad(*xs),
    )
    sizes = [x.shape[0] for x in xs]

    def _bw():
        off = 0
        for x, c in zip(xs, sizes):
            x.accumulate(out.grad[off : off + c])
            off += c

    out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# convolutions


def _im2col(xp, k, stride, fout):
    cin = xp.shape[0]
    s0, s1 = xp.strides
    win = np.lib.stride_tricks.as_strided(xp, (cin, fout, k), (s0, s1 * stride, s1))
    # (Cin, k, Fout) contiguous copy for matmul
    return np.ascontiguousarray(win.transpose(0, 2, 1))


def conv1d(x, w, b=None, stride=1, groups=1, padding=0):
    """Grouped 1-D convolution: x (Cin,F), w (Cout, Cin/groups, k) -> (Cout, F').

    F' = (F + 2*padding - k)//stride + 1.
    """
    if x.data.ndim != 2:
        raise DimensionError(f"conv1d: input must be rank 2 (channels x frames), got {x.shape}")
    cin, f = x.shape
    cout, cin_g, k = w.shape
    if k < 1 or stride < 1 or groups < 1:
        raise ConfigError("conv1d: kernel, stride and groups must all be >= 1")
    if cin % groups != 0:
        raise DimensionError(f"conv1d: channel axis {cin} not divisible by groups={groups}")
    if cout % groups != 0:
        raise DimensionError(f"conv1d: output channel axis {cout} not divisible by groups={groups}")
    if cin_g != cin // groups:
        raise DimensionError(
            f"conv1d: weight input-channel axis is {cin_g}, expected {cin // groups}"
        )
    fp = f + 2 * padding
    if fp < k:
        raise DimensionError(f"conv1d: frame axis {f} (+2*{padding} pad) shorter than kernel {k}")
    if b is not None and b.shape != (cout,):
        raise DimensionError(f"conv1d: bias axis {b.shape} != ({cout},)")

    xp = np.pad(x.data, ((0, 0), (padding, padding))) if padding else x.data
    fout = (fp - k) // stride + 1
    cols = _im2col(xp, k, stride, fout)  # (Cin, k, Fout)
    cols_g = cols.reshape(groups, cin_g * k, fout)
    w_g = w.data.reshape(groups, cout // groups, cin_g * k)
    y = np.matmul(w_g, cols_g).reshape(cout, fout)
    if b is not None:
        y = y + b.data[:, None]

    prev = (x, w) if b is None else (x, w, b)
    out = Tensor(y, _prev=prev, requires_grad=_needs_grad(*prev))

    def _bw():
        gy = out.grad.reshape(groups, cout // groups, fout)
        if w.requires_grad or w._prev:
            dw = np.matmul(gy, cols_g.transpose(0, 2, 1))
            w.accumulate(dw.reshape(cout, cin_g, k))
        if b is not None and (b.requires_grad or b._prev):
            b.accumulate(out.grad.sum(axis=1))
        if x.requires_grad or x._prev:
            dcols = np.matmul(w_g.transpose(0, 2, 1), gy)  # (G, Cin_g*k, Fout)
            dcols = dcols.reshape(cin, k, fout)
            dxp = np.zeros((cin, fp), dtype=x.data.dtype)
            for j in range(k):
                dxp[:, j : j + stride * fout : stride] += dcols[:, j, :]
            x.accumulate(dxp[:, padding : fp - padding] if padding else dxp)

    out._backward = _bw
    return out


def transposed_conv1d(x, w, b=None, stride=1, out_length=None):
    """Transposed 1-D convolution: x (Cin,K), w (Cin, Cout, k) -> (Cout, (K-1)*stride+k).

    Adjoint of conv1d for the same weight array and stride (valid padding).
    """
    if x.data.ndim != 2:
        raise DimensionError(f"transposed_conv1d: input must be rank 2, got {x.shape}")
    cin, kframes = x.shape
    wcin, cout, k = w.shape
    if stride < 1:
        raise ConfigError("transposed_conv1d: stride must be >= 1")
    if wcin != cin:
        raise DimensionError(
            f"transposed_conv1d: weight channel axis {wcin} != input channel axis {cin}"
        )
    t = (kframes - 1) * stride + k
    if out_length is not None and not (t - stride < out_length <= t):
        raise DimensionError(
            f"transposed_conv1d: kernel {k} / stride {stride} cannot produce length "
            f"{out_length} from {kframes} frames (natural length {t})"
        )

    prod = np.tensordot(w.data, x.data, axes=([0], [0]))  # (Cout, k, K)
    y = np.zeros((cout, t), dtype=x.data.dtype)
    for j in range(k):
        y[:, j : j + stride * (kframes - 1) + 1 : stride] += prod[:, j, :]
    if b is not None:
        y = y + b.data[:, None]

    prev = (x, w) if b is None else (x, w, b)
    out = Tensor(y, _prev=prev, requires_grad=_needs_grad(*prev))

    def _bw():
        gy = np.ascontiguousarray(out.grad)
        s0, s1 = gy.strides
        dwin = np.lib.stride_tricks.as_strided(gy, (cout, kframes, k), (s0, s1 * stride, s1))
        if x.requires_grad or x._prev:
            x.accumulate(np.tensordot(w.data, dwin, axes=([1, 2], [0, 2])))
        if w.requires_grad or w._prev:
            w.accumulate(np.tensordot(x.data, dwin, axes=([1], [1])))
        if b is not None and (b.requires_grad or b._prev):
            b.accumulate(out.grad.sum(axis=1))

    out._backward = _bw
    return out


def depthwise_separable_conv(x, dw_w, dw_b, pw_w, pw_b, stride=1, padding=0):
    """Depthwise conv (groups = C) followed by a pointwise 1x1 conv.

    dw_w: (C*mult, 1, k) with groups=C; pw_w: (Cout, C*mult, 1).
    """
    c = x.shape[0]
    mid = conv1d(x, dw_w, dw_b, stride=stride, groups=c, padding=padding)
    return conv1d(mid, pw_w, pw_b, stride=1, groups=1, padding=0)


def dw_sep_param_count(c, k, cout):
    """Parameters of a depthwise-separable conv with both biases."""
    return c * k + c + cout * c + cout


# ---------------------------------------------------------------------------
# resampling


SUPPORTED_FACTORS = (1, 2, 4, 8, 16)


def interpolate(x, factor):
    """Nearest-neighbor upsampling along frames by an integral power of two."""
    if factor not in SUPPORTED_FACTORS:
        raise ConfigError(f"interpolate: factor {factor} not in {SUPPORTED_FACTORS}")
    if factor == 1:
        return x
    out = Tensor(np.repeat(x.data, factor, axis=1), _prev=(x,), requires_grad=x.requires_grad)

    def _bw():
        c, f = x.shape
        x.accumulate(out.grad.reshape(c, f, factor).sum(axis=2))

    out._backward = _bw
    return out


def pixel_shuffle_1d(x, r):
    """Rearrange (C, F) -> (C/r, F*r): out[c, f*r + j] = x[c*r + j, f]."""
    c, f = x.shape
    if r < 1:
        raise ConfigError("pixel_shuffle_1d: r must be >= 1")
    if c % r != 0:
        raise DimensionError(f"pixel_shuffle_1d: channel axis {c} not divisible by r={r}")
    if r == 1:
        return x
    y = x.data.reshape(c // r, r, f).transpose(0, 2, 1).reshape(c // r, f * r)
    out = Tensor(np.ascontiguousarray(y), _prev=(x,), requires_grad=x.requires_grad)

    def _bw():
        g = out.grad.reshape(c // r, f, r).transpose(0, 2, 1).reshape(c, f)
        x.accumulate(np.ascontiguousarray(g))

    out._backward = _bw
    return out


def pixel_unshuffle_1d(x, r):
    """Inverse of pixel_shuffle_1d."""
    c, fr = x.shape
    if fr % r != 0:
        raise DimensionError(f"pixel_unshuffle_1d: frame axis {fr} not divisible by r={r}")
    if r == 1:
        return x
    f = fr // r
    y = x.data.reshape(c, f, r).transpose(0, 2, 1).reshape(c * r, f)
    out = Tensor(np.ascontiguousarray(y), _prev=(x,), requires_grad=x.requires_grad)

    def _bw():
        g = out.grad.reshape(c, r, f).transpose(0, 2, 1).reshape(c, fr)
        x.accumulate(np.ascontiguousarray(g))

    out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# nonlinearities / normalization


def relu(x):
    out = Tensor(np.maximum(x.data, 0), _prev=(x,), requires_grad=x.requires_grad)

    def _bw():
        x.accumulate(out.grad * (x.data > 0))

    out._backward = _bw
    return out


def prelu(x, a):
    """x where x >= 0 else a*x; `a` is a scalar or per-channel (C,1) tensor."""
    neg = x.data < 0
    out = Tensor(
        np.where(neg, a.data * x.data, x.data), _prev=(x, a), requires_grad=_needs_grad(x, a)
    )

    def _bw():
        if x.requires_grad or x._prev:
            x.accumulate(out.grad * np.where(neg, a.data * np.ones_like(x.data), 1.0))
        if a.requires_grad or a._prev:
            a.accumulate(_unbroadcast(out.grad * np.where(neg, x.data, 0.0), a.shape))

    out._backward = _bw
    return out


def global_layer_norm(x, gain, bias, eps=1e-8):
    """Normalize to zero mean / unit variance over all C*F entries, then affine.

    gain/bias are per-channel (C,1).
    """
    if x.shape[-1] < 1:
        raise DimensionError("global_layer_norm: empty frame axis")
    mu = x.data.mean()
    var = x.data.var()
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    y = gain.data * xhat + bias.data
    out = Tensor(y, _prev=(x, gain, bias), requires_grad=_needs_grad(x, gain, bias))
    n = x.data.size

    def _bw():
        gy = out.grad
        if gain.requires_grad or gain._prev:
            gain.accumulate(_unbroadcast(gy * xhat, gain.shape))
        if bias.requires_grad or bias._prev:
            bias.accumulate(_unbroadcast(gy, bias.shape))
        if x.requires_grad or x._prev:
            dxhat = gy * gain.data
            m1 = dxhat.sum() / n
            m2 = (dxhat * xhat).sum() / n
            x.accumulate(inv * (dxhat - m1 - xhat * m2))

    out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# finite-difference oracle


def fd_gradient(fn, arr, step=1e-5):
    """Central finite differences of scalar-valued fn w.r.t. ndarray arr."""
    g = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = fn()
        flat[i] = orig - step
        lo = fn()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * step)
    return g


def rel_error(analytic, numeric):
    """Max absolute deviation scaled by the numeric gradient's magnitude."""
    denom = max(np.abs(numeric).max(), np.abs(analytic).max(), 1e-12)
    return float(np.abs(analytic - numeric).max() / denom)
