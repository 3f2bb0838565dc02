"""Temporal-shift convolutional pulse estimator.

Architecture, per branch (all convs 3x3, stride 1, same padding, tanh):

    input (T, 3, s, s)
      conv1 -> ch_mid
      residual shift block: y = tanh(x + conv2(shift(x)))
      * attention mask 1, average pool 2x2, dropout d1
      residual shift block: y = tanh(x + conv3(shift(x)))
      conv4 -> ch_out
      * attention mask 2, average pool 2x2, dropout d2

The short-range branch runs each group of three consecutive motion patches
independently; the long-range branch runs the per-group representative
(middle) patches as one sequence. Branch tails are concatenated along
channels, merged by one conv, averaged over time, and fed to a dense head
that emits one value per frame transition.

The temporal shift exchanges the first third of channels with the next time
step and the second third with the previous one (zero-filled at the ends);
it has no parameters. Everything here is plain numpy: forward, backward, and
the Adadelta loop are explicit so gradients can be checked against finite
differences. Activations are kept channels-last internally (the im2col
gather is far cheaper in that layout); the public interfaces and the
serialized weight tensors stay channels-first.
"""

from __future__ import annotations

import hashlib
import json
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import NumericError, ParseError
from .preprocess import SIGMA_GUARD
from .validation import require

_SLAB_BYTES = 48 * 1024 * 1024  # transient im2col buffer budget


# ---------------------------------------------------------------------------
# configuration and weights


@dataclass(frozen=True)
class NetworkConfig:
    window_len: int = 10
    in_side: int = 36
    ch_mid: int = 32
    ch_out: int = 64
    hidden: int = 128
    branches: str = "multi"  # or "adjacent"
    drop1: float = 0.25
    drop2: float = 0.5
    norm_order: str = "affine-first"

    def __post_init__(self):
        require(self.window_len >= 4, "window_len must be >= 4 (one group of 3 diffs)")
        require(self.in_side >= 4, "in_side must be >= 4 (two pooling stages)")
        require(self.branches in ("multi", "adjacent"), f"bad branches '{self.branches}'")
        require(0.0 <= self.drop1 < 1.0 and 0.0 <= self.drop2 < 1.0,
                "drop rates must lie in [0, 1)")
        require(self.norm_order in ("affine-first", "affine-after"),
                f"bad norm_order '{self.norm_order}'")

    @property
    def n_out(self) -> int:
        return self.window_len - 1

    @property
    def n_groups(self) -> int:
        return (self.window_len - 1) // 3

    @property
    def tail_side(self) -> int:
        return self.in_side // 2 // 2

    @property
    def merge_in(self) -> int:
        return self.ch_out * (2 if self.branches == "multi" else 1)

    def branch_prefixes(self) -> tuple[str, ...]:
        return ("motion", "segment") if self.branches == "multi" else ("motion",)


def tensor_specs(cfg: NetworkConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Canonical (name, shape) list; serialization order."""
    specs: list[tuple[str, tuple[int, ...]]] = [
        ("norm.beta", (3,)), ("norm.gamma", (3,))]
    for p in cfg.branch_prefixes():
        specs += [
            (f"{p}.conv1.w", (cfg.ch_mid, 3, 3, 3)), (f"{p}.conv1.b", (cfg.ch_mid,)),
            (f"{p}.conv2.w", (cfg.ch_mid, cfg.ch_mid, 3, 3)), (f"{p}.conv2.b", (cfg.ch_mid,)),
            (f"{p}.conv3.w", (cfg.ch_mid, cfg.ch_mid, 3, 3)), (f"{p}.conv3.b", (cfg.ch_mid,)),
            (f"{p}.conv4.w", (cfg.ch_out, cfg.ch_mid, 3, 3)), (f"{p}.conv4.b", (cfg.ch_out,)),
            (f"{p}.mask1.w", (1, 3, 1, 1)), (f"{p}.mask1.b", (1,)),
            (f"{p}.mask2.w", (1, 3, 1, 1)), (f"{p}.mask2.b", (1,)),
        ]
    specs += [
        ("merge.w", (cfg.ch_out, cfg.merge_in, 3, 3)), ("merge.b", (cfg.ch_out,)),
        ("head.fc1.w", (cfg.hidden, cfg.ch_out * cfg.tail_side ** 2)),
        ("head.fc1.b", (cfg.hidden,)),
        ("head.fc2.w", (cfg.n_out, cfg.hidden)), ("head.fc2.b", (cfg.n_out,)),
    ]
    return specs


@dataclass
class NetworkWeights:
    cfg: NetworkConfig
    tensors: dict[str, np.ndarray]

    def param_count(self) -> int:
        return int(sum(v.size for v in self.tensors.values()))

    def astype(self, dtype) -> "NetworkWeights":
        return NetworkWeights(self.cfg, {k: v.astype(dtype) for k, v in self.tensors.items()})

    def copy(self) -> "NetworkWeights":
        return NetworkWeights(self.cfg, {k: v.copy() for k, v in self.tensors.items()})


def _tensor_rng(seed: int, name: str) -> np.random.Generator:
    # Per-tensor streams: variants that share a tensor name draw identical
    # values regardless of which other tensors exist.
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(name.encode())]))


def init_weights(cfg: NetworkConfig, seed: int = 0) -> NetworkWeights:
    """Glorot-uniform weights, zero biases, identity normalization."""
    tensors: dict[str, np.ndarray] = {}
    for name, shape in tensor_specs(cfg):
        if name == "norm.beta":
            tensors[name] = np.ones(shape, dtype=np.float32)
        elif name.endswith(".b") or name == "norm.gamma":
            tensors[name] = np.zeros(shape, dtype=np.float32)
        else:
            if len(shape) == 4:  # conv (K, C, kh, kw)
                fan_in = shape[1] * shape[2] * shape[3]
                fan_out = shape[0] * shape[2] * shape[3]
            else:  # dense (out, in)
                fan_in, fan_out = shape[1], shape[0]
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            rng = _tensor_rng(seed, name)
            tensors[name] = rng.uniform(-limit, limit, shape).astype(np.float32)
    return NetworkWeights(cfg, tensors)


# ---------------------------------------------------------------------------
# primitive ops


def temporal_shift(x: np.ndarray, inverse: bool = False,
                   channel_axis: int = 2) -> np.ndarray:
    """Exchange channel blocks between adjacent time steps.

    x has shape (B, T, C, H, W) (pass channel_axis for other layouts; time is
    always axis 1). The first floor(C/3) channels take their values from the
    next frame, the second floor(C/3) from the previous one, the rest stay
    put; vacated ends are zero-filled. `inverse` swaps the two directions
    (the transpose of the linear map, used by backprop).
    """
    from .errors import ValidationError
    if x.ndim != 5:
        raise ValidationError(f"temporal_shift expects 5-d input, got {x.ndim}-d")
    if x.shape[1] < 2:
        raise ValidationError("temporal_shift needs at least 2 time steps")
    axis = channel_axis % x.ndim
    c = x.shape[axis]
    c3 = c // 3
    out = x.copy()
    if c3 == 0:
        return out

    def ix(tsel, csel):
        sel = [slice(None)] * x.ndim
        sel[1] = tsel
        sel[axis] = csel
        return tuple(sel)

    b1 = slice(0, c3)
    b2 = slice(c3, 2 * c3)
    earlier, later = (b2, b1) if inverse else (b1, b2)
    out[ix(slice(None, -1), earlier)] = x[ix(slice(1, None), earlier)]
    out[ix(-1, earlier)] = 0
    out[ix(slice(1, None), later)] = x[ix(slice(None, -1), later)]
    out[ix(0, later)] = 0
    return out


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def attention_mask(features: np.ndarray, omega: np.ndarray, b: np.ndarray
                   ) -> np.ndarray:
    """Soft spatial mask: h*w * sigmoid(omega.x + b) / (2 * l1 norm).

    features: (N, C, H, W); omega: (1, C, 1, 1); b: (1,). Returns
    (N, 1, H, W); each frame's mask sums to H*W/2. Normalization runs in
    float64 so the sum property holds to 1e-5 regardless of input dtype.
    """
    m, _ = _mask_forward(np.ascontiguousarray(features.transpose(0, 2, 3, 1)),
                         omega, b)
    return m.transpose(0, 3, 1, 2)


def _mask_forward(features: np.ndarray, omega: np.ndarray, b: np.ndarray
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Channels-last mask: features (N, H, W, C) -> ((N, H, W, 1), logits)."""
    n, h, w, c = features.shape
    z = features @ omega[0, :, 0, 0].astype(features.dtype) + b[0]
    s = _sigmoid(z)
    s64 = s.astype(np.float64)
    denom = 2.0 * s64.sum(axis=(1, 2), keepdims=True)  # sigmoid > 0, never zero
    m = (h * w) * s64 / denom
    return m[..., None].astype(features.dtype), s


def _mask_backward(dm: np.ndarray, s: np.ndarray, features: np.ndarray
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of the mask w.r.t. its 1x1 conv parameters.

    dm: (N, H, W) accumulated gradient on the mask; features channels-last.
    The mask input is a non-learnable stream, so its gradient is dropped.
    """
    n, h, w = dm.shape
    s64 = s.astype(np.float64)
    g = dm.astype(np.float64)
    total = s64.sum(axis=(1, 2), keepdims=True)
    half_area = (h * w) / 2.0
    ds = half_area * (g / total - (g * s64).sum(axis=(1, 2), keepdims=True) / total ** 2)
    dz = ds * s64 * (1.0 - s64)
    domega = np.einsum("nhw,nhwc->c", dz, features.astype(np.float64))
    db = dz.sum()
    dtype = features.dtype
    return (domega.reshape(1, -1, 1, 1).astype(dtype),
            np.array([db], dtype=dtype))


def _wmat(w: np.ndarray, dtype) -> np.ndarray:
    """Conv kernel (K, C, 3, 3) -> GEMM matrix (9*C, K), tap-major rows."""
    return np.ascontiguousarray(
        w.transpose(2, 3, 1, 0).reshape(-1, w.shape[0]), dtype=dtype)


def _conv3x3(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Same-padded 3x3 convolution, channels last: (N, H, W, C) -> (N, H, W, K)."""
    n, h, wd, c = x.shape
    k = w.shape[0]
    wmat = _wmat(w, x.dtype)
    out = np.empty((n, h, wd, k), dtype=x.dtype)
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    slab = max(1, int(_SLAB_BYTES // max(1, h * wd * c * 9 * x.itemsize)))
    for i in range(0, n, slab):
        xs = xp[i:i + slab]
        v = np.lib.stride_tricks.sliding_window_view(xs, (3, 3), axis=(1, 2))
        # v: (n, H, W, C, 3, 3); tap-major column order keeps the gather's
        # inner loop contiguous over (dj, c)
        cols = v.transpose(0, 1, 2, 4, 5, 3).reshape(-1, 9 * c)
        y = cols @ wmat
        if b is not None:
            y += b.astype(x.dtype)
        out[i:i + slab] = y.reshape(xs.shape[0], h, wd, k)
    return out


def _conv3x3_grads(x: np.ndarray, dy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(dw, db) for _conv3x3; x is the forward input, dy the output gradient."""
    n, h, wd, c = x.shape
    k = dy.shape[-1]
    dwmat = np.zeros((9 * c, k), dtype=x.dtype)
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    slab = max(1, int(_SLAB_BYTES // max(1, h * wd * c * 9 * x.itemsize)))
    for i in range(0, n, slab):
        xs = xp[i:i + slab]
        v = np.lib.stride_tricks.sliding_window_view(xs, (3, 3), axis=(1, 2))
        cols = v.transpose(0, 1, 2, 4, 5, 3).reshape(-1, 9 * c)
        dwmat += cols.T @ dy[i:i + slab].reshape(-1, k)
    dw = np.ascontiguousarray(dwmat.reshape(3, 3, c, k).transpose(3, 2, 0, 1))
    db = dy.sum(axis=(0, 1, 2))
    return dw, db


def _conv3x3_input_grad(dy: np.ndarray, w: np.ndarray) -> np.ndarray:
    """dx for _conv3x3: correlation of dy with the flipped, transposed kernel."""
    wt = np.ascontiguousarray(w.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
    return _conv3x3(dy, wt)


def _avgpool2(x: np.ndarray) -> np.ndarray:
    """2x2 average pooling over the two axes before the channel axis."""
    h, w = x.shape[-3:-1]
    h2, w2 = h // 2, w // 2
    xv = x[..., :h2 * 2, :w2 * 2, :]
    xr = xv.reshape(*x.shape[:-3], h2, 2, w2, 2, x.shape[-1])
    return xr.mean(axis=(-4, -2))


def _avgpool2_grad(dy: np.ndarray, in_shape: tuple[int, ...]) -> np.ndarray:
    h, w = in_shape[-3:-1]
    h2, w2 = h // 2, w // 2
    dx = np.zeros(in_shape, dtype=dy.dtype)
    dx[..., :h2 * 2, :w2 * 2, :] = \
        np.repeat(np.repeat(dy, 2, axis=-3), 2, axis=-2) / 4.0
    return dx


# ---------------------------------------------------------------------------
# forward


def _normalize_layer(x: np.ndarray, beta: np.ndarray, gamma: np.ndarray,
                     order: str) -> tuple[np.ndarray, np.ndarray | None]:
    """Per-window, per-channel normalization; x is (B, T, h, w, 3).

    Returns (normalized, z) where z is the plain standardization (cached only
    for the affine-after parameter gradients).
    """
    bb = beta.astype(x.dtype)
    gg = gamma.astype(x.dtype)
    if order == "affine-first":
        a = bb * x + gg
        mu = a.mean(axis=(1, 2, 3), keepdims=True)
        sigma = a.std(axis=(1, 2, 3), keepdims=True)
        sigma = np.where(sigma < SIGMA_GUARD, sigma + SIGMA_GUARD, sigma)
        return (a - mu) / sigma, None
    mu = x.mean(axis=(1, 2, 3), keepdims=True)
    sigma = x.std(axis=(1, 2, 3), keepdims=True)
    sigma = np.where(sigma < SIGMA_GUARD, sigma + SIGMA_GUARD, sigma)
    z = (x - mu) / sigma
    return bb * z + gg, z


def _call_keys(cfg: NetworkConfig) -> list[tuple[str, int]]:
    keys = [("motion", g) for g in range(cfg.n_groups)]
    if cfg.branches == "multi":
        keys.append(("segment", 0))
    return keys


def _draw_dropout_masks(cfg: NetworkConfig, batch: int, dropout_seed: int,
                        dtype) -> dict:
    """Pre-draw every dropout mask in a fixed order (inverted scaling).

    Drawing everything up front keeps sequential and threaded group execution
    bit-identical.
    """
    rng = np.random.default_rng(np.random.SeedSequence([dropout_seed]))
    masks: dict = {}
    side1 = cfg.in_side // 2
    side2 = cfg.tail_side
    for key in _call_keys(cfg):
        t = 3 if key[0] == "motion" else cfg.n_groups
        for level, (p, ch, side) in enumerate(
                ((cfg.drop1, cfg.ch_mid, side1), (cfg.drop2, cfg.ch_out, side2)),
                start=1):
            if p > 0:
                keep = (rng.random((batch, t, side, side, ch)) >= p)
                masks[(key, level)] = keep.astype(dtype) / np.asarray(1.0 - p, dtype)
            else:
                masks[(key, level)] = None
    return masks


def _flat(a: np.ndarray) -> np.ndarray:
    return a.reshape(a.shape[0] * a.shape[1], *a.shape[2:])


def _unflat(a: np.ndarray, b: int, t: int) -> np.ndarray:
    return a.reshape(b, t, *a.shape[1:])


def _trunk_forward(xin: np.ndarray, prefix: str, w: dict, m1, m2, drop1_mask,
                   drop2_mask, use_shift: bool) -> tuple[np.ndarray, dict]:
    """One branch trunk over (B, T, s, s, 3) channels-last input."""
    b, t = xin.shape[:2]
    h1 = np.tanh(_unflat(_conv3x3(_flat(xin), w[f"{prefix}.conv1.w"],
                                  w[f"{prefix}.conv1.b"]), b, t))
    sh = temporal_shift(h1, channel_axis=4) if use_shift else h1
    h2 = np.tanh(h1 + _unflat(_conv3x3(_flat(sh), w[f"{prefix}.conv2.w"],
                                       w[f"{prefix}.conv2.b"]), b, t))
    h2m = h2 * m1[:, None] if m1 is not None else h2
    p1 = _avgpool2(h2m)
    a1 = p1 * drop1_mask if drop1_mask is not None else p1
    sh3 = temporal_shift(a1, channel_axis=4) if use_shift else a1
    h3 = np.tanh(a1 + _unflat(_conv3x3(_flat(sh3), w[f"{prefix}.conv3.w"],
                                       w[f"{prefix}.conv3.b"]), b, t))
    h4 = np.tanh(_unflat(_conv3x3(_flat(h3), w[f"{prefix}.conv4.w"],
                                  w[f"{prefix}.conv4.b"]), b, t))
    h4m = h4 * m2[:, None] if m2 is not None else h4
    p2 = _avgpool2(h4m)
    a2 = p2 * drop2_mask if drop2_mask is not None else p2
    return a2, {"xin": xin, "h1": h1, "h2": h2, "a1": a1, "h3": h3, "h4": h4}


def forward(motion: np.ndarray, appearance: np.ndarray, weights: NetworkWeights,
            *, use_mask: bool = True, use_shift: bool = True,
            train_mode: bool = False, dropout_seed: int = 0,
            parallel_groups: bool = False, want_tape: bool = False):
    """Run the estimator on one window or a batch of windows.

    motion: (window_len-1, 3, s, s) or (B, window_len-1, 3, s, s) raw patch
    differences; appearance: matching (3, s, s) or (B, 3, s, s). Returns the
    per-transition outputs, shape (window_len-1,) or (B, window_len-1).
    Deterministic when train_mode is False.
    """
    from .errors import ValidationError
    cfg = weights.cfg
    w = weights.tensors
    dtype = w["head.fc1.w"].dtype
    single = motion.ndim == 4
    if single:
        motion = motion[None]
        appearance = appearance[None]
    b = motion.shape[0]
    expect = (b, cfg.window_len - 1, 3, cfg.in_side, cfg.in_side)
    if motion.shape != expect:
        raise ValidationError(f"motion shape {motion.shape}, expected {expect}")
    if appearance.shape != (b, 3, cfg.in_side, cfg.in_side):
        raise ValidationError(f"appearance shape {appearance.shape} does not match")
    x = np.ascontiguousarray(motion.transpose(0, 1, 3, 4, 2), dtype=dtype)
    app = np.ascontiguousarray(appearance.transpose(0, 2, 3, 1), dtype=dtype)

    normed, z_cache = _normalize_layer(x, w["norm.beta"], w["norm.gamma"],
                                       cfg.norm_order)

    masks: dict = {}
    app_levels = {1: app, 2: _avgpool2(app)}
    if use_mask:
        for p in cfg.branch_prefixes():
            for level in (1, 2):
                m, s = _mask_forward(app_levels[level], w[f"{p}.mask{level}.w"],
                                     w[f"{p}.mask{level}.b"])
                masks[(p, level)] = (m, s)

    if train_mode:
        drop = _draw_dropout_masks(cfg, b, dropout_seed, dtype)
    else:
        drop = {(key, lv): None for key in _call_keys(cfg) for lv in (1, 2)}

    g_count = cfg.n_groups
    seg_idx = [3 * g + 1 for g in range(g_count)]

    def run_call(key):
        prefix, g = key
        if prefix == "motion":
            xin = normed[:, 3 * g:3 * g + 3]
        else:
            xin = normed[:, seg_idx]
        m1 = masks[(prefix, 1)][0] if use_mask else None
        m2 = masks[(prefix, 2)][0] if use_mask else None
        return _trunk_forward(xin, prefix, w, m1, m2,
                              drop[(key, 1)], drop[(key, 2)], use_shift)

    keys = _call_keys(cfg)
    if parallel_groups and len(keys) > 1:
        with ThreadPoolExecutor(max_workers=min(4, len(keys))) as ex:
            results = list(ex.map(run_call, keys))
    else:
        results = [run_call(k) for k in keys]

    tape: dict = {"normed": normed, "z": z_cache, "masks": masks, "drop": drop,
                  "calls": dict(zip(keys, (r[1] for r in results)))}

    motion_tail = np.concatenate([results[g][0] for g in range(g_count)], axis=1)
    if cfg.branches == "multi":
        seg_tail = results[-1][0]
        seg_up = np.repeat(seg_tail, 3, axis=1)
        concat_in = np.concatenate([motion_tail, seg_up], axis=4)
    else:
        concat_in = motion_tail
    t_m = concat_in.shape[1]
    merged = np.tanh(_unflat(_conv3x3(_flat(concat_in), w["merge.w"], w["merge.b"]),
                             b, t_m))
    pooled = merged.mean(axis=1)
    flatv = pooled.reshape(b, -1)
    hfc = np.tanh(flatv @ w["head.fc1.w"].T + w["head.fc1.b"])
    out = hfc @ w["head.fc2.w"].T + w["head.fc2.b"]
    if not np.all(np.isfinite(out)):
        raise NumericError("non-finite values in head output")

    if want_tape:
        tape.update({"concat_in": concat_in, "merged": merged, "flatv": flatv,
                     "hfc": hfc, "out": out, "app_levels": app_levels})
        return (out[0] if single else out), tape
    return out[0] if single else out


# ---------------------------------------------------------------------------
# backward


def backward(motion: np.ndarray, appearance: np.ndarray, weights: NetworkWeights,
             target: np.ndarray, *, use_mask: bool = True, use_shift: bool = True,
             train_mode: bool = False, dropout_seed: int = 0,
             parallel_groups: bool = False):
    """Mean-squared-error loss and gradients for every weight tensor.

    Returns (loss, grads) with grads keyed like weights.tensors. Gradient
    tensors for disabled paths (masks off) stay zero.
    """
    cfg = weights.cfg
    w = weights.tensors
    single = motion.ndim == 4
    if single:
        motion = motion[None]
        appearance = appearance[None]
        target = np.asarray(target)[None]
    out, tape = forward(motion, appearance, weights, use_mask=use_mask,
                        use_shift=use_shift, train_mode=train_mode,
                        dropout_seed=dropout_seed, parallel_groups=parallel_groups,
                        want_tape=True)
    dtype = w["head.fc1.w"].dtype
    tgt = np.asarray(target, dtype=dtype)
    require(tgt.shape == out.shape, f"target shape {tgt.shape} != output {out.shape}")
    resid = out - tgt
    loss = float(np.mean(resid.astype(np.float64) ** 2))
    if not np.isfinite(loss):
        raise NumericError("non-finite loss")
    grads = {name: np.zeros_like(v) for name, v in w.items()}

    b = out.shape[0]
    dout = ((2.0 / resid.size) * resid).astype(dtype)

    # head
    hfc, flatv = tape["hfc"], tape["flatv"]
    grads["head.fc2.w"] += dout.T @ hfc
    grads["head.fc2.b"] += dout.sum(axis=0)
    dhfc = dout @ w["head.fc2.w"]
    dz1 = dhfc * (1.0 - hfc ** 2)
    grads["head.fc1.w"] += dz1.T @ flatv
    grads["head.fc1.b"] += dz1.sum(axis=0)
    dflat = dz1 @ w["head.fc1.w"]
    ts = cfg.tail_side
    dpooled = dflat.reshape(b, ts, ts, cfg.ch_out)

    # temporal mean + merge conv
    merged, concat_in = tape["merged"], tape["concat_in"]
    t_m = concat_in.shape[1]
    dmerged = np.broadcast_to((dpooled / t_m)[:, None], merged.shape)
    dzm = dmerged * (1.0 - merged ** 2)
    dwm, dbm = _conv3x3_grads(_flat(concat_in), _flat(dzm))
    grads["merge.w"] += dwm
    grads["merge.b"] += dbm
    dconcat = _unflat(_conv3x3_input_grad(_flat(dzm), w["merge.w"]), b, t_m)

    d_motion_tail = dconcat[..., :cfg.ch_out]
    d_seg = None
    g_count = cfg.n_groups
    if cfg.branches == "multi":
        d_seg_up = dconcat[..., cfg.ch_out:]
        d_seg = d_seg_up.reshape(b, g_count, 3, *d_seg_up.shape[2:]).sum(axis=2)

    need_input_grad = cfg.norm_order == "affine-after"
    d_normed = np.zeros_like(tape["normed"]) if need_input_grad else None
    dm_acc: dict = {}

    def trunk_back(key, dtail):
        prefix, _ = key
        entry = tape["calls"][key]
        m1 = tape["masks"][(prefix, 1)][0] if use_mask else None
        m2 = tape["masks"][(prefix, 2)][0] if use_mask else None
        bt = entry["h1"].shape[:2]
        d = dtail
        dropm2 = tape["drop"][(key, 2)]
        if dropm2 is not None:
            d = d * dropm2
        dh4m = _avgpool2_grad(d, entry["h4"].shape)
        if m2 is not None:
            dh4 = dh4m * m2[:, None]
            dm_acc[(prefix, 2)] = dm_acc.get((prefix, 2), 0) + \
                (dh4m * entry["h4"]).sum(axis=(1, 4))
        else:
            dh4 = dh4m
        dz4 = dh4 * (1.0 - entry["h4"] ** 2)
        dw4, db4 = _conv3x3_grads(_flat(entry["h3"]), _flat(dz4))
        grads[f"{prefix}.conv4.w"] += dw4
        grads[f"{prefix}.conv4.b"] += db4
        dh3 = _unflat(_conv3x3_input_grad(_flat(dz4), w[f"{prefix}.conv4.w"]), *bt)
        dz3 = dh3 * (1.0 - entry["h3"] ** 2)
        da1 = dz3.copy()
        sh3 = temporal_shift(entry["a1"], channel_axis=4) if use_shift else entry["a1"]
        dw3, db3 = _conv3x3_grads(_flat(sh3), _flat(dz3))
        grads[f"{prefix}.conv3.w"] += dw3
        grads[f"{prefix}.conv3.b"] += db3
        dsh3 = _unflat(_conv3x3_input_grad(_flat(dz3), w[f"{prefix}.conv3.w"]), *bt)
        da1 += temporal_shift(dsh3, inverse=True, channel_axis=4) if use_shift else dsh3
        dropm1 = tape["drop"][(key, 1)]
        dp1 = da1 * dropm1 if dropm1 is not None else da1
        dh2m = _avgpool2_grad(dp1, entry["h2"].shape)
        if m1 is not None:
            dh2 = dh2m * m1[:, None]
            dm_acc[(prefix, 1)] = dm_acc.get((prefix, 1), 0) + \
                (dh2m * entry["h2"]).sum(axis=(1, 4))
        else:
            dh2 = dh2m
        dz2 = dh2 * (1.0 - entry["h2"] ** 2)
        dh1 = dz2.copy()
        sh1 = temporal_shift(entry["h1"], channel_axis=4) if use_shift else entry["h1"]
        dw2, db2 = _conv3x3_grads(_flat(sh1), _flat(dz2))
        grads[f"{prefix}.conv2.w"] += dw2
        grads[f"{prefix}.conv2.b"] += db2
        dsh1 = _unflat(_conv3x3_input_grad(_flat(dz2), w[f"{prefix}.conv2.w"]), *bt)
        dh1 += temporal_shift(dsh1, inverse=True, channel_axis=4) if use_shift else dsh1
        dz0 = dh1 * (1.0 - entry["h1"] ** 2)
        dw1, db1 = _conv3x3_grads(_flat(entry["xin"]), _flat(dz0))
        grads[f"{prefix}.conv1.w"] += dw1
        grads[f"{prefix}.conv1.b"] += db1
        if need_input_grad:
            return _unflat(_conv3x3_input_grad(_flat(dz0), w[f"{prefix}.conv1.w"]), *bt)
        return None

    seg_idx = [3 * g + 1 for g in range(g_count)]
    for g in range(g_count):
        dxin = trunk_back(("motion", g), d_motion_tail[:, 3 * g:3 * g + 3])
        if need_input_grad:
            d_normed[:, 3 * g:3 * g + 3] += dxin
    if cfg.branches == "multi":
        dxin = trunk_back(("segment", 0), d_seg)
        if need_input_grad:
            d_normed[:, seg_idx] += dxin

    if use_mask:
        for p in cfg.branch_prefixes():
            for level in (1, 2):
                acc = dm_acc.get((p, level))
                if acc is None:
                    continue
                _, s = tape["masks"][(p, level)]
                domega, db = _mask_backward(acc, s, tape["app_levels"][level])
                grads[f"{p}.mask{level}.w"] += domega
                grads[f"{p}.mask{level}.b"] += db

    if cfg.norm_order == "affine-after":
        z = tape["z"]
        grads["norm.beta"] += (d_normed * z).sum(axis=(0, 1, 2, 3)).astype(dtype)
        grads["norm.gamma"] += d_normed.sum(axis=(0, 1, 2, 3)).astype(dtype)
    # affine-first: standardizing the transformed values makes the output
    # exactly invariant to beta/gamma, so their gradients are identically 0.

    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
    return loss, grads


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    weights: NetworkWeights
    epoch_losses: list[float]


def train(dataset, weights: NetworkWeights | None = None,
          cfg: NetworkConfig | None = None, *, epochs: int = 10,
          batch_size: int = 32, lr: float = 1.0, rho: float = 0.95,
          eps: float = 1e-6, seed: int = 0, use_mask: bool = True,
          use_shift: bool = True, parallel_groups: bool = False,
          log_cb=None) -> TrainResult:
    """Adadelta training loop over (motion, appearance, targets) arrays.

    Deterministic for a fixed seed: shuffling and dropout derive from it.
    """
    motion, appearance, targets = dataset
    n = motion.shape[0]
    require(n > 0, "dataset must be non-empty")
    if weights is None:
        weights = init_weights(cfg if cfg is not None else NetworkConfig(), seed)
    w = weights.copy()
    eg2 = {k: np.zeros_like(v) for k, v in w.tensors.items()}
    edx2 = {k: np.zeros_like(v) for k, v in w.tensors.items()}
    losses: list[float] = []
    for epoch in range(epochs):
        order_rng = np.random.default_rng(np.random.SeedSequence([seed, 7919 + epoch]))
        order = order_rng.permutation(n)
        total = 0.0
        for step_i, start in enumerate(range(0, n, batch_size)):
            idx = order[start:start + batch_size]
            drop_seed = int(np.random.SeedSequence(
                [seed, epoch, step_i]).generate_state(1)[0])
            try:
                loss, grads = backward(
                    motion[idx], appearance[idx], w, targets[idx],
                    use_mask=use_mask, use_shift=use_shift, train_mode=True,
                    dropout_seed=drop_seed, parallel_groups=parallel_groups)
            except NumericError as e:
                raise NumericError(
                    f"training diverged at epoch {epoch} step {step_i}: {e}") from e
            for k, g in grads.items():
                eg2[k] = rho * eg2[k] + (1.0 - rho) * g * g
                dx = -np.sqrt((edx2[k] + eps) / (eg2[k] + eps)) * g
                edx2[k] = rho * edx2[k] + (1.0 - rho) * dx * dx
                w.tensors[k] = w.tensors[k] + lr * dx
            total += loss * len(idx)
        epoch_loss = total / n
        losses.append(epoch_loss)
        if log_cb is not None:
            log_cb(epoch, epoch_loss)
    return TrainResult(weights=w, epoch_losses=losses)


# ---------------------------------------------------------------------------
# weights I/O


WEIGHTS_MANIFEST = "weights.json"
WEIGHTS_BLOB = "weights.bin"


def save_weights(weights: NetworkWeights, out_dir: str | Path) -> Path:
    """Write weights.json (manifest) + weights.bin (little-endian float32)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    order = [name for name, _ in tensor_specs(weights.cfg)]
    chunks = []
    entries = []
    offset = 0
    for name in order:
        arr = np.ascontiguousarray(weights.tensors[name].astype("<f4"))
        raw = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": "f32le",
                        "offset": offset, "length": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    blob = b"".join(chunks)
    manifest = {
        "meta": asdict(weights.cfg),
        "blob": WEIGHTS_BLOB,
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
        "tensors": entries,
    }
    (out / WEIGHTS_BLOB).write_bytes(blob)
    with open(out / WEIGHTS_MANIFEST, "w") as f:
        json.dump(manifest, f, sort_keys=True, separators=(",", ":"))
    return out


def load_weights(path: str | Path) -> NetworkWeights:
    """Read a weights directory (or its weights.json); bit-exact round trip."""
    p = Path(path)
    manifest_path = p / WEIGHTS_MANIFEST if p.is_dir() else p
    if not manifest_path.exists():
        raise ParseError(f"{manifest_path}: missing weights manifest")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"{manifest_path}: invalid JSON: {e}") from e
    for key in ("meta", "tensors", "blob_sha256"):
        if key not in manifest:
            raise ParseError(f"{manifest_path}: missing key '{key}'")
    try:
        cfg = NetworkConfig(**manifest["meta"])
    except (TypeError, ValueError) as e:
        raise ParseError(f"{manifest_path}: bad meta: {e}") from e
    blob_path = manifest_path.parent / manifest.get("blob", WEIGHTS_BLOB)
    if not blob_path.exists():
        raise ParseError(f"{blob_path}: missing weights blob")
    blob = blob_path.read_bytes()
    if hashlib.sha256(blob).hexdigest() != manifest["blob_sha256"]:
        raise ParseError(f"{blob_path}: checksum mismatch")
    expected = dict(tensor_specs(cfg))
    tensors: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        name = entry.get("name")
        if name not in expected:
            raise ParseError(f"{manifest_path}: unexpected tensor '{name}'")
        shape = tuple(entry["shape"])
        if shape != expected[name]:
            raise ParseError(
                f"{manifest_path}: tensor '{name}' shape {shape} != {expected[name]}")
        if entry.get("dtype") != "f32le":
            raise ParseError(f"{manifest_path}: tensor '{name}' has unsupported dtype")
        off, length = int(entry["offset"]), int(entry["length"])
        if length != int(np.prod(shape)) * 4:
            raise ParseError(f"{manifest_path}: tensor '{name}' length {length} "
                             f"does not match shape {shape}")
        if off < 0 or off + length > len(blob):
            raise ParseError(f"{blob_path}: tensor '{name}' spans [{off}, "
                             f"{off + length}) beyond blob of {len(blob)} bytes")
        tensors[name] = np.frombuffer(blob[off:off + length],
                                      dtype="<f4").reshape(shape).copy()
    missing = set(expected) - set(tensors)
    if missing:
        raise ParseError(f"{manifest_path}: missing tensors {sorted(missing)}")
    return NetworkWeights(cfg, tensors)
