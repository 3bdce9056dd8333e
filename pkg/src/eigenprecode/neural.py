"""Minimal self-contained neural stack for multiplier learning.

Conv stages (same-padding, stride 1) with ReLU and height-wise
max-pooling encode the CSI matrix into a short feature vector; the SNR
in dB is appended and fully-connected ReLU layers decode it into K
nonnegative multipliers whose sum is capped at the power budget.
Exact gradients throughout (the finite-difference check is a test), and
training is plain mini-batch ADAM on the per-sample squared error.

Two stock architectures are provided: the full net reads stacked
[Re(H), Im(H), Omega] rows (instantaneous + statistical CSI), the
statistical-only variant reads Omega rows alone.
"""

from dataclasses import dataclass

import numpy as np

from .errors import EmptyDataset, ShapeMismatch, ValidationError
from .rng import substream

DROPOUT_RATE = 0.5


@dataclass(frozen=True)
class ConvStage:
    kernel_h: int
    kernel_w: int
    n_filters: int
    pool_h: int
    pool_w: int


@dataclass(frozen=True)
class NetSpec:
    input_h: int
    input_w: int
    conv_stages: tuple
    fc_widths: tuple
    k_out: int

    def __post_init__(self):
        object.__setattr__(self, "conv_stages", tuple(self.conv_stages))
        object.__setattr__(self, "fc_widths", tuple(int(w) for w in self.fc_widths))
        if self.fc_widths[-1] != self.k_out:
            raise ValidationError("final FC width must equal k_out")
        self.feature_shape()  # raises if pooling does not divide exactly

    def feature_shape(self):
        """(channels, height, width) after the conv stages."""
        h, w, c = self.input_h, self.input_w, 1
        for st in self.conv_stages:
            if h % st.pool_h or w % st.pool_w:
                raise ValidationError(
                    f"pooling {st.pool_h}x{st.pool_w} does not divide feature {h}x{w}"
                )
            h //= st.pool_h
            w //= st.pool_w
            c = st.n_filters
        return c, h, w

    def flat_dim(self):
        c, h, w = self.feature_shape()
        return c * h * w


def init_params(spec, rng):
    """Uniform fan-in scaled initialization, one (weight, bias) pair per layer."""
    params = []
    c_in = 1
    for st in spec.conv_stages:
        fan_in = c_in * st.kernel_h * st.kernel_w
        lim = np.sqrt(6.0 / fan_in)
        params.append(rng.uniform(-lim, lim, size=(st.n_filters, c_in, st.kernel_h, st.kernel_w)))
        params.append(np.zeros(st.n_filters))
        c_in = st.n_filters
    d_in = spec.flat_dim() + 1  # feature plus the SNR scalar
    for width in spec.fc_widths:
        lim = np.sqrt(6.0 / d_in)
        params.append(rng.uniform(-lim, lim, size=(width, d_in)))
        params.append(np.zeros(width))
        d_in = width
    return params


def _pad_amounts(k):
    top = (k - 1) // 2
    return top, k - 1 - top


def _im2col_t(xp, kh, kw, out_h, out_w):
    """Tap-major patch matrix (C*kh*kw, B*out_h*out_w) via contiguous slice copies."""
    b, c = xp.shape[0], xp.shape[1]
    cols = np.empty((c * kh * kw, b * out_h * out_w))
    t = 0
    for ci in range(c):
        for i in range(kh):
            for j in range(kw):
                cols[t].reshape(b, out_h, out_w)[...] = xp[:, ci, i : i + out_h, j : j + out_w]
                t += 1
    return cols


def _conv_forward(x, w, bias):
    """Same-padding stride-1 correlation via tap-major GEMM. x: (B,C,H,W) -> (B,F,H,W)."""
    b, _, h, wid = x.shape
    f, c, kh, kw = w.shape
    pt, pb = _pad_amounts(kh)
    pl, pr = _pad_amounts(kw)
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    cols = _im2col_t(xp, kh, kw, h, wid)
    out = w.reshape(f, -1) @ cols + bias[:, None]
    out = np.ascontiguousarray(out.reshape(f, b, h, wid).transpose(1, 0, 2, 3))
    return out, cols


def _conv_backward(grad_out, cols, w, x_shape):
    b, _, h, wid = x_shape
    f, c, kh, kw = w.shape
    pt, _ = _pad_amounts(kh)
    pl, _ = _pad_amounts(kw)
    g_t = np.ascontiguousarray(grad_out.transpose(1, 0, 2, 3)).reshape(f, -1)  # (F, B*H*W)
    grad_w = (g_t @ cols.T).reshape(f, c, kh, kw)
    grad_b = g_t.sum(axis=1)
    # col2im scatter; tap-major layout keeps every slice contiguous
    gc = (w.reshape(f, -1).T @ g_t).reshape(c, kh, kw, b, h, wid)
    grad_xp = np.zeros((b, c, h + kh - 1, wid + kw - 1))
    for ci in range(c):
        for i in range(kh):
            for j in range(kw):
                grad_xp[:, ci, i : i + h, j : j + wid] += gc[ci, i, j]
    return grad_xp[:, :, pt : pt + h, pl : pl + wid], grad_w, grad_b


def _pool_forward(x, ph, pw):
    b, c, h, w = x.shape
    ho, wo = h // ph, w // pw
    tiles = x.reshape(b, c, ho, ph, wo, pw).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, ho, wo, ph * pw)
    idx = tiles.argmax(axis=-1)  # first maximum on ties
    out = np.take_along_axis(tiles, idx[..., None], axis=-1)[..., 0]
    return out, idx


def _pool_backward(grad_out, idx, x_shape, ph, pw):
    b, c, h, w = x_shape
    ho, wo = h // ph, w // pw
    grad_tiles = np.zeros((b, c, ho, wo, ph * pw))
    np.put_along_axis(grad_tiles, idx[..., None], grad_out[..., None], axis=-1)
    return (
        grad_tiles.reshape(b, c, ho, wo, ph, pw)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(b, c, h, w)
    )


def _forward_cached(spec, params, x, nu, train_mode=False, rng=None, p_budget=None):
    """Forward pass on a batch, keeping every intermediate needed by backward."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
        nu = np.atleast_1d(np.asarray(nu, dtype=np.float64))
    nu = np.asarray(nu, dtype=np.float64)
    if x.shape[1:] != (spec.input_h, spec.input_w):
        raise ShapeMismatch(
            f"input shape {x.shape[1:]} does not match spec {(spec.input_h, spec.input_w)}"
        )
    if nu.shape != (x.shape[0],):
        raise ShapeMismatch("nu must have one entry per sample")
    if p_budget is None:
        p_budget = 10.0 ** (nu / 10.0)  # sigma2 = 1 convention
    p_budget = np.broadcast_to(np.asarray(p_budget, dtype=np.float64), nu.shape)
    if train_mode and rng is None:
        raise ValidationError("train_mode forward needs an rng for dropout")

    cache = {"conv": [], "fc": [], "x_shape": x.shape}
    act = x[:, None, :, :]  # (B, 1, H, W)
    pi = 0
    for st in spec.conv_stages:
        w, bias = params[pi], params[pi + 1]
        pre, conv_cache = _conv_forward(act, w, bias)
        relu = np.maximum(pre, 0.0)
        pooled, idx = _pool_forward(relu, st.pool_h, st.pool_w)
        cache["conv"].append(
            {"cc": conv_cache, "x_shape": act.shape, "pre": pre,
             "relu_shape": relu.shape, "idx": idx}
        )
        act = pooled
        pi += 2
    b = act.shape[0]
    flat = act.reshape(b, -1)
    feat = np.concatenate([flat, nu[:, None]], axis=1)
    cache["feature_split"] = flat.shape[1]
    cache["conv_out_shape"] = act.shape

    h = feat
    n_fc = len(spec.fc_widths)
    for li in range(n_fc):
        w, bias = params[pi], params[pi + 1]
        z = h @ w.T + bias[None, :]
        entry = {"input": h, "z": z}
        if li < n_fc - 1:
            h = np.maximum(z, 0.0)
            if train_mode:
                mask = (rng.random(h.shape) >= DROPOUT_RATE) / (1.0 - DROPOUT_RATE)
                h = h * mask
                entry["mask"] = mask
        else:
            h = z
        cache["fc"].append(entry)
        pi += 2

    # projection head: clamp to the nonnegative orthant, cap the sum at the
    # budget.  Inference-only feasibility step; training regresses on raw h.
    y = np.maximum(h, 0.0)
    s = y.sum(axis=1)
    factor = np.where(s > p_budget, np.divide(p_budget, s, out=np.ones_like(s), where=s > 0), 1.0)
    mu_hat = y * factor[:, None]
    cache["raw"] = h
    cache["squeeze"] = squeeze
    return (mu_hat[0] if squeeze else mu_hat), cache


def forward(spec, params, x, nu, train_mode=False, rng=None, p_budget=None):
    """Predicted multipliers: nonnegative, sum capped at the power budget."""
    out, _ = _forward_cached(spec, params, x, nu, train_mode, rng, p_budget)
    return out


def raw_output(spec, params, x, nu):
    """Regression output before the projection head (training target space)."""
    _, cache = _forward_cached(spec, params, x, nu)
    raw = cache["raw"]
    return raw[0] if cache["squeeze"] else raw


def mse_loss(pred, label):
    """Mean over the batch of the per-sample squared 2-norm error."""
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    label = np.atleast_2d(np.asarray(label, dtype=np.float64))
    if pred.shape != label.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs label {label.shape}")
    diff = pred - label
    return float(np.mean(np.sum(diff * diff, axis=1)))


def backward(spec, params, x, nu, labels, train_mode=False, rng=None, p_budget=None):
    """Batch MSE on the raw regression output and its exact parameter gradient.

    The loss is taken before the projection head, so the final linear
    layer's bias gradient is exactly twice the mean residual and no
    output can be silenced by the clamp during training.
    """
    _, cache = _forward_cached(spec, params, x, nu, train_mode, rng, p_budget)
    pred = cache["raw"]
    labels = np.atleast_2d(np.asarray(labels, dtype=np.float64))
    if labels.shape != pred.shape:
        raise ShapeMismatch(f"labels {labels.shape} vs predictions {pred.shape}")
    loss = float(np.mean(np.sum((pred - labels) ** 2, axis=1)))
    batch = pred.shape[0]
    gz = 2.0 * (pred - labels) / batch

    grads = [np.zeros_like(p) for p in params]
    pi = len(params)
    for li in range(len(spec.fc_widths) - 1, -1, -1):
        pi -= 2
        entry = cache["fc"][li]
        w = params[pi]
        grads[pi] += gz.T @ entry["input"]
        grads[pi + 1] += gz.sum(axis=0)
        if li == 0:
            g_feat = gz @ w
            break
        g_h = gz @ w
        if "mask" in cache["fc"][li - 1]:
            g_h = g_h * cache["fc"][li - 1]["mask"]
        gz = g_h * (cache["fc"][li - 1]["z"] > 0)

    g_flat = g_feat[:, : cache["feature_split"]]
    g_act = g_flat.reshape(cache["conv_out_shape"])
    for si in range(len(spec.conv_stages) - 1, -1, -1):
        pi -= 2
        st = spec.conv_stages[si]
        entry = cache["conv"][si]
        g_relu = _pool_backward(g_act, entry["idx"], entry["relu_shape"], st.pool_h, st.pool_w)
        g_pre = g_relu * (entry["pre"] > 0)
        g_act, grads[pi][...], grads[pi + 1][...] = _conv_backward(
            g_pre, entry["cc"], params[pi], entry["x_shape"]
        )
    return loss, grads


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0


def adam_step(params, grads, state, lr=0.001, beta1=0.9, beta2=0.999, eps_adam=1e-8):
    """One bias-corrected ADAM update; returns (new_params, state)."""
    if state is None:
        state = AdamState(m=[np.zeros_like(p) for p in params],
                          v=[np.zeros_like(p) for p in params])
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    new_params = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * (g * g)
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        new_params.append(p - lr * m_hat / (np.sqrt(v_hat) + eps_adam))
    return new_params, state


# ---------------------------------------------------------------------------
# training samples and the two stock architectures


@dataclass
class TrainingSample:
    x: np.ndarray        # (input_h, K) real CSI matrix
    nu: float            # SNR in dB
    mu_label: np.ndarray # (K,)
    p: float             # power budget matching nu


def lmnn_input(state, cfg):
    """Stacked [Re(H_beta); Im(H_beta); Omega_beta] matrix, (2 M_t + N M_t) x K."""
    hb = state.beta[:, None] * state.h_bar            # rows beta_k h_k
    ob = (1.0 - state.beta[:, None] ** 2) * state.omega
    return np.concatenate([hb.real.T, -hb.imag.T, ob.T], axis=0)


def slmnn_input(state, cfg):
    """Statistical-only input: Omega rows transposed to (N M_t) x K."""
    return state.omega.T.copy()


def _pool_plan(h, n_stages=4):
    """Factor h into n_stages pool heights (descending), product exactly h."""
    pools = []
    rem = h
    for stage in range(n_stages, 1, -1):
        target = max(2, int(round(rem ** (1.0 / stage))))
        best = 1
        for cand in range(target, 0, -1):
            if rem % cand == 0:
                best = cand
                break
        pools.append(best)
        rem //= best
    pools.append(rem)
    return pools


def lmnn_spec(cfg):
    """Desk-scale architecture for the (2 M_t + N M_t) x K input."""
    h = 2 * cfg.m_t + cfg.n_beams
    if h == 96:
        pools = [4, 4, 3, 2]
        kernels = [12, 6, 4, 3]
    else:
        pools = _pool_plan(h)
        kernels = [max(2, h // 8), max(2, h // 16), 3, 3]
    stages = [
        ConvStage(kernels[0], 3, 4, pools[0], 1),
        ConvStage(kernels[1], 3, 8, pools[1], 1),
        ConvStage(kernels[2], 3, 4, pools[2], 1),
        ConvStage(kernels[3], 3, 2, pools[3], 1),
    ]
    return NetSpec(input_h=h, input_w=cfg.k, conv_stages=stages,
                   fc_widths=(128, cfg.k), k_out=cfg.k)


def slmnn_spec(cfg):
    """Desk-scale architecture for the statistical-only (N M_t) x K input."""
    h = cfg.n_beams
    if h == 64:
        pools = [4, 4, 2, 2]
        kernels = [8, 4, 3, 2]
    else:
        pools = _pool_plan(h)
        kernels = [max(2, h // 8), max(2, h // 16), 3, 2]
    stages = [
        ConvStage(kernels[0], 3, 4, pools[0], 1),
        ConvStage(kernels[1], 3, 8, pools[1], 1),
        ConvStage(kernels[2], 3, 4, pools[2], 1),
        ConvStage(kernels[3], 3, 2, pools[3], 1),
    ]
    return NetSpec(input_h=h, input_w=cfg.k, conv_stages=stages,
                   fc_widths=(128, cfg.k), k_out=cfg.k)


@dataclass
class TrainOptions:
    steps: int = 10000
    batch: int = 1024
    lr: float = 0.001
    seed: int = 0
    eval_every: int = 500
    # regress mu / P instead of mu: the oracle multipliers sum to the budget,
    # so normalized labels live on the unit simplex and the loss is not
    # dominated by high-SNR samples
    normalize_labels: bool = True


def project_multipliers(raw, p_budget):
    """Feasibility projection: clamp negatives, cap the sum at the budget."""
    raw = np.asarray(raw, dtype=np.float64)
    squeeze = raw.ndim == 1
    y = np.maximum(np.atleast_2d(raw), 0.0)
    p = np.broadcast_to(np.asarray(p_budget, dtype=np.float64), y.shape[:1])
    s = y.sum(axis=1)
    factor = np.where(s > p, np.divide(p, s, out=np.ones_like(s), where=s > 0), 1.0)
    out = y * factor[:, None]
    return out[0] if squeeze else out


@dataclass
class TrainedNet:
    spec: NetSpec
    params: list
    x_rms: float
    label_scale: str = "budget"  # "budget": net regresses mu / P

    def predict(self, x, nu, p_budget=None):
        if p_budget is None:
            p_budget = 10.0 ** (np.asarray(nu, dtype=np.float64) / 10.0)
        raw = raw_output(self.spec, self.params, np.asarray(x) / self.x_rms, nu)
        if self.label_scale == "budget":
            raw = raw * p_budget
        return project_multipliers(raw, p_budget)


def train(spec, train_samples, val_samples, opts=None):
    """Mini-batch ADAM training; returns (TrainedNet, history).

    history rows: (step, train_loss, val_loss or nan).  Inputs are
    normalized by the training set's RMS, recorded on the returned net
    so inference is reversible.
    """
    opts = opts or TrainOptions()
    if len(train_samples) == 0:
        raise EmptyDataset("no training samples")
    x_train = np.stack([s.x for s in train_samples])
    nu_train = np.array([s.nu for s in train_samples])
    y_train = np.stack([s.mu_label for s in train_samples])
    p_train = np.array([s.p for s in train_samples])
    if opts.normalize_labels:
        y_train = y_train / p_train[:, None]
    x_rms = float(np.sqrt(np.mean(x_train**2)))
    if x_rms == 0.0:
        x_rms = 1.0
    x_train = x_train / x_rms

    have_val = len(val_samples) > 0
    if have_val:
        x_val = np.stack([s.x for s in val_samples]) / x_rms
        nu_val = np.array([s.nu for s in val_samples])
        y_val = np.stack([s.mu_label for s in val_samples])
        p_val = np.array([s.p for s in val_samples])
        if opts.normalize_labels:
            y_val = y_val / p_val[:, None]

    rng_init = substream(opts.seed, "init")
    rng_drop = substream(opts.seed, "dropout")
    rng_shuf = substream(opts.seed, "shuffle")
    params = init_params(spec, rng_init)
    state = None
    batch = min(opts.batch, len(train_samples))
    history = []
    order = rng_shuf.permutation(len(train_samples))
    cursor = 0
    for step in range(1, opts.steps + 1):
        if cursor + batch > len(order):
            order = rng_shuf.permutation(len(train_samples))
            cursor = 0
        sel = order[cursor : cursor + batch]
        cursor += batch
        loss, grads = backward(
            spec, params, x_train[sel], nu_train[sel], y_train[sel],
            train_mode=True, rng=rng_drop, p_budget=p_train[sel],
        )
        params, state = adam_step(params, grads, state, lr=opts.lr)
        val_loss = np.nan
        if have_val and (step % opts.eval_every == 0 or step == opts.steps):
            val_loss = mse_loss(raw_output(spec, params, x_val, nu_val), y_val)
        history.append((step, loss, val_loss))
    scale = "budget" if opts.normalize_labels else "raw"
    return TrainedNet(spec=spec, params=params, x_rms=x_rms, label_scale=scale), history


# ---------------------------------------------------------------------------
# weights file: magic, version, spec block, normalization, f64 arrays

_MAGIC = b"LMNW"
_VERSION = 1


def save_weights(path, net):
    import struct

    spec = net.spec
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<4I", spec.input_h, spec.input_w, spec.k_out,
                             len(spec.conv_stages)))
        for st in spec.conv_stages:
            fh.write(struct.pack("<5I", st.kernel_h, st.kernel_w, st.n_filters,
                                 st.pool_h, st.pool_w))
        fh.write(struct.pack("<I", len(spec.fc_widths)))
        for w in spec.fc_widths:
            fh.write(struct.pack("<I", w))
        fh.write(struct.pack("<d", net.x_rms))
        fh.write(struct.pack("<I", 1 if net.label_scale == "budget" else 0))
        for arr in net.params:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_weights(path):
    import struct

    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _MAGIC:
        raise ValidationError("not a weights file (bad magic)")
    off = 4
    (version,) = struct.unpack_from("<I", data, off)
    off += 4
    if version != _VERSION:
        raise ValidationError(f"unsupported weights version {version}")
    input_h, input_w, k_out, n_stages = struct.unpack_from("<4I", data, off)
    off += 16
    stages = []
    for _ in range(n_stages):
        vals = struct.unpack_from("<5I", data, off)
        off += 20
        stages.append(ConvStage(*vals))
    (n_fc,) = struct.unpack_from("<I", data, off)
    off += 4
    fc = struct.unpack_from(f"<{n_fc}I", data, off)
    off += 4 * n_fc
    (x_rms,) = struct.unpack_from("<d", data, off)
    off += 8
    (scale_flag,) = struct.unpack_from("<I", data, off)
    off += 4
    spec = NetSpec(input_h=input_h, input_w=input_w, conv_stages=stages,
                   fc_widths=fc, k_out=k_out)
    params = []
    c_in = 1
    shapes = []
    for st in spec.conv_stages:
        shapes.append((st.n_filters, c_in, st.kernel_h, st.kernel_w))
        shapes.append((st.n_filters,))
        c_in = st.n_filters
    d_in = spec.flat_dim() + 1
    for width in spec.fc_widths:
        shapes.append((width, d_in))
        shapes.append((width,))
        d_in = width
    for shape in shapes:
        count = int(np.prod(shape))
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape)
        params.append(arr.astype(np.float64))
        off += 8 * count
    if off != len(data):
        raise ValidationError("weights file size does not match the declared spec")
    return TrainedNet(spec=spec, params=params, x_rms=x_rms,
                      label_scale="budget" if scale_flag else "raw")
