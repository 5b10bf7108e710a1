"""Proprioceptive friction regressor: per-joint tokens over a short window fed to
a small transformer whose attention projects keys/values along the sequence
axis to a fixed length k (cost linear in the sequence length).

Everything is plain numpy with hand-written reverse mode. Parameters are kept
in a flat ``{name: array}`` dict so checkpoints, optimizers and gradient checks
all iterate the same way.
"""
from __future__ import annotations

import json
import math
import struct
import time
from dataclasses import asdict, dataclass, field

import numpy as np

N_SIGNALS = 3   # (q, dq, tau) per joint


# ---------------------------------------------------------------- tokenization

@dataclass(frozen=True)
class WindowSpec:
    n_steps: int = 40
    dt: float = 0.03

    @property
    def duration(self):
        return self.n_steps * self.dt


def tokenize(q, dq, tau, control_dt, start=0, spec: WindowSpec = WindowSpec()):
    """Raw (n_steps, 3 J) features from control-rate joint signals.

    Samples every ``spec.dt`` starting at index ``start``; the columns are
    joint-major, (q_j, dq_j, tau_j) for j = 0..J-1, so a reshape to
    (n_steps, J, 3) gives one token per joint and step.
    """
    q, dq, tau = (np.asarray(a, float) for a in (q, dq, tau))
    if not q.shape == dq.shape == tau.shape or q.ndim != 2:
        raise ValueError("q, dq, tau must be (n, J) arrays of equal shape")
    stride = int(round(spec.dt / control_dt))
    if stride < 1 or abs(stride * control_dt - spec.dt) > 1e-9:
        raise ValueError("window dt must be a multiple of the control period")
    if start < 0 or len(q) - start < spec.n_steps * stride:
        have = (len(q) - start) * control_dt
        raise ValueError(f"window needs {spec.duration:.3g} s of data, got {have:.3g} s")
    idx = start + stride * np.arange(spec.n_steps)
    return np.stack([q[idx], dq[idx], tau[idx]], axis=-1).reshape(spec.n_steps, -1)


def log_signals(log, n_joints=12):
    """(q, dq, tau) arrays from a scenario log; tau is the applied command."""
    q = np.column_stack([log.column(f"q_{j}") for j in range(n_joints)])
    dq = np.column_stack([log.column(f"dq_{j}") for j in range(n_joints)])
    tau = np.column_stack([log.column(f"u_{j}") for j in range(n_joints)])
    return q, dq, tau


@dataclass
class Normalizer:
    """Per-feature standardization with statistics frozen from the train split."""
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, features, eps=1e-6):
        x = np.asarray(features, float).reshape(-1, np.shape(features)[-1])
        mean = x.mean(axis=0)
        const = x.min(axis=0) == x.max(axis=0)
        mean[const] = x[0, const]       # exact, so a frozen signal maps to 0
        return cls(mean, np.maximum(x.std(axis=0), eps))

    def __call__(self, features):
        return (np.asarray(features, float) - self.mean) / self.std


class OnlineFrictionEstimate:
    """Friction coefficient for the filter from a trained estimator.

    Every ``period`` seconds the last window of the running log is tokenized
    and fed to the model; the raw estimate (clipped to ``bounds``) is passed
    through a first-order smoother with ``time_constant``. Until a full window
    is available the source returns ``mu0``. Use as ``run_scenario(...,
    mu_source=OnlineFrictionEstimate(...))``.
    """

    def __init__(self, model: "Estimator", mu0, time_constant=0.5, period=0.03,
                 control_dt=0.002, spec: WindowSpec = WindowSpec(), bounds=(0.05, 2.0)):
        from .filter import MuSmoother

        self.model = model
        self.smoother = MuSmoother(mu0, time_constant)
        self.period, self.control_dt, self.spec, self.bounds = period, control_dt, spec, bounds
        self.stride = int(round(spec.dt / control_dt))
        self.raw = np.nan
        self.history = []       # (t, raw estimate)
        self._last = None
        self._cols = None

    def _window(self, log):
        if self._cols is None:
            J = self.model.config.n_joints
            names = [f"{p}_{j}" for j in range(J) for p in ("q", "dq", "u")]
            self._cols = [log.columns.index(n) for n in names]
        need = self.spec.n_steps * self.stride
        rows = np.array([[r[i] for i in self._cols] for r in log.rows[-need:]], dtype=float)
        rows = rows.reshape(need, -1, 3)
        return tokenize(rows[:, :, 0], rows[:, :, 1], rows[:, :, 2], self.control_dt,
                        spec=self.spec)

    def __call__(self, t, log):
        if len(log) >= self.spec.n_steps * self.stride and (
                self._last is None or t - self._last >= self.period - 1e-12):
            est = float(self.model.predict(self._window(log)[None])[0])
            self.raw = float(np.clip(est, *self.bounds))
            self.history.append((t, self.raw))
            self._last = t
        if np.isfinite(self.raw):
            return self.smoother.update(self.raw, self.control_dt)
        return self.smoother.mu


# ------------------------------------------------------------------- the model

@dataclass
class EstimatorConfig:
    d: int = 32
    heads: int = 4
    layers: int = 2
    k: int = 32
    d_ff: int = 64
    n_steps: int = 40
    n_joints: int = 12
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.d % self.heads:
            raise ValueError("d must be divisible by heads")
        if not 1 <= self.k:
            raise ValueError("k must be >= 1")

    @property
    def seq_len(self):
        return self.n_steps * self.n_joints


def init_params(config: EstimatorConfig, rng):
    d, L, k, f = config.d, config.seq_len, config.k, config.d_ff

    def dense(n_in, n_out):
        return rng.normal(0.0, 1.0 / math.sqrt(n_in), (n_in, n_out))

    p = {"embed.W": dense(N_SIGNALS, d), "embed.b": np.zeros(d),
         "pos": rng.normal(0.0, 0.1, (L, d))}
    for i in range(config.layers):
        b = f"blocks.{i}."
        for name in ("q", "k", "v", "o"):
            p[b + "W" + name] = dense(d, d)
            p[b + "b" + name] = np.zeros(d)
        p[b + "E"] = rng.normal(0.0, 1.0 / math.sqrt(L), (k, L))
        p[b + "F"] = rng.normal(0.0, 1.0 / math.sqrt(L), (k, L))
        p[b + "ln1.g"], p[b + "ln1.b"] = np.ones(d), np.zeros(d)
        p[b + "W1"], p[b + "b1"] = dense(d, f), np.zeros(f)
        p[b + "W2"], p[b + "b2"] = dense(f, d), np.zeros(d)
        p[b + "ln2.g"], p[b + "ln2.b"] = np.ones(d), np.zeros(d)
    p["head.w"] = rng.normal(0.0, 1.0 / math.sqrt(d), d)
    p["head.b"] = np.zeros(())
    return p


@dataclass
class Estimator:
    config: EstimatorConfig
    params: dict
    normalizer: Normalizer | None = None

    @classmethod
    def create(cls, config: EstimatorConfig | None = None, seed=0):
        config = config or EstimatorConfig()
        return cls(config, init_params(config, np.random.default_rng(seed)))

    def predict(self, features, batch=64):
        """mu estimates for raw (N, n_steps, 3 J) features."""
        x = np.asarray(features, float)
        if self.normalizer is not None:
            x = self.normalizer(x)
        tokens = to_tokens(x, self.config)
        return np.concatenate([forward(self, tokens[i:i + batch])
                               for i in range(0, len(tokens), batch)])


def to_tokens(features, config: EstimatorConfig):
    """(N, n_steps, 3 J) -> (N, L, 3), step-major then joint."""
    x = np.asarray(features, float)
    return x.reshape(x.shape[0], config.n_steps * config.n_joints, N_SIGNALS)


_GELU_C = math.sqrt(2.0 / math.pi)


def _gelu(x):
    t = np.tanh(_GELU_C * x * (1.0 + 0.044715 * x * x))
    return 0.5 * x * (1.0 + t), t


def _gelu_grad(x, t):
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)


def _layer_norm(x, g, b, eps):
    mu = x.mean(axis=-1, keepdims=True)
    s = np.sqrt(x.var(axis=-1, keepdims=True) + eps)
    xhat = (x - mu) / s
    return g * xhat + b, (xhat, s)


def _layer_norm_back(dy, g, cache):
    xhat, s = cache
    dxhat = dy * g
    dx = (dxhat - dxhat.mean(-1, keepdims=True)
          - xhat * (dxhat * xhat).mean(-1, keepdims=True)) / s
    red = tuple(range(dy.ndim - 1))
    return dx, (dy * xhat).sum(axis=red), dy.sum(axis=red)


def _outer_sum(a, b):
    """sum_{batch, position} a^T b for (B, L, m) and (B, L, n) arrays."""
    return a.reshape(-1, a.shape[-1]).T @ b.reshape(-1, b.shape[-1])


def _softmax(s, inplace=False):
    e = s if inplace else s.copy()
    e -= e.max(axis=-1, keepdims=True)
    np.exp(e, out=e)
    e /= e.sum(axis=-1, keepdims=True)
    return e


def _split(x, heads):
    B, n, d = x.shape
    return x.reshape(B, n, heads, d // heads).transpose(0, 2, 1, 3)


def _merge(x):
    B, H, n, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, n, H * dh)


def attention_forward(params, X, block=0, heads=4, eps=1e-5, return_cache=False):
    """Low-rank attention sub-block: LN(X + W_o concat_h softmax(Q (E K)^T / sqrt(d_h)) F V).

    ``X`` is (L, d) or (B, L, d). E and F (k x L) are shared across heads.
    """
    p, b = params, f"blocks.{block}."
    single = X.ndim == 2
    X = X[None] if single else X
    dh = X.shape[-1] // heads
    Q = X @ p[b + "Wq"] + p[b + "bq"]
    K = X @ p[b + "Wk"] + p[b + "bk"]
    V = X @ p[b + "Wv"] + p[b + "bv"]
    Kp = p[b + "E"] @ K
    Vp = p[b + "F"] @ V
    Qh, Kh, Vh = _split(Q, heads), _split(Kp, heads), _split(Vp, heads)
    # scale the (L, d_h) queries rather than the (L, k) scores; one score buffer
    A = _softmax((Qh * (1.0 / math.sqrt(dh))) @ Kh.transpose(0, 1, 3, 2), inplace=True)
    O = _merge(A @ Vh)
    att = O @ p[b + "Wo"] + p[b + "bo"]
    Y, ln = _layer_norm(X + att, p[b + "ln1.g"], p[b + "ln1.b"], eps)
    if single:
        Y = Y[0]
    if return_cache:
        return Y, dict(X=X, K=K, V=V, Qh=Qh, Kh=Kh, Vh=Vh, A=A, O=O, att=att, ln=ln, dh=dh)
    return Y


class Workspace:
    """Reusable named buffers, so repeated inference calls do not allocate."""

    def __init__(self):
        self._buf = {}

    def get(self, name, shape):
        buf = self._buf.get(name)
        if buf is None or buf.shape != shape:
            buf = self._buf[name] = np.empty(shape)
        return buf


def attention_inference(params, X, block=0, heads=4, eps=1e-5, workspace=None):
    """Same result as ``attention_forward`` without per-call large temporaries.

    Every (L, .) intermediate lives in ``workspace``; the returned array is a
    workspace buffer and is overwritten by the next call for this block.
    """
    ws = workspace or Workspace()
    p, b = params, f"blocks.{block}."
    single = X.ndim == 2
    X = X[None] if single else X
    B, L, d = X.shape
    dh = d // heads
    k = p[b + "E"].shape[0]
    Q = np.matmul(X, p[b + "Wq"], out=ws.get(b + "Q", (B, L, d)))
    Q += p[b + "bq"]
    Q *= 1.0 / math.sqrt(dh)
    K = np.matmul(X, p[b + "Wk"], out=ws.get(b + "K", (B, L, d)))
    K += p[b + "bk"]
    Kp = p[b + "E"] @ K
    V = np.matmul(X, p[b + "Wv"], out=ws.get(b + "V", (B, L, d)))
    V += p[b + "bv"]
    Vp = p[b + "F"] @ V
    S = np.matmul(_split(Q, heads), _split(Kp, heads).transpose(0, 1, 3, 2),
                  out=ws.get(b + "S", (B, heads, L, k)))
    _softmax(S, inplace=True)
    AV = np.matmul(S, _split(Vp, heads), out=ws.get(b + "AV", (B, heads, L, dh)))
    O = ws.get(b + "O", (B, L, d))
    np.copyto(O.reshape(B, L, heads, dh), AV.transpose(0, 2, 1, 3))
    R = np.matmul(O, p[b + "Wo"], out=ws.get(b + "R", (B, L, d)))
    R += p[b + "bo"]
    R += X
    R -= R.mean(axis=-1, keepdims=True)
    sq = np.multiply(R, R, out=ws.get(b + "sq", (B, L, d)))
    R /= np.sqrt(sq.mean(axis=-1, keepdims=True) + eps)
    R *= p[b + "ln1.g"]
    R += p[b + "ln1.b"]
    return R[0] if single else R


def _attention_backward(params, block, heads, dY, c, grads):
    p, b = params, f"blocks.{block}."
    dR, grads[b + "ln1.g"], grads[b + "ln1.b"] = _layer_norm_back(dY, p[b + "ln1.g"], c["ln"])
    dX = dR.copy()
    grads[b + "Wo"] = _outer_sum(c["O"], dR)
    grads[b + "bo"] = dR.sum(axis=(0, 1))
    dOh = _split(dR @ p[b + "Wo"].T, heads)
    A = c["A"]
    dA = dOh @ c["Vh"].transpose(0, 1, 3, 2)
    dVh = A.transpose(0, 1, 3, 2) @ dOh
    dS = A * (dA - (dA * A).sum(axis=-1, keepdims=True)) / math.sqrt(c["dh"])
    dQh = dS @ c["Kh"]
    dKh = dS.transpose(0, 1, 3, 2) @ c["Qh"]
    dKp, dVp, dQ = _merge(dKh), _merge(dVh), _merge(dQh)
    grads[b + "E"] = np.tensordot(dKp, c["K"], axes=([0, 2], [0, 2]))
    grads[b + "F"] = np.tensordot(dVp, c["V"], axes=([0, 2], [0, 2]))
    dK = p[b + "E"].T @ dKp
    dV = p[b + "F"].T @ dVp
    X = c["X"]
    for name, dZ in (("q", dQ), ("k", dK), ("v", dV)):
        grads[b + "W" + name] = _outer_sum(X, dZ)
        grads[b + "b" + name] = dZ.sum(axis=(0, 1))
        dX += dZ @ p[b + "W" + name].T
    return dX


def _ffn_forward(params, block, X, eps):
    p, b = params, f"blocks.{block}."
    Z1 = X @ p[b + "W1"] + p[b + "b1"]
    G, t = _gelu(Z1)
    Z2 = G @ p[b + "W2"] + p[b + "b2"]
    Y, ln = _layer_norm(X + Z2, p[b + "ln2.g"], p[b + "ln2.b"], eps)
    return Y, dict(X=X, Z1=Z1, t=t, G=G, ln=ln)


def _ffn_backward(params, block, dY, c, grads):
    p, b = params, f"blocks.{block}."
    dR, grads[b + "ln2.g"], grads[b + "ln2.b"] = _layer_norm_back(dY, p[b + "ln2.g"], c["ln"])
    grads[b + "W2"] = _outer_sum(c["G"], dR)
    grads[b + "b2"] = dR.sum(axis=(0, 1))
    dZ1 = (dR @ p[b + "W2"].T) * _gelu_grad(c["Z1"], c["t"])
    grads[b + "W1"] = _outer_sum(c["X"], dZ1)
    grads[b + "b1"] = dZ1.sum(axis=(0, 1))
    return dR + dZ1 @ p[b + "W1"].T


def _forward(model: Estimator, tokens, keep=False):
    cfg, p = model.config, model.params
    tokens = np.asarray(tokens, float)
    if tokens.shape[1:] != (cfg.seq_len, N_SIGNALS):
        raise ValueError(f"tokens must be (B, {cfg.seq_len}, {N_SIGNALS}), got {tokens.shape}")
    X = tokens @ p["embed.W"] + p["embed.b"] + p["pos"]
    caches = []
    for i in range(cfg.layers):
        X, ca = attention_forward(p, X, i, cfg.heads, cfg.ln_eps, return_cache=True)
        X, cf = _ffn_forward(p, i, X, cfg.ln_eps)
        caches.append((ca, cf))
    pooled = X.mean(axis=1)
    out = pooled @ p["head.w"] + p["head.b"]
    if keep:
        return out, dict(tokens=tokens, caches=caches, pooled=pooled)
    return out


def forward(model: Estimator, tokens):
    """mu estimates for a (B, L, 3) batch of normalized tokens."""
    return _forward(model, tokens)


def loss_and_gradients(model: Estimator, tokens, labels):
    """Mean squared error over the batch and its gradient for every parameter."""
    cfg, p = model.config, model.params
    labels = np.asarray(labels, float)
    out, c = _forward(model, tokens, keep=True)
    err = out - labels
    loss = float(np.mean(err ** 2))
    dout = 2.0 * err / len(labels)
    grads = {"head.w": c["pooled"].T @ dout, "head.b": np.asarray(dout.sum())}
    dX = np.repeat((dout[:, None] * p["head.w"])[:, None, :] / cfg.seq_len, cfg.seq_len, axis=1)
    for i in reversed(range(cfg.layers)):
        ca, cf = c["caches"][i]
        dX = _ffn_backward(p, i, dX, cf, grads)
        dX = _attention_backward(p, i, cfg.heads, dX, ca, grads)
    grads["pos"] = dX.sum(axis=0)
    grads["embed.W"] = _outer_sum(c["tokens"], dX)
    grads["embed.b"] = dX.sum(axis=(0, 1))
    return loss, grads


def numerical_gradients(model: Estimator, tokens, labels, eps=1e-5, names=None):
    """Central finite differences of the batch loss (slow; for checking only)."""
    out = {}
    for name in names or model.params:
        w = model.params[name]
        g = np.zeros_like(w)
        for i in range(w.size):
            old = w.flat[i]
            w.flat[i] = old + eps
            lp, _ = loss_and_gradients(model, tokens, labels)
            w.flat[i] = old - eps
            lm, _ = loss_and_gradients(model, tokens, labels)
            w.flat[i] = old
            g.flat[i] = (lp - lm) / (2 * eps)
        out[name] = g
    return out


# -------------------------------------------------------------------- training

@dataclass
class TrainConfig:
    epochs: int = 60
    batch_size: int = 32
    lr: float = 2e-3
    lr_min: float = 1e-4
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    grad_clip: float = 1.0
    seed: int = 0
    time_limit: float | None = None


class Adam:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.b1, self.b2, self.eps, self.t = beta1, beta2, eps, 0

    def step(self, params, grads, lr, weight_decay=0.0):
        self.t += 1
        c1, c2 = 1 - self.b1 ** self.t, 1 - self.b2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] -= lr * (self.m[k] / c1 / (np.sqrt(self.v[k] / c2) + self.eps)
                               + weight_decay * params[k])


def _clip(grads, max_norm):
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm and total > max_norm:
        return {k: g * (max_norm / total) for k, g in grads.items()}
    return grads


def evaluate(model: Estimator, features, labels):
    """(MSE, MAE) on raw features."""
    pred = model.predict(features)
    err = pred - np.asarray(labels, float)
    return float(np.mean(err ** 2)), float(np.mean(np.abs(err)))


def train(model: Estimator, dataset: "Dataset", config: TrainConfig | None = None, log=None):
    """Adam with cosine step-size decay; keeps the parameters with the best
    validation MAE. Fits the normalizer on the train split if none is set.

    Returns the per-epoch history: list of dicts with train/val MSE and MAE.
    """
    config = config or TrainConfig()
    rng = np.random.default_rng(config.seed)
    xtr, ytr = dataset.split("train")
    xva, yva = dataset.split("val")
    if model.normalizer is None:
        model.normalizer = Normalizer.fit(xtr)
    tok = to_tokens(model.normalizer(xtr), model.config)
    opt = Adam(model.params, config.beta1, config.beta2)
    n_batches = max(1, math.ceil(len(ytr) / config.batch_size))
    total = config.epochs * n_batches
    history, best, best_mae = [], None, np.inf
    t0 = time.perf_counter()
    for epoch in range(config.epochs):
        order = rng.permutation(len(ytr))
        for bi in range(n_batches):
            idx = order[bi * config.batch_size:(bi + 1) * config.batch_size]
            frac = opt.t / max(1, total - 1)
            lr = config.lr_min + 0.5 * (config.lr - config.lr_min) * (1 + math.cos(math.pi * frac))
            _, grads = loss_and_gradients(model, tok[idx], ytr[idx])
            opt.step(model.params, _clip(grads, config.grad_clip), lr, config.weight_decay)
        tr_mse, tr_mae = evaluate(model, xtr, ytr)
        va_mse, va_mae = evaluate(model, xva, yva) if len(yva) else (np.nan, np.nan)
        history.append(dict(epoch=epoch, train_mse=tr_mse, train_mae=tr_mae,
                            val_mse=va_mse, val_mae=va_mae, lr=lr))
        if log:
            log(f"epoch {epoch:3d}  train mae {tr_mae:.4f}  val mae {va_mae:.4f}")
        score = va_mae if len(yva) else tr_mae
        if score < best_mae:
            best_mae, best = score, {k: v.copy() for k, v in model.params.items()}
        if config.time_limit and time.perf_counter() - t0 > config.time_limit:
            break
    if best is not None:
        model.params = best
    return history


# ------------------------------------------------------------ binary container

MAGIC = b"LSBT"
FORMAT_VERSION = 1
_DTYPES = {0: np.float32, 1: np.float64, 2: np.int32, 3: np.int64, 4: np.uint8}
_CODES = {np.dtype(v): k for k, v in _DTYPES.items()}


def write_container(path, tensors: dict, meta: dict | None = None):
    """Named little-endian tensors with dims, a JSON metadata block and a version byte."""
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<BI", FORMAT_VERSION, len(meta_bytes)) + meta_bytes)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            arr = np.asarray(arr)
            if arr.dtype not in _CODES:
                raise TypeError(f"{name}: unsupported dtype {arr.dtype}")
            nb = name.encode()
            fh.write(struct.pack("<H", len(nb)) + nb)
            fh.write(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())


def read_container(path):
    """Inverse of ``write_container``: (tensors, meta)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not a tensor container")
    version, n_meta = struct.unpack_from("<BI", data, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    pos = 9
    meta = json.loads(data[pos:pos + n_meta].decode())
    pos += n_meta
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    tensors = {}
    for _ in range(count):
        (n_name,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + n_name].decode()
        pos += n_name
        code, ndim = struct.unpack_from("<BB", data, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}Q", data, pos)
        pos += 8 * ndim
        dt = np.dtype(_DTYPES[code]).newbyteorder("<")
        nbytes = dt.itemsize * int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(data, dt, count=nbytes // dt.itemsize,
                                      offset=pos).reshape(shape).astype(_DTYPES[code])
        pos += nbytes
    return tensors, meta


def save_checkpoint(path, model: Estimator):
    tensors = {"param/" + k: v for k, v in model.params.items()}
    if model.normalizer is not None:
        tensors["norm/mean"] = model.normalizer.mean
        tensors["norm/std"] = model.normalizer.std
    write_container(path, tensors, {"kind": "estimator", "config": asdict(model.config)})


def load_checkpoint(path) -> Estimator:
    tensors, meta = read_container(path)
    if meta.get("kind") != "estimator":
        raise ValueError(f"{path}: not an estimator checkpoint")
    params = {k[6:]: v.copy() for k, v in tensors.items() if k.startswith("param/")}
    norm = None
    if "norm/mean" in tensors:
        norm = Normalizer(tensors["norm/mean"].copy(), tensors["norm/std"].copy())
    return Estimator(EstimatorConfig(**meta["config"]), params, norm)


# --------------------------------------------------------------------- dataset

SPLITS = ("train", "val", "test")


@dataclass
class Dataset:
    features: np.ndarray                 # (N, n_steps, 3 J) float32, raw
    labels: np.ndarray                   # (N,) mu_true
    fold: np.ndarray                     # (N,) 0 train, 1 val, 2 test
    run: np.ndarray                      # (N,) source run id
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.labels)

    def split_indices(self, name):
        return np.flatnonzero(self.fold == SPLITS.index(name))

    def split(self, name):
        """(features, labels) of one split as float64."""
        i = self.split_indices(name)
        return self.features[i].astype(float), self.labels[i].astype(float)

    def save(self, path):
        write_container(path, {"features": self.features.astype(np.float32),
                               "labels": self.labels.astype(np.float32),
                               "fold": self.fold.astype(np.uint8),
                               "run": self.run.astype(np.int32)},
                        {"kind": "dataset", **self.meta})

    @classmethod
    def load(cls, path):
        t, meta = read_container(path)
        if meta.pop("kind", None) != "dataset":
            raise ValueError(f"{path}: not a dataset file")
        return cls(t["features"], t["labels"], t["fold"], t["run"], meta)


def generate_synthetic_dataset(n_samples, mu_range=(0.2, 1.0), seed=0, robot=None,
                               run_duration=3.0, warmup=0.3, window_stride=0.15,
                               body_velocity=0.3, split_fractions=(0.7, 0.15, 0.15),
                               spec: WindowSpec = WindowSpec(), control_dt=0.002,
                               progress=None):
    """Trot runs on flat ground with mu_true ~ U(mu_range), sliced into windows.

    Each run contributes every window starting at ``warmup + i * window_stride``;
    splits are assigned per run so no two splits share a trajectory.
    """
    from .gait import GaitSchedule, TrotController
    from .robots import quadruped
    from .scenario import run_scenario
    from .sim import Terrain

    robot = robot or quadruped()
    rng = np.random.default_rng(seed)
    feats, labels, runs = [], [], []
    run_id = 0
    while len(labels) < n_samples:
        mu = float(rng.uniform(*mu_range))
        ctrl = TrotController(robot, GaitSchedule(body_velocity_target=body_velocity))
        log = run_scenario(robot, ctrl, Terrain(mu_true=mu), run_duration,
                           control_dt=control_dt, log_lambda=False)
        q, dq, tau = log_signals(log, robot.nva)
        start = int(round(warmup / control_dt))
        step = int(round(window_stride / control_dt))
        while len(labels) < n_samples:
            try:
                feats.append(tokenize(q, dq, tau, control_dt, start, spec))
            except ValueError:
                break
            labels.append(mu)
            runs.append(run_id)
            start += step
        if progress:
            progress(f"run {run_id}: mu {mu:.3f}, {len(labels)}/{n_samples} windows")
        run_id += 1
    runs = np.array(runs)
    order = rng.permutation(run_id)
    cuts = np.cumsum(np.array(split_fractions) / np.sum(split_fractions))[:2] * run_id
    fold_of_run = np.empty(run_id, dtype=np.uint8)
    for rank, r in enumerate(order):
        fold_of_run[r] = int(np.searchsorted(cuts, rank, side="right"))
    meta = dict(dt=spec.dt, n_steps=spec.n_steps, window=spec.duration, mu_range=list(mu_range),
                seed=seed, run_duration=run_duration, body_velocity=body_velocity,
                n_joints=robot.nva)
    return Dataset(np.array(feats, dtype=np.float32), np.array(labels), fold_of_run[runs],
                   runs, meta)
