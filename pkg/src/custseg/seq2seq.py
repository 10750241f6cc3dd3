"""LSTM encoder-decoder with dot-product attention, written against numpy.

Architecture
------------
* Encoder: ``encoder_layers`` stacked LSTMs over the real rows of each
  customer (padding is never consumed).  The final top-layer hidden state
  goes through a ReLU dense layer and a sigmoid projection to the latent
  vector of size ``latent_dim``.
* Decoder: ``decoder_layers`` stacked LSTMs.  Layer k starts from
  ``h0_k = tanh(W z + b)`` and ``c0_k = 0``.  At every step the previous
  top-layer hidden state scores each encoder state by dot product, the
  softmax-weighted context is concatenated with the new top-layer output,
  and a linear layer predicts the next 4-vector.
* Loss: mean squared error over real rows plus the EOS row.

Gate order inside every ``W``/``U``/``b`` is (input, forget, candidate,
output).  Parameters live in a plain ``dict`` whose key order is given by
:func:`param_names`.
"""

from __future__ import annotations

import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, NumericError, TrainingDivergedError
from .features import FeatureMatrix
from .preprocess import N_FEATURES, PaddedSequenceBatch, ZScoreParams, apply_zscore, fit_zscore, teacher_arrays

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "custseg-seq2seq"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    hidden_size: int = 16
    encoder_layers: int = 2
    decoder_layers: int = 2
    dense_size: int = 16
    latent_dim: int = 8
    learning_rate: float = 0.5
    epochs: int = 40
    batch_size: int = 32
    seed: int = 0
    split: tuple[float, float, float] = (0.7, 0.2, 0.1)
    attention: bool = True
    clip_norm: float | None = 5.0

    def validate(self, max_len: int | None = None):
        for name in ("hidden_size", "encoder_layers", "decoder_layers", "dense_size", "latent_dim", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if len(self.split) != 3 or any(f < 0 for f in self.split) or not math.isclose(sum(self.split), 1.0):
            raise ConfigError(f"split fractions {self.split} must be three non-negative numbers summing to 1")
        if self.split[0] <= 0:
            raise ConfigError("the training fraction must be positive")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ConfigError("clip_norm must be positive or null")
        if max_len is not None and self.latent_dim >= max_len:
            raise ConfigError(
                f"latent_dim={self.latent_dim} must be smaller than the longest sequence ({max_len} transactions)"
            )


@dataclass(frozen=True)
class LossRecord:
    epoch: int
    train_loss: float
    val_loss: float | None
    learning_rate: float
    accepted: bool = True


@dataclass(frozen=True)
class LstmCellParams:
    W: np.ndarray  # (4H, n_in)
    U: np.ndarray  # (4H, H)
    b: np.ndarray  # (4H,)

    @property
    def hidden_size(self):
        return self.U.shape[1]


@dataclass(frozen=True)
class EncoderOutput:
    hidden_states: np.ndarray  # (length, H), top layer
    latent: np.ndarray  # (latent_dim,)


# --------------------------------------------------------------------------
# parameters


def param_shapes(cfg: TrainConfig) -> dict[str, tuple[int, ...]]:
    H, P, L = cfg.hidden_size, cfg.dense_size, cfg.latent_dim
    shapes = {}
    for k in range(cfg.encoder_layers):
        n_in = N_FEATURES if k == 0 else H
        shapes[f"enc{k}.W"] = (4 * H, n_in)
        shapes[f"enc{k}.U"] = (4 * H, H)
        shapes[f"enc{k}.b"] = (4 * H,)
    shapes["proj.W"] = (P, H)
    shapes["proj.b"] = (P,)
    shapes["latent.W"] = (L, P)
    shapes["latent.b"] = (L,)
    for k in range(cfg.decoder_layers):
        shapes[f"init{k}.W"] = (H, L)
        shapes[f"init{k}.b"] = (H,)
    for k in range(cfg.decoder_layers):
        n_in = N_FEATURES if k == 0 else H
        shapes[f"dec{k}.W"] = (4 * H, n_in)
        shapes[f"dec{k}.U"] = (4 * H, H)
        shapes[f"dec{k}.b"] = (4 * H,)
    shapes["out.W"] = (N_FEATURES, 2 * H)
    shapes["out.b"] = (N_FEATURES,)
    return shapes


def param_names(cfg: TrainConfig) -> list[str]:
    return list(param_shapes(cfg))


def init_params(cfg: TrainConfig, rng: np.random.Generator | None = None) -> dict[str, np.ndarray]:
    """Uniform(-k, k) initialisation with ``k = 1 / sqrt(hidden_size)``."""
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    k = 1.0 / math.sqrt(cfg.hidden_size)
    return {name: rng.uniform(-k, k, size=shape) for name, shape in param_shapes(cfg).items()}


def zero_params(cfg: TrainConfig) -> dict[str, np.ndarray]:
    return {name: np.zeros(shape) for name, shape in param_shapes(cfg).items()}


def _cell(params, prefix):
    return LstmCellParams(params[prefix + ".W"], params[prefix + ".U"], params[prefix + ".b"])


# --------------------------------------------------------------------------
# cell


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _cell_forward(x, h_prev, c_prev, p: LstmCellParams):
    H = p.hidden_size
    a = x @ p.W.T + h_prev @ p.U.T + p.b
    i = _sigmoid(a[..., :H])
    f = _sigmoid(a[..., H : 2 * H])
    g = np.tanh(a[..., 2 * H : 3 * H])
    o = _sigmoid(a[..., 3 * H :])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, (x, h_prev, c_prev, i, f, g, o, tc)


def lstm_cell_forward(x, h_prev, c_prev, params: LstmCellParams):
    """One LSTM step; works on single vectors or row batches.

    Raises :class:`NumericError` if the new state is not finite.
    """
    h, c, _ = _cell_forward(np.asarray(x, float), np.asarray(h_prev, float), np.asarray(c_prev, float), params)
    if not (np.all(np.isfinite(h)) and np.all(np.isfinite(c))):
        raise NumericError("LSTM cell produced non-finite state")
    return h, c


def _forget_gate_grad(dc, c_prev):
    return dc * c_prev


def _cell_backward(cache, dh, dc, p: LstmCellParams, gW, gU, gb):
    """Backprop one step; accumulates into gW/gU/gb, returns (dx, dh_prev, dc_prev)."""
    x, h_prev, c_prev, i, f, g, o, tc = cache
    do = dh * tc
    dc = dc + dh * o * (1.0 - tc * tc)
    di = dc * g
    df = _forget_gate_grad(dc, c_prev)
    dg = dc * i
    da = np.concatenate(
        [di * i * (1.0 - i), df * f * (1.0 - f), dg * (1.0 - g * g), do * o * (1.0 - o)], axis=-1
    )
    gW += da.T @ x
    gU += da.T @ h_prev
    gb += da.sum(axis=0)
    return da @ p.W, da @ p.U, dc * f


# --------------------------------------------------------------------------
# forward / backward over a batch


@dataclass
class ModelBatch:
    """Arrays consumed by the network.

    ``enc_x`` is ``B x Te x 4`` with true lengths ``enc_len``; the decoder
    arrays are ``B x Td x 4`` with loss mask ``dec_mask`` (``B x Td``).
    """

    enc_x: np.ndarray
    enc_len: np.ndarray
    dec_in: np.ndarray
    dec_target: np.ndarray
    dec_mask: np.ndarray

    def __len__(self):
        return self.enc_x.shape[0]

    @classmethod
    def from_padded(cls, batch: PaddedSequenceBatch, indices=None):
        inputs, targets, mask = teacher_arrays(batch)
        lengths = batch.lengths
        x = batch.tensor
        if indices is not None:
            indices = np.asarray(indices, dtype=int)
            inputs, targets, mask, lengths, x = inputs[indices], targets[indices], mask[indices], lengths[indices], x[indices]
        te = int(lengths.max(initial=1))
        return cls(x[:, :te].copy(), lengths.copy(), inputs[:, : te + 1].copy(), targets[:, : te + 1].copy(), mask[:, : te + 1].copy())


def _attend(s_prev, enc_states, enc_mask):
    """Dot-product attention weights and context.

    s_prev: (B, H); enc_states: (B, Te, H); enc_mask: (B, Te) bool.
    """
    scores = np.einsum("bh,bth->bt", s_prev, enc_states)
    scores = np.where(enc_mask, scores, -np.inf)
    scores = scores - scores.max(axis=1, keepdims=True)
    weights = np.exp(scores) * enc_mask
    weights = weights / weights.sum(axis=1, keepdims=True)
    context = np.einsum("bt,bth->bh", weights, enc_states)
    return weights, context


def _encode_batch(params, cfg, x, lengths):
    B, T, _ = x.shape
    H = cfg.hidden_size
    mask = np.arange(T)[None, :] < lengths[:, None]
    layer_in = x
    caches = []
    for k in range(cfg.encoder_layers):
        p = _cell(params, f"enc{k}")
        h = np.zeros((B, H))
        c = np.zeros((B, H))
        outs = np.zeros((B, T, H))
        layer_cache = []
        for t in range(T):
            h_new, c_new, cache = _cell_forward(layer_in[:, t], h, c, p)
            m = mask[:, t, None]
            h = np.where(m, h_new, h)
            c = np.where(m, c_new, c)
            outs[:, t] = h
            layer_cache.append(cache)
        caches.append(layer_cache)
        layer_in = outs
    q = h @ params["proj.W"].T + params["proj.b"]
    p_act = np.maximum(q, 0.0)
    z = _sigmoid(p_act @ params["latent.W"].T + params["latent.b"])
    return {"mask": mask, "caches": caches, "states": layer_in, "final": h, "q": q, "p": p_act, "z": z}


def _forward(params, cfg, mb: ModelBatch):
    enc = _encode_batch(params, cfg, mb.enc_x, mb.enc_len)
    E, emask, z = enc["states"], enc["mask"], enc["z"]
    B, Td, _ = mb.dec_in.shape
    H = cfg.hidden_size

    h0 = [np.tanh(z @ params[f"init{k}.W"].T + params[f"init{k}.b"]) for k in range(cfg.decoder_layers)]
    hs = list(h0)
    cs = [np.zeros((B, H)) for _ in range(cfg.decoder_layers)]
    cells = [_cell(params, f"dec{k}") for k in range(cfg.decoder_layers)]
    s_prev = hs[-1]
    steps = []
    yhat = np.zeros_like(mb.dec_in)
    for t in range(Td):
        if cfg.attention:
            weights, ctx = _attend(s_prev, E, emask)
        else:
            weights, ctx = None, np.zeros((B, H))
        inp = mb.dec_in[:, t]
        step_caches = []
        for k, p in enumerate(cells):
            hs[k], cs[k], cache = _cell_forward(inp, hs[k], cs[k], p)
            step_caches.append(cache)
            inp = hs[k]
        feat = np.concatenate([hs[-1], ctx], axis=1)
        yhat[:, t] = feat @ params["out.W"].T + params["out.b"]
        steps.append({"s_prev": s_prev, "weights": weights, "feat": feat, "caches": step_caches})
        s_prev = hs[-1]

    n_terms = N_FEATURES * max(int(mb.dec_mask.sum()), 1)
    resid = (yhat - mb.dec_target) * mb.dec_mask[:, :, None]
    loss = float(np.sum(resid * resid) / n_terms)
    return loss, {"enc": enc, "h0": h0, "steps": steps, "resid": resid, "n_terms": n_terms}


def batch_loss(params, cfg: TrainConfig, mb: ModelBatch) -> float:
    return _forward(params, cfg, mb)[0]


def loss_and_grads(params, cfg: TrainConfig, mb: ModelBatch):
    """Masked MSE and its gradient with respect to every parameter tensor."""
    loss, fw = _forward(params, cfg, mb)
    grads = {name: np.zeros_like(v) for name, v in params.items()}
    enc = fw["enc"]
    E, z = enc["states"], enc["z"]
    B, Te, H = E.shape
    Ld = cfg.decoder_layers
    cells = [_cell(params, f"dec{k}") for k in range(Ld)]

    dE = np.zeros_like(E)
    dh = [np.zeros((B, H)) for _ in range(Ld)]
    dc = [np.zeros((B, H)) for _ in range(Ld)]
    scale = 2.0 / fw["n_terms"]
    for t in reversed(range(len(fw["steps"]))):
        step = fw["steps"][t]
        dy = scale * fw["resid"][:, t]
        grads["out.W"] += dy.T @ step["feat"]
        grads["out.b"] += dy.sum(axis=0)
        dfeat = dy @ params["out.W"]
        dh[-1] = dh[-1] + dfeat[:, :H]
        dctx = dfeat[:, H:]

        dx = None
        for k in reversed(range(Ld)):
            dh_k = dh[k] if dx is None else dh[k] + dx
            pre = f"dec{k}"
            dx, dh[k], dc[k] = _cell_backward(
                step["caches"][k], dh_k, dc[k], cells[k], grads[pre + ".W"], grads[pre + ".U"], grads[pre + ".b"]
            )

        if cfg.attention:
            w = step["weights"]
            dE += w[:, :, None] * dctx[:, None, :]
            dw = np.einsum("bh,bth->bt", dctx, E)
            dscore = w * (dw - np.sum(w * dw, axis=1, keepdims=True))
            dh[-1] = dh[-1] + np.einsum("bt,bth->bh", dscore, E)
            dE += dscore[:, :, None] * step["s_prev"][:, None, :]

    dz = np.zeros_like(z)
    for k in range(Ld):
        da = dh[k] * (1.0 - fw["h0"][k] ** 2)
        grads[f"init{k}.W"] += da.T @ z
        grads[f"init{k}.b"] += da.sum(axis=0)
        dz += da @ params[f"init{k}.W"]

    du = dz * z * (1.0 - z)
    grads["latent.W"] += du.T @ enc["p"]
    grads["latent.b"] += du.sum(axis=0)
    dq = (du @ params["latent.W"]) * (enc["q"] > 0)
    grads["proj.W"] += dq.T @ enc["final"]
    grads["proj.b"] += dq.sum(axis=0)
    d_final = dq @ params["proj.W"]

    mask = enc["mask"]
    d_out = dE
    for k in reversed(range(cfg.encoder_layers)):
        pre = f"enc{k}"
        p = _cell(params, pre)
        caches = enc["caches"][k]
        dh_c = d_final if k == cfg.encoder_layers - 1 else np.zeros((B, H))
        dc_c = np.zeros((B, H))
        d_in = np.zeros((B, Te, caches[0][0].shape[1]))
        for t in reversed(range(Te)):
            dh_c = dh_c + d_out[:, t]
            m = mask[:, t, None]
            dx, dh_prev, dc_prev = _cell_backward(
                caches[t], dh_c * m, dc_c * m, p, grads[pre + ".W"], grads[pre + ".U"], grads[pre + ".b"]
            )
            d_in[:, t] = dx
            dh_c = np.where(m, dh_prev, dh_c)
            dc_c = np.where(m, dc_prev, dc_c)
        d_out = d_in
    return loss, grads


# --------------------------------------------------------------------------
# per-customer inference API


def encode(rows, length: int, params, cfg: TrainConfig) -> EncoderOutput:
    """Encode the first ``length`` rows of one customer's (normalised) matrix."""
    rows = np.asarray(rows, dtype=float).reshape(-1, N_FEATURES)
    if length < 1:
        raise ValueError("cannot encode an empty sequence")
    if length > len(rows):
        raise ValueError(f"length {length} exceeds the {len(rows)} available rows")
    enc = _encode_batch(params, cfg, rows[None, :length], np.array([length]))
    return EncoderOutput(enc["states"][0], enc["z"][0])


@dataclass
class DecoderState:
    h: list[np.ndarray]
    c: list[np.ndarray]

    @classmethod
    def initial(cls, latent, params, cfg: TrainConfig):
        h = [np.tanh(params[f"init{k}.W"] @ latent + params[f"init{k}.b"]) for k in range(cfg.decoder_layers)]
        return cls(h, [np.zeros(cfg.hidden_size) for _ in range(cfg.decoder_layers)])


def attention_weights(s_prev, encoder_hidden_states):
    """Softmax of dot-product scores of one decoder state against encoder states."""
    states = np.asarray(encoder_hidden_states, dtype=float)
    weights, _ = _attend(np.asarray(s_prev, float)[None], states[None], np.ones((1, len(states)), bool))
    return weights[0]


def decode_step(y_prev, state: DecoderState, encoder_hidden_states, params, cfg: TrainConfig):
    """Advance the decoder by one step.

    Returns ``(y_hat, new_state, weights)``; ``weights`` is None when
    attention is disabled.
    """
    H = cfg.hidden_size
    E = np.asarray(encoder_hidden_states, dtype=float)
    if cfg.attention:
        weights, ctx = _attend(state.h[-1][None], E[None], np.ones((1, len(E)), bool))
        weights, ctx = weights[0], ctx[0]
    else:
        weights, ctx = None, np.zeros(H)
    inp = np.asarray(y_prev, dtype=float)
    hs, cs = [], []
    for k in range(cfg.decoder_layers):
        h, c = lstm_cell_forward(inp, state.h[k], state.c[k], _cell(params, f"dec{k}"))
        hs.append(h)
        cs.append(c)
        inp = h
    y_hat = params["out.W"] @ np.concatenate([hs[-1], ctx]) + params["out.b"]
    return y_hat, DecoderState(hs, cs), weights


# --------------------------------------------------------------------------
# gradient check


def gradient_errors(params, cfg: TrainConfig, mb: ModelBatch, step: float = 1e-5):
    """Per-tensor relative error between analytic and central-difference gradients.

    The error of a tensor is ``|g_a - g_n| / (|g_a| + |g_n|)`` in the
    Frobenius norm, and 0 when both gradients vanish.
    """
    _, analytic = loss_and_grads(params, cfg, mb)
    work = {k: v.copy() for k, v in params.items()}
    errors = {}
    for name, value in work.items():
        numeric = np.zeros_like(value)
        flat, nflat = value.reshape(-1), numeric.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            plus = batch_loss(work, cfg, mb)
            flat[idx] = orig - step
            minus = batch_loss(work, cfg, mb)
            flat[idx] = orig
            nflat[idx] = (plus - minus) / (2 * step)
        denom = np.linalg.norm(analytic[name]) + np.linalg.norm(numeric)
        errors[name] = 0.0 if denom < 1e-12 else float(np.linalg.norm(analytic[name] - numeric) / denom)
    return errors


def gradient_check(params, tiny_batch: ModelBatch, cfg: TrainConfig, step: float = 1e-5) -> float:
    """Largest per-tensor relative gradient error (see :func:`gradient_errors`)."""
    return max(gradient_errors(params, cfg, tiny_batch, step).values())


# --------------------------------------------------------------------------
# training


def split_indices(n: int, fractions, seed: int):
    """Deterministic train/test/validation split of ``range(n)``."""
    perm = np.random.default_rng(seed).permutation(n)
    n_train = max(1, int(round(fractions[0] * n)))
    n_test = min(int(round(fractions[1] * n)), n - n_train)
    return np.sort(perm[:n_train]), np.sort(perm[n_train : n_train + n_test]), np.sort(perm[n_train + n_test :])


def _global_norm(grads):
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    history: list[LossRecord]
    split: tuple[np.ndarray, np.ndarray, np.ndarray]
    test_loss: float | None = None
    config: TrainConfig = field(default_factory=TrainConfig)

    @property
    def best_epoch(self):
        """Epoch with the lowest validation loss (reported only; training never stops early)."""
        scored = [r for r in self.history if r.val_loss is not None]
        return min(scored, key=lambda r: (r.val_loss, r.epoch)).epoch if scored else None


def train(batch: PaddedSequenceBatch, cfg: TrainConfig = TrainConfig()) -> TrainResult:
    """Fit the autoencoder on a normalised batch by teacher forcing.

    Customers are split by ``cfg.split`` (train/test/validation).  Each
    epoch runs minibatch gradient descent over the shuffled training set.
    If the full training loss rises, the epoch is rolled back and the
    learning rate halved, so the recorded training loss never increases.
    """
    cfg.validate(batch.max_len)
    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    init_rng, shuffle_rng = (np.random.default_rng(s) for s in seeds)
    train_idx, test_idx, val_idx = split_indices(len(batch), cfg.split, cfg.seed)
    params = init_params(cfg, init_rng)

    full_train = ModelBatch.from_padded(batch, train_idx)
    val_mb = ModelBatch.from_padded(batch, val_idx) if len(val_idx) else None
    lr = cfg.learning_rate
    prev = batch_loss(params, cfg, full_train)
    if not math.isfinite(prev):
        raise TrainingDivergedError(0, None, "initial loss is not finite")
    history = [LossRecord(0, prev, _maybe_loss(params, cfg, val_mb), lr)]

    for epoch in range(1, cfg.epochs + 1):
        snapshot = {k: v.copy() for k, v in params.items()}
        order = shuffle_rng.permutation(train_idx)
        for start in range(0, len(order), cfg.batch_size):
            mb = ModelBatch.from_padded(batch, np.sort(order[start : start + cfg.batch_size]))
            loss, grads = loss_and_grads(params, cfg, mb)
            norm = _global_norm(grads)
            if not (math.isfinite(loss) and math.isfinite(norm)):
                raise TrainingDivergedError(epoch, history[-1].epoch)
            factor = lr
            if cfg.clip_norm is not None and norm > cfg.clip_norm:
                factor = lr * cfg.clip_norm / norm
            for name, g in grads.items():
                params[name] -= factor * g

        current = batch_loss(params, cfg, full_train)
        if not math.isfinite(current):
            raise TrainingDivergedError(epoch, history[-1].epoch)
        accepted = current <= prev
        if accepted:
            prev = current
        else:
            params = snapshot
            lr /= 2
            log.debug("epoch %d: loss rose to %s, rolled back (lr -> %g)", epoch, current, lr)
        history.append(LossRecord(epoch, prev, _maybe_loss(params, cfg, val_mb), lr, accepted))
        log.info("epoch %d train=%.5f lr=%g", epoch, prev, lr)

    test_mb = ModelBatch.from_padded(batch, test_idx) if len(test_idx) else None
    return TrainResult(params, history, (train_idx, test_idx, val_idx), _maybe_loss(params, cfg, test_mb), cfg)


# small configuration that reliably fits the copy task below
COPY_TASK_CONFIG = TrainConfig(
    hidden_size=16,
    encoder_layers=1,
    decoder_layers=1,
    dense_size=16,
    latent_dim=2,
    learning_rate=1.0,
    epochs=200,
    batch_size=5,
    seed=0,
    split=(1.0, 0.0, 0.0),
)


def copy_task_batch(n: int = 5, length: int = 3, seed: int = 7) -> PaddedSequenceBatch:
    """``n`` random standard-normal sequences, z-scored, for reconstruction sanity checks."""
    rng = np.random.default_rng(seed)
    raw = PaddedSequenceBatch.from_rows([rng.normal(size=(length, N_FEATURES)) for _ in range(n)])
    return apply_zscore(raw, fit_zscore(raw))


def _maybe_loss(params, cfg, mb):
    return None if mb is None else batch_loss(params, cfg, mb)


def extract_features(batch: PaddedSequenceBatch, params, cfg: TrainConfig, chunk: int = 256) -> FeatureMatrix:
    """Latent vector of every customer, one row each, in batch order."""
    rows = []
    for start in range(0, len(batch), chunk):
        idx = slice(start, start + chunk)
        lengths = batch.lengths[idx]
        if np.any(lengths < 1):
            raise ValueError("every customer needs at least one transaction")
        te = int(lengths.max())
        rows.append(_encode_batch(params, cfg, batch.tensor[idx, :te], lengths)["z"])
    values = np.vstack(rows) if rows else np.zeros((0, cfg.latent_dim))
    ids = batch.customer_ids or tuple(str(i) for i in range(len(batch)))
    return FeatureMatrix(values, ids, "lstm")


# --------------------------------------------------------------------------
# persistence


def save_checkpoint(params, cfg: TrainConfig, zscore: ZScoreParams | None = None) -> bytes:
    """JSON checkpoint; tensors are stored flat (row-major) in ``param_names`` order."""
    names = param_names(cfg)
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "seed": cfg.seed,
        "config": asdict(cfg),
        "param_order": names,
        "params": [{"name": n, "shape": list(params[n].shape), "data": params[n].ravel().tolist()} for n in names],
        "zscore": zscore.to_dict() if zscore is not None else None,
    }
    return json.dumps(doc, indent=1).encode()


def load_checkpoint(data: bytes | str):
    """Inverse of :func:`save_checkpoint`; returns ``(params, cfg, zscore)``."""
    doc = json.loads(data)
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError("not a supported seq2seq checkpoint")
    raw = dict(doc["config"])
    raw["split"] = tuple(raw["split"])
    cfg = TrainConfig(**raw)
    expected = param_shapes(cfg)
    params = {}
    for entry in doc["params"]:
        shape = tuple(entry["shape"])
        if expected.get(entry["name"]) != shape:
            raise ValueError(f"checkpoint tensor {entry['name']} has unexpected shape {shape}")
        params[entry["name"]] = np.array(entry["data"], dtype=float).reshape(shape)
    if list(params) != list(expected):
        raise ValueError("checkpoint tensors do not match the configured architecture")
    zscore = ZScoreParams.from_dict(doc["zscore"]) if doc.get("zscore") else None
    return params, cfg, zscore


def loss_to_csv(history) -> bytes:
    buf = io.StringIO()
    buf.write("epoch,train_loss,val_loss,learning_rate,accepted\n")
    for rec in history:
        val = "" if rec.val_loss is None else repr(rec.val_loss)
        buf.write(f"{rec.epoch},{rec.train_loss!r},{val},{rec.learning_rate!r},{int(rec.accepted)}\n")
    return buf.getvalue().encode()
