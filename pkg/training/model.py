"""Toy pre-norm transformer encoder with per-head gates and manual backpropagation.

Every weight matrix is a "site" named like ``layers.0.attn.q`` whose weight lives in
``params["layers.0.attn.q.weight"]``. Attention sites may carry a SparseLowRankUpdate
and any site may carry an UnstructuredMask; both are applied by the adapter kernels.
"""

import copy
import hashlib
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import TuningMode, Projection
from core.adapter import SparseLowRankUpdate, UnstructuredMask, forward_rows, backward_rows
from core.exceptions import InputError, ShapeError, TrainingError
from utils.models import ToyTransformerConfig

logger = logging.getLogger(__name__)

LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)

ATTENTION_PROJECTIONS = tuple(p.value for p in Projection)


@dataclass
class GradientSet:
    """Gradients keyed by parameter name."""
    grads: Dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.grads[name]

    def __contains__(self, name: str) -> bool:
        return name in self.grads

    def keys(self):
        return self.grads.keys()

    def items(self):
        return self.grads.items()

    def validate(self, params: Dict[str, np.ndarray]) -> None:
        """Check shapes against params and that every entry is finite.

        Raises:
            TrainingError: On a missing, misshapen or non-finite gradient.
        """
        for name, param in params.items():
            grad = self.grads.get(name)
            if grad is None:
                raise TrainingError(f"No gradient for trainable parameter {name}")
            if grad.shape != param.shape:
                raise TrainingError(f"Gradient for {name} has shape {grad.shape}, expected {param.shape}")
            if not np.all(np.isfinite(grad)):
                raise TrainingError(f"Non-finite gradient for {name}")


def _layernorm_fwd(x, scale, shift):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv
    return xhat * scale + shift, (xhat, inv)


def _layernorm_bwd(dy, cache, scale):
    xhat, inv = cache
    axes = tuple(range(dy.ndim - 1))
    dscale = (dy * xhat).sum(axis=axes)
    dshift = dy.sum(axis=axes)
    dxhat = dy * scale
    d = dy.shape[-1]
    dx = inv / d * (
        d * dxhat
        - dxhat.sum(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
    )
    return dx, dscale, dshift


def _gelu(z):
    t = np.tanh(_GELU_C * (z + 0.044715 * z ** 3))
    return 0.5 * z * (1.0 + t), t


def _gelu_grad(z, t):
    return 0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * z * z)


def _softmax(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def loss(logits: np.ndarray, labels: np.ndarray, gates: Sequence[np.ndarray], lambda_l1: float) -> float:
    """Mean cross-entropy plus lambda times the l1 norm of every layer's gates."""
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise ShapeError(f"Labels {labels.shape} do not match logits {logits.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise InputError("Label out of range")
    logp = _log_softmax(logits.astype(np.float64))
    ce = -float(logp[np.arange(labels.shape[0]), labels].mean())
    penalty = sum(float(np.abs(np.asarray(c, dtype=np.float64)).sum()) for c in gates)
    return ce + lambda_l1 * penalty


def count_model_params(
    cfg: ToyTransformerConfig,
    kept_heads: Optional[Sequence[int]] = None,
    kept_ffn: Optional[Sequence[int]] = None,
) -> int:
    """Number of host parameters (updates excluded) for the given per-layer widths."""
    kept_heads = kept_heads or [cfg.n_heads] * cfg.n_layers
    kept_ffn = kept_ffn or [cfg.d_ff] * cfg.n_layers
    d = cfg.d_model
    total = cfg.vocab_size * d + cfg.seq_len * d
    for heads, units in zip(kept_heads, kept_ffn):
        attn = heads * cfg.head_dim
        total += 2 * d + 4 * attn * d + heads
        total += 2 * d + 2 * units * d + units + d
    total += 2 * d + cfg.n_classes * d + cfg.n_classes
    return int(total)


def head_param_count(cfg: ToyTransformerConfig, kept_heads: Sequence[int], include_gates: bool) -> int:
    """Classifier parameters, plus gates when they are trained."""
    count = cfg.n_classes * cfg.d_model + cfg.n_classes
    if include_gates:
        count += int(sum(kept_heads))
    return int(count)


class ToyTransformer:
    """Pre-norm encoder: embeddings, attention + GELU FFN blocks, mean pooling, linear classifier."""

    def __init__(
        self,
        cfg: ToyTransformerConfig,
        params: Dict[str, np.ndarray],
        updates: Optional[Dict[str, SparseLowRankUpdate]] = None,
        masks: Optional[Dict[str, UnstructuredMask]] = None,
        kept_heads: Optional[List[np.ndarray]] = None,
        kept_ffn: Optional[List[np.ndarray]] = None,
    ):
        self.cfg = cfg
        self.params = params
        self.updates: Dict[str, SparseLowRankUpdate] = updates or {}
        self.masks: Dict[str, UnstructuredMask] = masks or {}
        self.kept_heads = kept_heads or [np.arange(cfg.n_heads, dtype=np.int64) for _ in range(cfg.n_layers)]
        self.kept_ffn = kept_ffn or [np.arange(cfg.d_ff, dtype=np.int64) for _ in range(cfg.n_layers)]

    @classmethod
    def init(cls, cfg: ToyTransformerConfig, seed: int, dtype=np.float32) -> "ToyTransformer":
        """Randomly initialised model; gates start at 1.0."""
        rng = np.random.Generator(np.random.PCG64(seed))
        d = cfg.d_model

        def normal(shape, std):
            return (rng.standard_normal(shape) * std).astype(dtype)

        params: Dict[str, np.ndarray] = {
            "embed.tokens": normal((cfg.vocab_size, d), 0.5),
            "embed.positions": normal((cfg.seq_len, d), 0.5),
        }
        for layer in range(cfg.n_layers):
            p = f"layers.{layer}."
            params[p + "ln1.scale"] = np.ones(d, dtype=dtype)
            params[p + "ln1.shift"] = np.zeros(d, dtype=dtype)
            for proj in ATTENTION_PROJECTIONS:
                params[p + f"attn.{proj}.weight"] = normal((d, d), 1.0 / math.sqrt(d))
            params[p + "attn.gates"] = np.ones(cfg.n_heads, dtype=dtype)
            params[p + "ln2.scale"] = np.ones(d, dtype=dtype)
            params[p + "ln2.shift"] = np.zeros(d, dtype=dtype)
            params[p + "ffn.in.weight"] = normal((cfg.d_ff, d), 1.0 / math.sqrt(d))
            params[p + "ffn.in.bias"] = np.zeros(cfg.d_ff, dtype=dtype)
            params[p + "ffn.out.weight"] = normal((d, cfg.d_ff), 1.0 / math.sqrt(cfg.d_ff))
            params[p + "ffn.out.bias"] = np.zeros(d, dtype=dtype)
        params["final_ln.scale"] = np.ones(d, dtype=dtype)
        params["final_ln.shift"] = np.zeros(d, dtype=dtype)
        params["classifier.weight"] = normal((cfg.n_classes, d), 1.0 / math.sqrt(d))
        params["classifier.bias"] = np.zeros(cfg.n_classes, dtype=dtype)
        return cls(cfg, params)

    @property
    def dtype(self):
        return self.params["embed.tokens"].dtype

    def copy(self) -> "ToyTransformer":
        return copy.deepcopy(self)

    def astype(self, dtype) -> "ToyTransformer":
        """Copy with every tensor cast to dtype."""
        clone = self.copy()
        clone.params = {k: v.astype(dtype) for k, v in clone.params.items()}
        clone.updates = {k: u.astype(dtype) for k, u in clone.updates.items()}
        return clone

    def site_names(self) -> List[str]:
        names = []
        for layer in range(self.cfg.n_layers):
            names.extend(f"layers.{layer}.attn.{proj}" for proj in ATTENTION_PROJECTIONS)
            names.extend([f"layers.{layer}.ffn.in", f"layers.{layer}.ffn.out"])
        return names

    def gates(self) -> List[np.ndarray]:
        return [self.params[f"layers.{layer}.attn.gates"] for layer in range(self.cfg.n_layers)]

    def heads_per_layer(self) -> List[int]:
        return [int(g.shape[0]) for g in self.gates()]

    def ffn_units_per_layer(self) -> List[int]:
        return [int(self.params[f"layers.{layer}.ffn.in.bias"].shape[0]) for layer in range(self.cfg.n_layers)]

    def dense_checksum(self) -> str:
        """sha256 over every pretrained tensor (gates and classifier excluded)."""
        digest = hashlib.sha256()
        for name in sorted(self.params):
            if name.startswith("classifier.") or name.endswith(".gates"):
                continue
            digest.update(name.encode("utf-8"))
            digest.update(np.ascontiguousarray(self.params[name]).tobytes())
        return digest.hexdigest()

    def parameter_views(self, mode=TuningMode.ADAPTER, train_gates: bool = False) -> Dict[str, np.ndarray]:
        """Trainable arrays by name; updating them in place updates the model.

        Adapter mode exposes every update's u, v, s2 and the classifier; full mode
        additionally exposes every host tensor. Gates are included only when
        train_gates is set.
        """
        mode = TuningMode(mode)
        views: Dict[str, np.ndarray] = {}
        for name, param in self.params.items():
            if name.endswith(".gates"):
                if train_gates:
                    views[name] = param
            elif mode is TuningMode.FULL or name.startswith("classifier."):
                views[name] = param
        for site, upd in self.updates.items():
            views[f"{site}.u"] = upd.u
            views[f"{site}.v"] = upd.v
            views[f"{site}.s2"] = upd.s2_values
        return views

    def trainable_count(self, mode=TuningMode.ADAPTER, train_gates: bool = False) -> int:
        return int(sum(v.size for v in self.parameter_views(mode, train_gates).values()))

    def _check_tokens(self, tokens: np.ndarray) -> np.ndarray:
        tokens = np.asarray(tokens)
        if tokens.ndim != 2 or tokens.shape[1] < 1 or tokens.shape[1] > self.cfg.seq_len:
            raise InputError(f"Tokens must be (batch, <= {self.cfg.seq_len}), got {tokens.shape}")
        if not np.issubdtype(tokens.dtype, np.integer):
            raise InputError("Tokens must be integers")
        if tokens.size and (tokens.min() < 0 or tokens.max() >= self.cfg.vocab_size):
            raise InputError(f"Token id out of range [0, {self.cfg.vocab_size})")
        return tokens

    def _site(self, name: str, x: np.ndarray) -> np.ndarray:
        return forward_rows(x, self.params[f"{name}.weight"], self.masks.get(name), self.updates.get(name))

    def _forward(self, tokens: np.ndarray):
        cfg = self.cfg
        P = self.params
        B, T = tokens.shape
        d, dh = cfg.d_model, cfg.head_dim
        scale = 1.0 / math.sqrt(dh)

        h = P["embed.tokens"][tokens] + P["embed.positions"][:T]
        caches = []
        for layer in range(cfg.n_layers):
            p = f"layers.{layer}."
            gates = P[p + "attn.gates"]
            H = gates.shape[0]

            a, ln1 = _layernorm_fwd(h, P[p + "ln1.scale"], P[p + "ln1.shift"])
            x = a.reshape(B * T, d)
            q = self._site(p + "attn.q", x).reshape(B, T, H, dh).transpose(0, 2, 1, 3)
            k = self._site(p + "attn.k", x).reshape(B, T, H, dh).transpose(0, 2, 1, 3)
            v = self._site(p + "attn.v", x).reshape(B, T, H, dh).transpose(0, 2, 1, 3)
            probs = _softmax((q @ k.transpose(0, 1, 3, 2)) * scale)
            ctx = probs @ v
            gated = ctx * gates[None, :, None, None]
            cat = gated.transpose(0, 2, 1, 3).reshape(B * T, H * dh)
            h_mid = h + self._site(p + "attn.o", cat).reshape(B, T, d)

            b, ln2 = _layernorm_fwd(h_mid, P[p + "ln2.scale"], P[p + "ln2.shift"])
            xb = b.reshape(B * T, d)
            z = self._site(p + "ffn.in", xb) + P[p + "ffn.in.bias"]
            gz, t = _gelu(z)
            f = self._site(p + "ffn.out", gz) + P[p + "ffn.out.bias"]
            h = h_mid + f.reshape(B, T, d)

            caches.append({
                "ln1": ln1, "x": x, "q": q, "k": k, "v": v, "probs": probs, "ctx": ctx,
                "cat": cat, "ln2": ln2, "xb": xb, "z": z, "t": t, "gz": gz,
            })

        hf, lnf = _layernorm_fwd(h, P["final_ln.scale"], P["final_ln.shift"])
        pooled = hf.mean(axis=1)
        logits = pooled @ P["classifier.weight"].T + P["classifier.bias"]
        return logits, {"layers": caches, "lnf": lnf, "pooled": pooled, "shape": (B, T)}

    def forward_logits(self, tokens: np.ndarray) -> np.ndarray:
        """Logits of shape (batch, n_classes).

        Raises:
            InputError: If a token id is out of range or the batch is malformed.
        """
        logits, _ = self._forward(self._check_tokens(tokens))
        return logits

    def predict(self, tokens: np.ndarray) -> np.ndarray:
        return np.argmax(self.forward_logits(tokens), axis=1)

    def accuracy(self, tokens: np.ndarray, labels: np.ndarray, batch_size: int = 256) -> float:
        if len(labels) == 0:
            return 0.0
        correct = 0
        for start in range(0, len(labels), batch_size):
            preds = self.predict(tokens[start:start + batch_size])
            correct += int(np.sum(preds == labels[start:start + batch_size]))
        return correct / len(labels)

    def _site_backward(self, name, x, grad_out, need_weight, grads):
        grad_x, grad_w, grad_u, grad_v, grad_s2 = backward_rows(
            x, grad_out, self.params[f"{name}.weight"], self.masks.get(name),
            self.updates.get(name), need_weight_grad=need_weight,
        )
        if grad_w is not None:
            grads[f"{name}.weight"] = grad_w
        if grad_u is not None:
            grads[f"{name}.u"] = grad_u
            grads[f"{name}.v"] = grad_v
            grads[f"{name}.s2"] = grad_s2
        return grad_x

    def backward(
        self,
        tokens: np.ndarray,
        labels: np.ndarray,
        lambda_l1: float = 0.0,
        mode=TuningMode.ADAPTER,
        train_gates: bool = False,
    ) -> Tuple[float, GradientSet]:
        """Loss and exact gradients of every trainable parameter.

        The subgradient of |c| at zero is taken as zero.
        """
        mode = TuningMode(mode)
        full = mode is TuningMode.FULL
        tokens = self._check_tokens(tokens)
        labels = np.asarray(labels)
        logits, cache = self._forward(tokens)
        value = loss(logits, labels, self.gates(), lambda_l1)

        cfg = self.cfg
        P = self.params
        B, T = cache["shape"]
        d, dh = cfg.d_model, cfg.head_dim
        scale = 1.0 / math.sqrt(dh)
        grads: Dict[str, np.ndarray] = {}

        probs_out = _softmax(logits)
        dlogits = probs_out
        dlogits[np.arange(B), labels] -= 1.0
        dlogits /= B
        grads["classifier.weight"] = dlogits.T @ cache["pooled"]
        grads["classifier.bias"] = dlogits.sum(axis=0)
        dpooled = dlogits @ P["classifier.weight"]
        dhf = np.broadcast_to(dpooled[:, None, :] / T, (B, T, d))
        dh_, grads["final_ln.scale"], grads["final_ln.shift"] = _layernorm_bwd(dhf, cache["lnf"], P["final_ln.scale"])

        for layer in reversed(range(cfg.n_layers)):
            p = f"layers.{layer}."
            c = cache["layers"][layer]
            gates = P[p + "attn.gates"]
            H = gates.shape[0]

            df = dh_.reshape(B * T, d)
            grads[p + "ffn.out.bias"] = df.sum(axis=0)
            dgz = self._site_backward(p + "ffn.out", c["gz"], df, full, grads)
            dz = dgz * _gelu_grad(c["z"], c["t"])
            grads[p + "ffn.in.bias"] = dz.sum(axis=0)
            dxb = self._site_backward(p + "ffn.in", c["xb"], dz, full, grads)
            db, grads[p + "ln2.scale"], grads[p + "ln2.shift"] = _layernorm_bwd(
                dxb.reshape(B, T, d), c["ln2"], P[p + "ln2.scale"])
            dh_mid = dh_ + db

            dcat = self._site_backward(p + "attn.o", c["cat"], dh_mid.reshape(B * T, d), full, grads)
            dgated = dcat.reshape(B, T, H, dh).transpose(0, 2, 1, 3)
            dgates = (dgated * c["ctx"]).sum(axis=(0, 2, 3))
            grads[p + "attn.gates"] = dgates + lambda_l1 * np.sign(gates)
            dctx = dgated * gates[None, :, None, None]
            probs = c["probs"]
            dprobs = dctx @ c["v"].transpose(0, 1, 3, 2)
            dv = probs.transpose(0, 1, 3, 2) @ dctx
            dscores = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True)) * scale
            dq = dscores @ c["k"]
            dk = dscores.transpose(0, 1, 3, 2) @ c["q"]

            def flat(t):
                return t.transpose(0, 2, 1, 3).reshape(B * T, H * dh)

            dx = self._site_backward(p + "attn.q", c["x"], flat(dq), full, grads)
            dx = dx + self._site_backward(p + "attn.k", c["x"], flat(dk), full, grads)
            dx = dx + self._site_backward(p + "attn.v", c["x"], flat(dv), full, grads)
            da, grads[p + "ln1.scale"], grads[p + "ln1.shift"] = _layernorm_bwd(
                dx.reshape(B, T, d), c["ln1"], P[p + "ln1.scale"])
            dh_ = dh_mid + da

        if full:
            dtok = np.zeros_like(P["embed.tokens"])
            np.add.at(dtok, tokens, dh_)
            grads["embed.tokens"] = dtok
            dpos = np.zeros_like(P["embed.positions"])
            dpos[:T] = dh_.sum(axis=0)
            grads["embed.positions"] = dpos

        wanted = self.parameter_views(mode, train_gates)
        selected = {name: np.asarray(grads[name], dtype=wanted[name].dtype) for name in wanted if name in grads}
        return value, GradientSet(selected)
