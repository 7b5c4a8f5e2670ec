"""Toy decoder-only Transformer over context tuples, trained to predict the next trade token."""

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .errors import CorruptFile, DivergedLoss, FormatVersionError, IndexOutOfVocab, NonFiniteLoss, SequenceTooLong

CHECKPOINT_HEADER = b"orderflow-toy v1\n"
LOSS_HEADER = ("step", "train_loss", "val_loss")


@dataclass
class ModelConfig:
    n_layers: int = 2
    hidden_dim: int = 64
    n_heads: int = 4
    n_kv_heads: int = 2
    context_length: int = 128
    vocab_trade: int = 16384
    n_liquidity: int = 3
    n_scope: int = 2
    n_price_level: int = 32
    emb_trade: int = 48
    emb_price_level: int = 8
    emb_liquidity: int = 4
    emb_scope: int = 4
    rope_base: float = 10000.0
    use_rope: bool = True
    zero_init_head: bool = True
    dtype: str = "float32"

    def __post_init__(self):
        if self.n_heads % self.n_kv_heads:
            raise ValueError("n_heads must be divisible by n_kv_heads")
        if self.hidden_dim % self.n_heads or (self.hidden_dim // self.n_heads) % 2:
            raise ValueError("head_dim must be an even integer")

    @property
    def head_dim(self):
        return self.hidden_dim // self.n_heads

    @property
    def mlp_dim(self):
        return 4 * self.hidden_dim

    @property
    def bos_token(self):
        """Extra trade-embedding row that marks the start of a window."""
        return self.vocab_trade

    @property
    def torch_dtype(self):
        return getattr(torch, self.dtype)


@dataclass
class SamplerConfig:
    repetition_penalty: float = 1.2
    penalty_window: int | None = None  # None: whole generated history
    temperature: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.repetition_penalty < 1:
            raise ValueError("repetition_penalty must be >= 1")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")


@dataclass
class TrainConfig:
    steps: int = 1000
    batch_size: int = 16
    lr: float = 3e-3
    weight_decay: float = 0.01
    betas: tuple = (0.9, 0.95)
    warmup: int = 50
    val_fraction: float = 0.1
    eval_every: int = 100
    eval_batches: int = 8
    grad_clip: float = 1.0
    seed: int = 0
    threads: int = 1
    diverge_loss: float = 1e3


# -- layers -------------------------------------------------------------------

class RMSNorm(nn.Module):
    def __init__(self, dim, eps=1e-6):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(dim))

    def forward(self, x):
        return x * torch.rsqrt(x.pow(2).mean(-1, keepdim=True) + self.eps) * self.weight


def rope_tables(length, head_dim, base, dtype):
    inv = 1.0 / base ** (torch.arange(0, head_dim, 2, dtype=torch.float64) / head_dim)
    ang = torch.arange(length, dtype=torch.float64)[:, None] * inv[None, :]
    return torch.cos(ang).to(dtype), torch.sin(ang).to(dtype)


def apply_rope(x, cos, sin):
    """Rotate interleaved pairs of the last axis; x is (B, T, H, D), tables (T, D/2)."""
    x1, x2 = x[..., 0::2], x[..., 1::2]
    c, s = cos[None, :, None, :], sin[None, :, None, :]
    out = torch.stack((x1 * c - x2 * s, x1 * s + x2 * c), dim=-1)
    return out.flatten(-2)


class Attention(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        hd = cfg.head_dim
        self.q = nn.Linear(cfg.hidden_dim, cfg.n_heads * hd, bias=False)
        self.k = nn.Linear(cfg.hidden_dim, cfg.n_kv_heads * hd, bias=False)
        self.v = nn.Linear(cfg.hidden_dim, cfg.n_kv_heads * hd, bias=False)
        self.o = nn.Linear(cfg.n_heads * hd, cfg.hidden_dim, bias=False)

    def forward(self, x, cos, sin):
        cfg = self.cfg
        b, t, _ = x.shape
        hd = cfg.head_dim
        q = self.q(x).view(b, t, cfg.n_heads, hd)
        k = self.k(x).view(b, t, cfg.n_kv_heads, hd)
        v = self.v(x).view(b, t, cfg.n_kv_heads, hd)
        if cfg.use_rope:
            q, k = apply_rope(q, cos, sin), apply_rope(k, cos, sin)
        group = cfg.n_heads // cfg.n_kv_heads
        k = k.repeat_interleave(group, dim=2)
        v = v.repeat_interleave(group, dim=2)
        q, k, v = (z.transpose(1, 2) for z in (q, k, v))
        scores = q @ k.transpose(-1, -2) / math.sqrt(hd)
        mask = torch.ones(t, t, dtype=torch.bool, device=x.device).triu(1)
        scores = scores.masked_fill(mask, float("-inf"))
        out = torch.softmax(scores, dim=-1) @ v
        return self.o(out.transpose(1, 2).reshape(b, t, cfg.n_heads * hd))


class MLP(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.up = nn.Linear(cfg.hidden_dim, cfg.mlp_dim, bias=False)
        self.down = nn.Linear(cfg.mlp_dim, cfg.hidden_dim, bias=False)

    def forward(self, x):
        return self.down(F.silu(self.up(x)))


class Block(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.norm1 = RMSNorm(cfg.hidden_dim)
        self.attn = Attention(cfg)
        self.norm2 = RMSNorm(cfg.hidden_dim)
        self.mlp = MLP(cfg)

    def forward(self, x, cos, sin):
        x = x + self.attn(self.norm1(x), cos, sin)
        return x + self.mlp(self.norm2(x))


class TradeModel(nn.Module):
    """Tabular embedding, pre-norm GQA blocks with RoPE, and a head over trade tokens."""

    def __init__(self, cfg, seed=0):
        super().__init__()
        self.cfg = cfg
        self.emb_liquidity = nn.Embedding(cfg.n_liquidity, cfg.emb_liquidity)
        self.emb_scope = nn.Embedding(cfg.n_scope, cfg.emb_scope)
        self.emb_price_level = nn.Embedding(cfg.n_price_level, cfg.emb_price_level)
        self.emb_trade = nn.Embedding(cfg.vocab_trade + 1, cfg.emb_trade)
        width = cfg.emb_liquidity + cfg.emb_scope + cfg.emb_price_level + cfg.emb_trade
        self.proj = nn.Linear(width, cfg.hidden_dim, bias=False)
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.n_layers))
        self.norm = RMSNorm(cfg.hidden_dim)
        self.head = nn.Linear(cfg.hidden_dim, cfg.vocab_trade, bias=False)
        cos, sin = rope_tables(cfg.context_length, cfg.head_dim, cfg.rope_base, cfg.torch_dtype)
        self.register_buffer("rope_cos", cos, persistent=False)
        self.register_buffer("rope_sin", sin, persistent=False)
        self.to(cfg.torch_dtype)
        self.reset_parameters(seed)

    @property
    def vocab_bounds(self):
        c = self.cfg
        return (c.n_liquidity, c.n_scope, c.n_price_level, c.vocab_trade + 1)

    def reset_parameters(self, seed=0):
        g = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for name, p in self.named_parameters():
                if name.endswith("norm1.weight") or name.endswith("norm2.weight") or name == "norm.weight":
                    p.fill_(1.0)
                elif name.startswith("emb_"):
                    p.copy_(torch.randn(p.shape, generator=g, dtype=torch.float64).to(p.dtype))
                elif name == "head.weight" and self.cfg.zero_init_head:
                    p.zero_()
                else:
                    fan_in = p.shape[1]
                    p.copy_((torch.randn(p.shape, generator=g, dtype=torch.float64) / math.sqrt(fan_in)).to(p.dtype))

    def embed(self, inputs):
        """(B, T, 4) index tensor -> (B, T, hidden) projected tabular embedding."""
        for j, bound in enumerate(self.vocab_bounds):
            col = inputs[..., j]
            if col.numel() and (col.min() < 0 or col.max() >= bound):
                raise IndexOutOfVocab(f"input column {j} outside [0, {bound})")
        e = torch.cat((
            self.emb_liquidity(inputs[..., 0]), self.emb_scope(inputs[..., 1]),
            self.emb_price_level(inputs[..., 2]), self.emb_trade(inputs[..., 3]),
        ), dim=-1)
        return self.proj(e)

    def forward(self, inputs):
        inputs = torch.as_tensor(inputs, dtype=torch.long)
        if inputs.dim() == 2:
            inputs = inputs[None]
        t = inputs.shape[1]
        if t > self.cfg.context_length:
            raise SequenceTooLong(f"length {t} exceeds context {self.cfg.context_length}")
        x = self.embed(inputs)
        cos, sin = self.rope_cos[:t], self.rope_sin[:t]
        for blk in self.blocks:
            x = blk(x, cos, sin)
        return self.head(self.norm(x))


# -- sequences ----------------------------------------------------------------

def bos_row(first, cfg):
    """Start-of-window input row carrying the context fields of the row that follows."""
    row = np.array(first, dtype=np.int64).copy()
    row[3] = cfg.bos_token
    return row


def with_bos(rows, cfg, start=None):
    """Prefix BOS; ``start`` supplies (liquidity, scope, price_level) when ``rows`` is empty."""
    rows = np.asarray(rows, dtype=np.int64).reshape(-1, 4)
    first = rows[0] if len(rows) else (*start, 0)
    return np.vstack([bos_row(first, cfg)[None], rows])


def _batch_tensors(batch):
    """A (B, L, 4) window batch whose first row is BOS -> inputs and trade targets."""
    batch = torch.as_tensor(np.asarray(batch), dtype=torch.long)
    return batch[:, :-1], batch[:, 1:, 3]


def per_sequence_loss(model, batch):
    inputs, targets = _batch_tensors(batch)
    logits = model(inputs)
    ce = F.cross_entropy(logits.reshape(-1, logits.shape[-1]), targets.reshape(-1), reduction="none")
    return ce.view(targets.shape).mean(dim=1)


def loss_and_gradients(model, batch):
    """Mean next-trade-token cross-entropy and the gradient of every parameter."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    model.zero_grad(set_to_none=True)
    loss = per_sequence_loss(model, batch).mean()
    if not torch.isfinite(loss):
        raise NonFiniteLoss(f"loss is {loss.item()}")
    loss.backward()
    grads = {n: p.grad.detach().numpy().copy() for n, p in model.named_parameters()}
    return float(loss.item()), grads


class WindowSampler:
    """Random fixed-length windows from a list of token arrays, each prefixed with BOS."""

    def __init__(self, sequences, length, cfg):
        self.seqs = [np.asarray(s, dtype=np.int64) for s in sequences if len(s) >= length]
        if not self.seqs:
            raise ValueError(f"no sequence has {length} tokens")
        self.length = length
        self.cfg = cfg
        weights = np.array([len(s) - length + 1 for s in self.seqs], dtype=float)
        self.p = weights / weights.sum()

    def window(self, k, start):
        return with_bos(self.seqs[k][start:start + self.length], self.cfg)

    def sample(self, n, rng):
        ks = rng.choice(len(self.seqs), size=n, p=self.p)
        return np.stack([self.window(k, rng.integers(0, len(self.seqs[k]) - self.length + 1)) for k in ks])

    def tiles(self, limit):
        """Deterministic non-overlapping windows, for validation."""
        out = []
        for k, s in enumerate(self.seqs):
            for start in range(0, len(s) - self.length + 1, self.length):
                out.append(self.window(k, start))
                if len(out) == limit:
                    return np.stack(out)
        return np.stack(out)


def split_corpus(sequences, val_fraction):
    """Hold out the tail of every sequence."""
    train, val = [], []
    for s in sequences:
        s = np.asarray(s, dtype=np.int64)
        cut = int(round(len(s) * (1 - val_fraction)))
        train.append(s[:cut])
        val.append(s[cut:])
    return train, val


@dataclass
class TrainResult:
    model: TradeModel
    curve: list = field(default_factory=list)  # (step, train_loss, val_loss)

    def write_curve(self, path):
        write_loss_curve(self.curve, path)


def write_loss_curve(curve, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOSS_HEADER)
        for step, tr, va in curve:
            w.writerow((step, repr(float(tr)), repr(float(va))))


def evaluate(model, batches):
    model.eval()
    with torch.no_grad():
        losses = [per_sequence_loss(model, batches[i:i + 16]) for i in range(0, len(batches), 16)]
    model.train()
    return float(torch.cat(losses).mean())


def lr_at(step, cfg):
    if cfg.warmup and step < cfg.warmup:
        return cfg.lr * (step + 1) / cfg.warmup
    rest = max(1, cfg.steps - cfg.warmup)
    return cfg.lr * max(0.0, 1.0 - (step - cfg.warmup) / rest)


def train(sequences, config=None, train_config=None, model=None):
    """AdamW with linear warmup then linear decay, on BOS-prefixed random windows."""
    cfg = config or ModelConfig()
    tc = train_config or TrainConfig()
    torch.set_num_threads(tc.threads)
    torch.use_deterministic_algorithms(True)
    torch.manual_seed(tc.seed)
    model = model or TradeModel(cfg, seed=tc.seed)
    result = TrainResult(model)
    if tc.steps == 0:
        return result
    length = cfg.context_length - 1
    train_seqs, val_seqs = split_corpus(sequences, tc.val_fraction)
    sampler = WindowSampler(train_seqs, length + 1, cfg)
    val = WindowSampler(val_seqs, length + 1, cfg).tiles(tc.eval_batches * tc.batch_size)
    rng = np.random.default_rng(tc.seed)
    decay = [p for n, p in model.named_parameters() if p.dim() >= 2]
    no_decay = [p for n, p in model.named_parameters() if p.dim() < 2]
    opt = torch.optim.AdamW(
        [{"params": decay, "weight_decay": tc.weight_decay}, {"params": no_decay, "weight_decay": 0.0}],
        lr=tc.lr, betas=tc.betas,
    )
    model.train()
    for step in range(tc.steps):
        for g in opt.param_groups:
            g["lr"] = lr_at(step, tc)
        batch = sampler.sample(tc.batch_size, rng)
        opt.zero_grad(set_to_none=True)
        loss = per_sequence_loss(model, batch).mean()
        if not torch.isfinite(loss) or loss.item() > tc.diverge_loss:
            raise DivergedLoss(f"loss {loss.item()} at step {step}")
        loss.backward()
        if tc.grad_clip:
            nn.utils.clip_grad_norm_(model.parameters(), tc.grad_clip)
        opt.step()
        last = step + 1 == tc.steps
        if (step + 1) % tc.eval_every == 0 or last:
            result.curve.append((step + 1, float(loss.item()), evaluate(model, val)))
    model.eval()
    return result


# -- checkpoints ----------------------------------------------------------------

def save_checkpoint(model, path):
    """Header line, one JSON line (config + tensor index), then raw little-endian arrays."""
    arrays = [(n, p.detach().cpu().numpy()) for n, p in model.state_dict().items()]
    index = [{"name": n, "shape": list(a.shape), "dtype": a.dtype.str} for n, a in arrays]
    meta = json.dumps({"config": asdict(model.cfg), "tensors": index}, sort_keys=True)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_HEADER)
        fh.write(meta.encode() + b"\n")
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a).astype(a.dtype.newbyteorder("<")).tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        head = fh.readline()
        if head != CHECKPOINT_HEADER:
            raise FormatVersionError(f"{path}: expected {CHECKPOINT_HEADER!r}, got {head[:40]!r}")
        try:
            meta = json.loads(fh.readline())
            cfg = ModelConfig(**meta["config"])
        except (ValueError, KeyError, TypeError) as exc:
            raise CorruptFile(f"{path}: bad metadata ({exc})") from None
        state = {}
        for t in meta["tensors"]:
            dt = np.dtype(t["dtype"])
            count = int(np.prod(t["shape"]))
            buf = fh.read(count * dt.itemsize)
            if len(buf) != count * dt.itemsize:
                raise CorruptFile(f"{path}: truncated tensor {t['name']}")
            arr = np.frombuffer(buf, dtype=dt).reshape(t["shape"])
            if not np.all(np.isfinite(arr)):
                raise CorruptFile(f"{path}: non-finite weights in {t['name']}")
            state[t["name"]] = torch.from_numpy(arr.copy())
        if fh.read(1):
            raise CorruptFile(f"{path}: trailing bytes")
    model = TradeModel(cfg)
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise CorruptFile(f"{path}: {exc}") from None
    model.eval()
    return model


# -- sampling -----------------------------------------------------------------

def penalized_logits(logits, history, sampler):
    z = np.array(logits, dtype=np.float64)
    window = history if sampler.penalty_window is None else history[len(history) - sampler.penalty_window:]
    if sampler.repetition_penalty != 1.0 and len(window):
        seen = np.unique(np.asarray(window, dtype=np.int64))
        v = z[seen]
        z[seen] = np.where(v > 0, v / sampler.repetition_penalty, v * sampler.repetition_penalty)
    return z / sampler.temperature


def token_probabilities(logits, history, sampler):
    z = penalized_logits(logits, history, sampler)
    z -= z.max()
    p = np.exp(z)
    return p / p.sum()


def sample_next(logits, history, sampler, rng):
    """Repetition penalty, temperature, then one multinomial draw."""
    p = token_probabilities(logits, history, sampler)
    return int(rng.choice(len(p), p=p))


class Generator:
    """Stateful next-token generation over a sliding context window."""

    def __init__(self, model, sampler):
        self.model = model
        self.sampler = sampler
        self.rng = np.random.default_rng(sampler.seed)

    def next_token(self, rows, history, start):
        """``rows`` are the context tuples so far; the last ``context_length - 1`` are used.

        ``start`` is the (liquidity, scope, price_level) of the pending event.
        """
        cfg = self.model.cfg
        rows = np.asarray(rows, dtype=np.int64).reshape(-1, 4)
        window = rows[len(rows) - min(len(rows), cfg.context_length - 1):]
        inputs = with_bos(window, cfg, start)
        with torch.no_grad():
            logits = self.model(inputs)[0, -1].double().numpy()
        return sample_next(logits, history, self.sampler, self.rng)
