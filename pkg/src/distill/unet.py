"""Tiny conditional UNet noise predictor with FreeU hook points.

Two downsamplings, skip concatenation at both decoder stages. Decoder stage 1
is the innermost (8×8 for 16×16 inputs), stage 2 the outer one. When FreeU
params are passed, the (backbone, skip) pair entering each stage is modified
before concatenation.
"""

from __future__ import annotations

import math
import struct
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .freeu import FreeUParams, lowfreq_mask
from .prior import Condition, NoiseSchedule

TUN_MAGIC = b"TUN1"


def condition_index(cond: Condition) -> int:
    """Embedding row: 0 unconditioned (fixed zero), 1 negative, 2 + id for prompts."""
    if cond.kind == "unconditioned":
        return 0
    if cond.kind == "negative":
        return 1
    return 2 + cond.id


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float32) / half)
    args = t.float()[:, None] * freqs[None]
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


class ResBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, emb_dim: int, groups: int = 8):
        super().__init__()
        self.norm1 = nn.GroupNorm(min(groups, c_in), c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.emb = nn.Linear(emb_dim, 2 * c_out)
        self.norm2 = nn.GroupNorm(min(groups, c_out), c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x, emb):
        h = self.conv1(F.silu(self.norm1(x)))
        scale, shift = self.emb(emb)[:, :, None, None].chunk(2, dim=1)
        h = self.norm2(h) * (1 + scale) + shift
        h = self.conv2(F.silu(h))
        return self.skip(x) + h


def freeu_backbone(h: torch.Tensor, b: float) -> torch.Tensor:
    if b == 1:
        return h
    half = h.shape[1] // 2
    return torch.cat([h[:, :half] * b, h[:, half:]], dim=1)


def freeu_skip(h: torch.Tensor, s: float, r_threshold: float) -> torch.Tensor:
    H, W = h.shape[-2:]
    spec = torch.fft.fftshift(torch.fft.fft2(h, norm="ortho"), dim=(-2, -1))
    mask = torch.from_numpy(lowfreq_mask(H, W, r_threshold)).to(h.device)
    spec = torch.where(mask, spec * s, spec)
    return torch.fft.ifft2(torch.fft.ifftshift(spec, dim=(-2, -1)), norm="ortho").real.to(h.dtype)


class TinyUNet(nn.Module):
    def __init__(self, channels: int = 3, base: int = 16, emb_dim: int = 64, n_prompts: int = 1,
                 seed: int = 42):
        super().__init__()
        self.config = dict(channels=channels, base=base, emb_dim=emb_dim, n_prompts=n_prompts, seed=seed)
        c1, c2, c3 = base, 2 * base, 4 * base
        gen = torch.Generator().manual_seed(seed)
        with torch.random.fork_rng():
            torch.manual_seed(int(torch.randint(0, 2**31 - 1, (1,), generator=gen)))
            self.time_mlp = nn.Sequential(nn.Linear(emb_dim, emb_dim), nn.SiLU(), nn.Linear(emb_dim, emb_dim))
            self.cond_emb = nn.Embedding(2 + n_prompts, emb_dim, padding_idx=0)
            self.conv_in = nn.Conv2d(channels, c1, 3, padding=1)
            self.enc0 = ResBlock(c1, c1, emb_dim)
            self.down1 = nn.Conv2d(c1, c1, 3, stride=2, padding=1)
            self.enc1 = ResBlock(c1, c2, emb_dim)
            self.down2 = nn.Conv2d(c2, c2, 3, stride=2, padding=1)
            self.mid = ResBlock(c2, c3, emb_dim)
            self.dec1 = ResBlock(c3 + c2, c2, emb_dim)
            self.dec2 = ResBlock(c2 + c1, c1, emb_dim)
            self.norm_out = nn.GroupNorm(8, c1)
            self.conv_out = nn.Conv2d(c1, channels, 3, padding=1)
        self.emb_dim = emb_dim

    def forward(self, z, t, cond_idx, freeu: FreeUParams | None = None):
        emb = self.time_mlp(timestep_embedding(t, self.emb_dim)) + self.cond_emb(cond_idx)
        h0 = self.enc0(self.conv_in(z), emb)
        h1 = self.enc1(self.down1(h0), emb)
        h = self.mid(self.down2(h1), emb)
        for stage, skip, block in ((1, h1, self.dec1), (2, h0, self.dec2)):
            h = F.interpolate(h, scale_factor=2, mode="nearest")
            if freeu is not None:
                b, s = freeu.stage(stage)
                h, skip = freeu_backbone(h, b), freeu_skip(skip, s, freeu.r_threshold)
            h = block(torch.cat([h, skip], dim=1), emb)
        return self.conv_out(F.silu(self.norm_out(h)))


def _check_size(shape) -> None:
    h, w = shape[-2:]
    if h != w or h < 4 or h & (h - 1):
        raise ValueError(f"UNet input must be square with power-of-two side >= 4, got {h}x{w}")


@torch.no_grad()
def unet_eps(z_t, t, cond: Condition, net: TinyUNet, freeu: FreeUParams | None = None) -> np.ndarray:
    """Noise prediction for a C×H×W image or a batch of them."""
    z = np.asarray(z_t)
    _check_size(z.shape)
    single = z.ndim == 3
    zb = torch.from_numpy(np.ascontiguousarray(z[None] if single else z, dtype=np.float32))
    n = zb.shape[0]
    tb = torch.as_tensor(np.broadcast_to(np.asarray(t), (n,)).copy(), dtype=torch.long)
    cb = torch.full((n,), condition_index(cond), dtype=torch.long)
    out = net(zb, tb, cb, freeu).double().numpy()
    return out[0] if single else out


def train_denoiser(net: TinyUNet, dataset: dict, steps: int, rng: np.random.Generator,
                   sched: NoiseSchedule, batch_size: int = 32, lr: float = 2e-3,
                   cond_dropout: float = 0.1):
    """Fit ``net`` to predict the added noise (unit loss weight at every t).

    ``dataset`` maps :class:`Condition` to an (N, C, H, W) image array. Each
    batch draws a condition uniformly, then images, timesteps and noise. With
    probability ``cond_dropout`` a sample is relabelled unconditioned.
    Returns ``(net, losses)``.
    """
    conds = [c for c, imgs in dataset.items() if len(imgs)]
    if not conds:
        raise ValueError("training dataset is empty")
    for imgs in dataset.values():
        _check_size(np.shape(imgs))
    losses: list[float] = []
    if steps <= 0:
        return net, losses
    opt = torch.optim.Adam(net.parameters(), lr=lr)
    alpha = torch.from_numpy(sched.alpha.astype(np.float32))
    sigma = torch.from_numpy(sched.sigma.astype(np.float32))
    net.train()
    for _ in range(steps):
        ci = rng.integers(len(conds), size=batch_size)
        x = np.stack([dataset[conds[c]][rng.integers(len(dataset[conds[c]]))] for c in ci])
        labels = np.array([condition_index(conds[c]) for c in ci])
        labels[rng.random(batch_size) < cond_dropout] = 0
        t = rng.integers(0, sched.T, size=batch_size)
        eps = rng.standard_normal(x.shape)
        xb = torch.from_numpy(x.astype(np.float32))
        eb = torch.from_numpy(eps.astype(np.float32))
        tb = torch.from_numpy(t)
        zb = alpha[tb, None, None, None] * xb + sigma[tb, None, None, None] * eb
        loss = F.mse_loss(net(zb, tb, torch.from_numpy(labels)), eb)
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(loss.item())
    net.eval()
    return net, losses


def save_checkpoint(path, net: TinyUNet) -> None:
    tensors = list(net.state_dict().values())
    parts = [TUN_MAGIC, struct.pack("<I", len(tensors))]
    for x in tensors:
        arr = x.detach().cpu().numpy().astype("<f4")
        parts.append(struct.pack(f"<{1 + arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path, net: TinyUNet) -> TinyUNet:
    """Load ``TUN1`` weights into an architecture-compatible ``net``."""
    data = Path(path).read_bytes()
    if data[:4] != TUN_MAGIC:
        raise ValueError(f"offset 0: bad checkpoint magic {data[:4]!r}")
    (count,) = struct.unpack_from("<I", data, 4)
    state = net.state_dict()
    if count != len(state):
        raise ValueError(f"offset 4: checkpoint has {count} tensors, model expects {len(state)}")
    pos = 8
    new_state = {}
    for name, ref in state.items():
        (rank,) = struct.unpack_from("<I", data, pos)
        dims = struct.unpack_from(f"<{rank}I", data, pos + 4)
        pos += 4 + 4 * rank
        if tuple(dims) != tuple(ref.shape):
            raise ValueError(f"offset {pos}: tensor {name} has shape {dims}, expected {tuple(ref.shape)}")
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=pos).reshape(dims)
        new_state[name] = torch.from_numpy(arr.copy())
        pos += 4 * n
    if pos != len(data):
        raise ValueError(f"offset {pos}: {len(data) - pos} trailing bytes in checkpoint")
    net.load_state_dict(new_state)
    return net
