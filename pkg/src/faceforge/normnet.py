"""Texture normalization model: per-patch factor field plus per-pixel MLP.

The model maps a lit UV texture and a target skin color to a clean albedo.
A convolutional estimator predicts an 8-channel factor field at the corners
of a 16px patch grid; the field is bilinearly interpolated to pixel
resolution and a small MLP translates each pixel independently from its
color and interpolated factors.  A capacity-limited patch discriminator
(an MLP over 4x4-pooled 16x16 patches) supplies the adversarial signal.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .netops import check_finite, mlp, seed_all, to_numpy, to_tensor

PATCH = 16
THETA_CHANNELS = 8


@dataclass
class ThetaGrid:
    """Factor field at patch corners: (G+1, G+1, 8)."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 3 or self.values.shape[2] != THETA_CHANNELS \
                or self.values.shape[0] != self.values.shape[1]:
            raise ValueError(f"theta grid must be (G+1, G+1, {THETA_CHANNELS})")
        if not np.isfinite(self.values).all():
            raise ValueError("theta grid contains non-finite values")

    @property
    def patches(self) -> int:
        return self.values.shape[0] - 1


@dataclass
class NormLossWeights:
    rec: float = 10.0
    color: float = 10.0
    adv: float = 1.0

    def __post_init__(self):
        if min(self.rec, self.color, self.adv) < 0:
            raise ValueError("loss weights must be non-negative")


class PatchParamNet(nn.Module):
    """Estimates the factor field from the texture and a broadcast skin color.

    Alternating k3s1 / k4s2 convolutions; channels start at 16 and double
    after each stride-2 layer; the trunk stops once the spatial side equals
    the patch-grid size, where the skin color is broadcast and two 1x1
    layers produce the 8 factor channels.
    """

    def __init__(self):
        super().__init__()
        # reflect padding: zero borders would give crops a signature that
        # full-resolution interiors never show
        layers = [nn.Conv2d(3, 16, 3, 1, 1, padding_mode="reflect"), nn.ELU()]
        c = 16
        for _ in range(4):  # side -> side/16
            layers += [nn.Conv2d(c, c * 2, 4, 2, 1, padding_mode="reflect"), nn.ELU(),
                       nn.Conv2d(c * 2, c * 2, 3, 1, 1, padding_mode="reflect"), nn.ELU()]
            c *= 2
        self.trunk = nn.Sequential(*layers)
        self.head = nn.Sequential(
            nn.Conv2d(c + 3, c, 1), nn.ELU(),
            nn.Conv2d(c, THETA_CHANNELS, 1),
        )
        self._wire_color_path(c)

    def _wire_color_path(self, c: int) -> None:
        # Initialization only: the first three factor channels start out as a
        # verbatim copy of the broadcast skin color.  Without this the c ->
        # theta -> translation pathway is a product of small random factors
        # and the color objective trains orders of magnitude too slowly.
        with torch.no_grad():
            h1, h2 = self.head[0], self.head[2]
            for k in range(3):
                h1.weight[k].zero_()
                h1.bias[k] = 0.0
                h1.weight[k, c + k, 0, 0] = 1.0
                h2.weight[:, k] = 0.0
                h2.weight[k].zero_()
                h2.weight[k, k, 0, 0] = 1.0
                h2.bias[k] = 0.0

    def forward(self, x: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        """(B,3,H,W), (B,3) -> corner grid (B,8,G+1,G+1), G = H/16."""
        h = self.trunk(x)
        c_map = c[:, :, None, None].expand(-1, -1, h.shape[2], h.shape[3])
        theta = self.head(torch.cat([h, c_map], dim=1))
        # corner alignment: replicate the last row/column to go from G to G+1
        return F.pad(theta, (0, 1, 0, 1), mode="replicate")


class PixelTranslationNet(nn.Module):
    """Per-pixel residual MLP f(r,g,b; theta): 6 layers, 64 hidden features."""

    def __init__(self):
        super().__init__()
        sizes = [3 + THETA_CHANNELS, 64, 64, 64, 64, 64, 3]
        layers = []
        for i in range(len(sizes) - 1):
            layers.append(nn.Conv2d(sizes[i], sizes[i + 1], 1))
            if i < len(sizes) - 2:
                layers.append(nn.ELU())
        # zero-init the last layer so the untrained model is the identity map
        nn.init.zeros_(layers[-1].weight)
        nn.init.zeros_(layers[-1].bias)
        self.net = nn.Sequential(*layers)
        # initialization only: hidden units 0..2 carry theta[0:3] (the skin
        # color copy) straight through, keeping that pathway first-order
        convs = [m for m in self.net if isinstance(m, nn.Conv2d)]
        with torch.no_grad():
            for k in range(3):
                convs[0].weight[k].zero_()
                convs[0].bias[k] = 0.0
                convs[0].weight[k, 3 + k, 0, 0] = 1.0
            for conv in convs[1:-1]:
                for k in range(3):
                    conv.weight[k].zero_()
                    conv.bias[k] = 0.0
                    conv.weight[k, k, 0, 0] = 1.0

    def forward(self, x: torch.Tensor, theta_field: torch.Tensor) -> torch.Tensor:
        return x + self.net(torch.cat([x, theta_field], dim=1))


class Normalizer(nn.Module):
    """Full normalization model N(x, c)."""

    def __init__(self):
        super().__init__()
        self.params_net = PatchParamNet()
        self.pixel_net = PixelTranslationNet()

    def forward(self, x: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        grid = self.params_net(x, c)
        theta_field = interp_theta_t(grid, x.shape[2], x.shape[3])
        return self.pixel_net(x, theta_field)


class PatchDiscriminator(nn.Module):
    """MLP over non-overlapping 16x16 patches, each pooled to 4x4."""

    def __init__(self):
        super().__init__()
        self.net = mlp([4 * 4 * 3, 64, 64, 64, 64, 64, 1])

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """(B,3,H,W) -> per-patch logits (B, H/16, W/16)."""
        if x.shape[2] % PATCH or x.shape[3] % PATCH:
            raise ValueError(f"image side must be divisible by {PATCH}")
        b = x.shape[0]
        gh, gw = x.shape[2] // PATCH, x.shape[3] // PATCH
        pooled = F.avg_pool2d(x, 4, 4)  # 16x16 patch -> 4x4
        p = pooled.reshape(b, 3, gh, 4, gw, 4).permute(0, 2, 4, 1, 3, 5)
        feats = p.reshape(b, gh, gw, 48)
        return self.net(feats * 2.0 - 1.0).squeeze(-1)


def interp_theta_t(grid: torch.Tensor, h: int, w: int) -> torch.Tensor:
    """Bilinear interpolation of a corner grid to (B, C, h, w).

    Pixels at multiples of the patch size reproduce corner values exactly.
    """
    gp = grid.shape[2] - 1
    if h != gp * PATCH or w != gp * PATCH:
        raise ValueError(f"grid with {gp}+1 corners does not match {h}x{w}")
    ii = torch.arange(h, device=grid.device)
    jj = torch.arange(w, device=grid.device)
    gi, gj = ii // PATCH, jj // PATCH
    ti = (ii % PATCH).to(grid.dtype) / PATCH
    tj = (jj % PATCH).to(grid.dtype) / PATCH
    rows0 = grid.index_select(2, gi)
    rows1 = grid.index_select(2, gi + 1)
    g00 = rows0.index_select(3, gj)
    g01 = rows0.index_select(3, gj + 1)
    g10 = rows1.index_select(3, gj)
    g11 = rows1.index_select(3, gj + 1)
    wi = ti.view(1, 1, h, 1)
    wj = tj.view(1, 1, 1, w)
    return ((1 - wi) * (1 - wj) * g00 + (1 - wi) * wj * g01
            + wi * (1 - wj) * g10 + wi * wj * g11)


def masked_mean_color(x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Differentiable per-channel mean over a boolean mask: (B,3,H,W)->(B,3)."""
    m = mask.to(x.dtype)
    denom = m.sum()
    return (x * m[None, None]).sum(dim=(2, 3)) / denom


# -- numpy-facing contract wrappers -----------------------------------------

def estimate_theta(x: np.ndarray, c: np.ndarray, model: Normalizer) -> ThetaGrid:
    """Factor grid for one HxWx3 map and 3-vector skin color."""
    if x.shape[0] % PATCH or x.shape[1] % PATCH:
        raise ValueError(f"image side must be divisible by {PATCH}")
    with torch.no_grad():
        grid = model.params_net(
            to_tensor(np.asarray(x, dtype=np.float32))[None],
            torch.as_tensor(np.asarray(c, dtype=np.float32))[None])
    return ThetaGrid(to_numpy(grid[0]))


def interp_theta(grid: ThetaGrid, h: int, w: int) -> np.ndarray:
    """HxWx8 bilinear field from a corner grid."""
    g = grid.values if isinstance(grid, ThetaGrid) else np.asarray(grid)
    t = torch.from_numpy(np.ascontiguousarray(g, dtype=np.float64)).permute(2, 0, 1)[None]
    return to_numpy(interp_theta_t(t, h, w)[0])


def translate_pixels(x: np.ndarray, theta_field: np.ndarray,
                     model: Normalizer) -> np.ndarray:
    """Apply the per-pixel translation MLP under a fixed factor field."""
    if theta_field.shape[:2] != x.shape[:2]:
        raise ValueError("theta field and image shapes disagree")
    with torch.no_grad():
        out = model.pixel_net(to_tensor(np.asarray(x, dtype=np.float32))[None],
                              to_tensor(np.asarray(theta_field, dtype=np.float32))[None])
    return to_numpy(out[0])


def normalize(x: np.ndarray, c: np.ndarray, model: Normalizer) -> np.ndarray:
    """Full N(x, c) forward, clamped to [0, 1]."""
    with torch.no_grad():
        out = model(to_tensor(np.asarray(x, dtype=np.float32))[None],
                    torch.as_tensor(np.asarray(c, dtype=np.float32))[None])
    return np.clip(to_numpy(out[0]), 0.0, 1.0)


def disc_score(x: np.ndarray, disc: PatchDiscriminator) -> np.ndarray:
    """Per-patch logit grid for one map."""
    with torch.no_grad():
        return disc(to_tensor(np.asarray(x, dtype=np.float32))[None])[0].numpy()


# -- losses ------------------------------------------------------------------

def loss_n_rec(model: Normalizer, scan_x: torch.Tensor,
               scan_c: torch.Tensor) -> torch.Tensor:
    """Mean squared reconstruction error of N on clean albedo."""
    if scan_x.shape[0] == 0:
        raise ValueError("empty batch")
    return F.mse_loss(model(scan_x, scan_c), scan_x)


def loss_n_adv_suite(model: Normalizer, disc: PatchDiscriminator,
                     scan_x: torch.Tensor, syn_x: torch.Tensor,
                     scan_c: torch.Tensor, flat_mask: torch.Tensor):
    """(L_real, L_fake, L_adv, L_color) for one scan/syn batch pairing.

    Synthetic inputs are normalized under the scan batch's skin colors; the
    color loss ties the output's measured skin color back to the provided one.
    """
    y = model(syn_x, scan_c)
    d_real = disc(scan_x)
    d_fake = disc(y)
    l_real = F.softplus(-d_real).mean()
    l_fake = F.softplus(d_fake).mean()
    l_adv = F.softplus(-d_fake).mean()
    l_color = torch.linalg.vector_norm(
        masked_mean_color(y, flat_mask) - scan_c, dim=1).mean()
    return l_real, l_fake, l_adv, l_color


def norm_generator_objective(model, disc, scan_x, syn_x, scan_c, flat_mask,
                             weights: NormLossWeights) -> torch.Tensor:
    """Total objective minimized by N (used by training and gradient checks)."""
    rec = loss_n_rec(model, scan_x, scan_c)
    _, _, adv, color = loss_n_adv_suite(model, disc, scan_x, syn_x, scan_c, flat_mask)
    return weights.rec * rec + weights.color * color + weights.adv * adv


# -- training -----------------------------------------------------------------

@dataclass
class NormTrainConfig:
    steps: int = 1800
    warmup_steps: int = 200     # rec+color only, before the adversary joins
    batch_size: int = 6
    lr: float = 2e-4
    disc_lr: float = 1e-3
    disc_steps: int = 1         # discriminator updates per generator update
    identity_every: int = 5     # every k-th generator step is rec-only
    color_every: int = 1        # color term cadence (full images, half res)
    color_batch: int = 3
    crop: int | None = 64       # adversarial/rec steps run on random crops
    polish_steps: int = 200     # trailing rec-only steps at a low fresh lr
    polish_lr: float = 5e-5
    seed: int = 0
    weights: NormLossWeights = field(default_factory=NormLossWeights)
    log_every: int = 0


def _crop_batch(x: torch.Tensor, size: int, g: torch.Generator) -> torch.Tensor:
    res = x.shape[2]
    if size >= res:
        return x
    # patch-aligned crops keep the 16px grid geometry intact
    cells = (res - size) // PATCH
    oy = int(torch.randint(0, cells + 1, (1,), generator=g)) * PATCH
    ox = int(torch.randint(0, cells + 1, (1,), generator=g)) * PATCH
    return x[:, :, oy:oy + size, ox:ox + size]


def train_normalizer(scan_x: np.ndarray, scan_c: np.ndarray, syn_x: np.ndarray,
                     config: NormTrainConfig, flat_mask: np.ndarray,
                     model: Normalizer | None = None,
                     disc: PatchDiscriminator | None = None):
    """Adversarial training of the normalization model.

    scan_x: (N,H,W,3) clean albedo, scan_c: (N,3) their skin colors,
    syn_x: (M,H,W,3) lit textures.  Returns (model, disc, history).

    Reconstruction and adversarial terms run on patch-aligned crops (the
    discriminator is purely patch-local, so crops do not change its view);
    the skin-color term periodically runs on whole images at half
    resolution, where the flat-region mask is present.
    """
    if len(scan_x) == 0 or len(syn_x) == 0:
        raise ValueError("both training sets must be nonempty")
    g = seed_all(config.seed)
    model = model or Normalizer()
    disc = disc or PatchDiscriminator()
    opt_n = torch.optim.Adam(model.parameters(), lr=config.lr, betas=(0.5, 0.99))
    opt_d = torch.optim.Adam(disc.parameters(), lr=config.disc_lr, betas=(0.5, 0.99))
    sched_n = torch.optim.lr_scheduler.CosineAnnealingLR(opt_n, T_max=config.steps)
    sched_d = torch.optim.lr_scheduler.CosineAnnealingLR(
        opt_d, T_max=config.steps * max(config.disc_steps, 1))

    # uint8 staging keeps 2k-record corpora within memory
    scan_t = torch.from_numpy((np.asarray(scan_x) * 255).astype(np.uint8))
    syn_t = torch.from_numpy((np.asarray(syn_x) * 255).astype(np.uint8))
    color_t = torch.from_numpy(np.asarray(scan_c, dtype=np.float32))
    res = scan_t.shape[1]
    half = res // 2 if res // 2 >= 2 * PATCH else res
    mask_half = np.asarray(flat_mask, dtype=np.float32)
    if mask_half.shape[0] != half:
        zoom = half / mask_half.shape[0]
        idx = (np.arange(half) / zoom).astype(int)
        mask_half = mask_half[np.ix_(idx, idx)]
    mask_t = torch.from_numpy(mask_half > 0.5)

    def fetch(bank: torch.Tensor, n: int):
        idx = torch.randint(0, bank.shape[0], (n,), generator=g)
        batch = bank[idx].to(torch.float32).permute(0, 3, 1, 2) / 255.0
        return idx, batch

    history = []
    w = config.weights
    for step in range(config.steps):
        i1, x1 = fetch(scan_t, config.batch_size)
        _, x2 = fetch(syn_t, config.batch_size)
        c1 = color_t[i1]
        if config.crop:
            x1c = _crop_batch(x1, config.crop, g)
            x2c = _crop_batch(x2, config.crop, g)
        else:
            x1c, x2c = x1, x2

        warm = step < config.warmup_steps
        # discriminator steps (skipped during warmup)
        d_loss = torch.zeros(())
        if not warm:
            for _ in range(max(config.disc_steps, 1)):
                with torch.no_grad():
                    y = model(x2c, c1)
                d_loss = F.softplus(-disc(x1c)).mean() + F.softplus(disc(y)).mean()
                check_finite(d_loss, "discriminator loss")
                opt_d.zero_grad()
                d_loss.backward()
                opt_d.step()
                sched_d.step()
                i1, x1 = fetch(scan_t, config.batch_size)
                _, x2 = fetch(syn_t, config.batch_size)
                c1 = color_t[i1]
                if config.crop:
                    x1c = _crop_batch(x1, config.crop, g)
                    x2c = _crop_batch(x2, config.crop, g)
                else:
                    x1c, x2c = x1, x2

        entry = {"step": step, "d_loss": float(d_loss.detach())}
        b = x1c.shape[0]
        if config.identity_every and (step + 1) % config.identity_every == 0:
            # identity augmentation batch: clean albedo must pass through
            rec = loss_n_rec(model, x1c, c1)
            n_loss = w.rec * rec
            entry.update(rec=float(rec.detach()), identity_batch=True)
        else:
            rec = loss_n_rec(model, x1c, c1)
            n_loss = w.rec * rec
            if not warm:
                adv = F.softplus(-disc(model(x2c, c1))).mean()
                n_loss = n_loss + w.adv * adv
                entry["adv"] = float(adv.detach())
            entry.update(rec=float(rec.detach()), identity_batch=False)
            if config.color_every and (step + 1) % config.color_every == 0:
                nb = min(config.color_batch, config.batch_size)
                x2_half = F.avg_pool2d(x2[:nb], res // half)
                y_half = model(x2_half, c1[:nb])
                color = torch.linalg.vector_norm(
                    masked_mean_color(y_half, mask_t) - c1[:nb], dim=1).mean()
                n_loss = n_loss + w.color * color
                entry["color"] = float(color.detach())
        check_finite(n_loss, "normalizer loss")
        opt_n.zero_grad()
        n_loss.backward()
        opt_n.step()
        sched_n.step()
        entry["n_loss"] = float(n_loss.detach())
        history.append(entry)
        if config.log_every and (step + 1) % config.log_every == 0:
            print(f"norm step {step + 1}/{config.steps} " +
                  " ".join(f"{k}={v:.4f}" for k, v in entry.items()
                           if isinstance(v, float)), flush=True)

    # identity polish: the adversary keeps nudging clean inputs late in
    # training; a short rec-only phase restores strict pass-through
    if config.polish_steps:
        opt_p = torch.optim.Adam(model.parameters(), lr=config.polish_lr,
                                 betas=(0.5, 0.99))
        for step in range(config.polish_steps):
            i1, x1 = fetch(scan_t, config.batch_size)
            c1 = color_t[i1]
            if config.crop:
                x1 = _crop_batch(x1, config.crop, g)
            rec = loss_n_rec(model, x1, c1)
            loss = w.rec * rec
            check_finite(loss, "polish loss")
            opt_p.zero_grad()
            loss.backward()
            opt_p.step()
            history.append({"step": config.steps + step, "rec": float(rec.detach()),
                            "n_loss": float(loss.detach()), "d_loss": 0.0,
                            "identity_batch": True})
    model.eval()
    disc.eval()
    return model, disc, history
