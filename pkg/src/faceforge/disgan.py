"""Two-step disentangled label-conditioned generation.

Step 1 trains an encoder E, an assist generator G1 and a conditional code
discriminator D_E so that E extracts label-independent identity codes whose
conditional distribution matches a standard normal prior.  Step 2 freezes E
and G1 and trains the final conditional generator G2 against an image
discriminator D_G that receives the code condition through G1's rendering
of it, concatenated with the image under test.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .labels import LABEL_DIM, SoftLabel
from .netops import check_finite, mlp, r1_penalty, seed_all, to_numpy, to_tensor
from .toydata import FaceAsset


@dataclass
class GanConfig:
    resolution: int = 64
    code_channels: int = 256
    code_size: int = 4
    base: int = 32              # channel width of the image trunks
    label_dim: int = LABEL_DIM

    @property
    def code_dim(self) -> int:
        return self.code_channels * self.code_size ** 2


@dataclass
class GanLossWeights:
    rec: float = 10.0
    adv: float = 1.0
    r1_gamma: float = 10.0

    def __post_init__(self):
        if min(self.rec, self.adv, self.r1_gamma) < 0:
            raise ValueError("loss weights must be non-negative")


def _film(feat: torch.Tensor, mod: torch.Tensor) -> torch.Tensor:
    scale, shift = mod.chunk(2, dim=1)
    return feat * (1.0 + scale[..., None, None]) + shift[..., None, None]


class Encoder(nn.Module):
    """Maps a 6-channel asset to a spatial unlabeled code."""

    def __init__(self, cfg: GanConfig):
        super().__init__()
        c = cfg.base
        steps = []
        side, ch = cfg.resolution, c
        steps += [nn.Conv2d(6, c, 3, 1, 1), nn.ELU()]
        while side > cfg.code_size:
            out = min(ch * 2, cfg.code_channels)
            steps += [nn.Conv2d(ch, out, 4, 2, 1), nn.ELU(),
                      nn.Conv2d(out, out, 3, 1, 1), nn.ELU()]
            ch = out
            side //= 2
        steps += [nn.Conv2d(ch, cfg.code_channels, 3, 1, 1)]
        self.net = nn.Sequential(*steps)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class _Decoder(nn.Module):
    """Shared upsampling trunk used by both generators (separate weights)."""

    def __init__(self, cfg: GanConfig, cond_dim: int):
        super().__init__()
        self.cfg = cfg
        widths = []
        side, ch = cfg.code_size, cfg.code_channels
        while side < cfg.resolution:
            widths.append((ch, max(cfg.base, ch // 2)))
            ch = max(cfg.base, ch // 2)
            side *= 2
        self.inp = nn.Conv2d(cfg.code_channels, cfg.code_channels, 3, 1, 1)
        self.blocks = nn.ModuleList()
        self.mods = nn.ModuleList()
        for cin, cout in widths:
            self.blocks.append(nn.ModuleList([
                nn.Conv2d(cin, cout, 3, 1, 1),
                nn.Conv2d(cout, cout, 3, 1, 1),
            ]))
            self.mods.append(nn.ModuleList([
                nn.Linear(cond_dim, cout * 2),
                nn.Linear(cond_dim, cout * 2),
            ]))
        self.out = nn.Conv2d(widths[-1][1], 6, 3, 1, 1)

    def forward(self, code: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        h = F.elu(self.inp(code))
        for block, mods in zip(self.blocks, self.mods):
            h = F.interpolate(h, scale_factor=2, mode="nearest")
            h = F.elu(_film(block[0](h), mods[0](cond)))
            h = F.elu(_film(block[1](h), mods[1](cond)))
        return torch.sigmoid(self.out(h))


class AssistGenerator(nn.Module):
    """G1: reconstructs an asset from (code, label); label enters via FiLM."""

    def __init__(self, cfg: GanConfig):
        super().__init__()
        self.embed = mlp([cfg.label_dim, 64, 64])
        self.dec = _Decoder(cfg, 64)

    def forward(self, code: torch.Tensor, label: torch.Tensor) -> torch.Tensor:
        return self.dec(code, F.elu(self.embed(label)))


class ConditionalGenerator(nn.Module):
    """G2: style-based trunk; (z, label) feed a mapping network."""

    def __init__(self, cfg: GanConfig):
        super().__init__()
        self.mapping = mlp([cfg.code_dim + cfg.label_dim, 256, 256])
        self.dec = _Decoder(cfg, 256)

    def forward(self, z: torch.Tensor, label: torch.Tensor) -> torch.Tensor:
        w = F.elu(self.mapping(torch.cat([z.flatten(1), label], dim=1)))
        return self.dec(z, w)


class CodeDiscriminator(nn.Module):
    """D_E: MLP over the flattened code with the label concatenated."""

    def __init__(self, cfg: GanConfig):
        super().__init__()
        self.net = mlp([cfg.code_dim + cfg.label_dim, 512, 256, 128, 64, 1])

    def forward(self, code: torch.Tensor, label: torch.Tensor) -> torch.Tensor:
        return self.net(torch.cat([code.flatten(1), label], dim=1)).squeeze(1)


class ImageDiscriminator(nn.Module):
    """D_G over the 12-channel concat of the image and G1's rendering.

    The label joins at the fully connected head.
    """

    def __init__(self, cfg: GanConfig):
        super().__init__()
        c = cfg.base
        layers = [nn.Conv2d(12, c, 3, 1, 1), nn.ELU()]
        side, ch = cfg.resolution, c
        while side > 4:
            out = min(ch * 2, 256)
            layers += [nn.Conv2d(ch, out, 4, 2, 1), nn.ELU(),
                       nn.Conv2d(out, out, 3, 1, 1), nn.ELU()]
            ch = out
            side //= 2
        self.trunk = nn.Sequential(*layers)
        self.head = mlp([ch * 16 + cfg.label_dim, 256, 1])

    def forward(self, x: torch.Tensor, g1_img: torch.Tensor,
                label: torch.Tensor) -> torch.Tensor:
        h = self.trunk(torch.cat([x, g1_img], dim=1)).flatten(1)
        return self.head(torch.cat([h, label], dim=1)).squeeze(1)


@dataclass
class Step1Model:
    encoder: Encoder
    g1: AssistGenerator
    d_e: CodeDiscriminator
    config: GanConfig


@dataclass
class Step2Model:
    g2: ConditionalGenerator
    d_g: ImageDiscriminator
    encoder: Encoder
    g1: AssistGenerator
    config: GanConfig


# -- numpy-facing contract ops -------------------------------------------------

def sample_prior(rng: np.random.Generator, cfg: GanConfig | None = None) -> np.ndarray:
    """IID standard-normal spatial code, (size, size, channels)."""
    cfg = cfg or GanConfig()
    return rng.standard_normal((cfg.code_size, cfg.code_size,
                                cfg.code_channels)).astype(np.float32)


def encode(asset: FaceAsset, model: Step1Model) -> np.ndarray:
    """E(x) as a (size, size, channels) array."""
    x = _asset_tensor(asset)[None]
    with torch.no_grad():
        return to_numpy(model.encoder(x)[0])


def generate_g1(code: np.ndarray, label: SoftLabel, model: Step1Model) -> FaceAsset:
    with torch.no_grad():
        out = model.g1(to_tensor(code)[None], _label_tensor([label]))[0]
    return _tensor_asset(out)


def code_disc(code: np.ndarray, label: SoftLabel, model: Step1Model) -> float:
    """Conditional probability that the code comes from the prior."""
    with torch.no_grad():
        logit = model.d_e(to_tensor(code)[None], _label_tensor([label]))
    return float(torch.sigmoid(logit)[0])


def generate(z: np.ndarray, label: SoftLabel, model: Step2Model) -> FaceAsset:
    """G2 sample for one code and soft label."""
    with torch.no_grad():
        out = model.g2(to_tensor(z)[None], _label_tensor([label]))[0]
    return _tensor_asset(out)


def generate_batch(model: Step2Model, labels: list, z_seed: int) -> torch.Tensor:
    """(N,6,R,R) batch generated from seeded prior codes."""
    rng = np.random.Generator(np.random.PCG64(z_seed))
    z = torch.stack([to_tensor(sample_prior(rng, model.config)) for _ in labels])
    with torch.no_grad():
        return model.g2(z, _label_tensor(labels))


def image_disc(x: FaceAsset, code_or_z: np.ndarray, label: SoftLabel,
               model: Step2Model) -> float:
    """D_G probability for one (image, code, label) triplet."""
    with torch.no_grad():
        g1_img = model.g1(to_tensor(code_or_z)[None], _label_tensor([label]))
        logit = model.d_g(_asset_tensor(x)[None], g1_img, _label_tensor([label]))
    return float(torch.sigmoid(logit)[0])


def _asset_tensor(asset: FaceAsset) -> torch.Tensor:
    return torch.cat([to_tensor(asset.albedo), to_tensor(asset.position)])


def _tensor_asset(t: torch.Tensor) -> FaceAsset:
    arr = to_numpy(torch.clamp(t, 0.0, 1.0))
    return FaceAsset(arr[..., :3], arr[..., 3:])


def _label_tensor(labels: list) -> torch.Tensor:
    return torch.from_numpy(
        np.stack([l.vector() for l in labels]).astype(np.float32))


# -- losses --------------------------------------------------------------------

def step1_losses(encoder, g1, d_e, x, labels, z):
    """(L_real, L_fake, L_adv, L_rec) for one batch.

    x: (B,6,H,W) training images, labels: (B,label_dim), z: (B,C,s,s) prior.
    """
    code = encoder(x)
    logit_prior = d_e(z, labels)
    logit_code = d_e(code, labels)
    l_real = F.softplus(-logit_prior).mean()
    l_fake = F.softplus(logit_code).mean()
    l_adv = F.softplus(-logit_code).mean()
    l_rec = F.mse_loss(g1(code, labels), x)
    return l_real, l_fake, l_adv, l_rec


def step2_losses(d_g, g2, g1, x, codes, labels, z, labels_fake):
    """(L_G_real, L_G_fake, L_G_adv) for one batch.

    Real triplet: (x, E(x), l(x)) with codes precomputed from the frozen
    encoder.  Fake triplet: (G2(z, l'), z, l') with l' taken from random
    training images.
    """
    fake = g2(z, labels_fake)
    logit_real = d_g(x, g1(codes, labels), labels)
    logit_fake = d_g(fake, g1(z, labels_fake), labels_fake)
    l_real = F.softplus(-logit_real).mean()
    l_fake = F.softplus(logit_fake).mean()
    l_adv = F.softplus(-logit_fake).mean()
    return l_real, l_fake, l_adv


# -- training ------------------------------------------------------------------

@dataclass
class GanTrainConfig:
    steps: int = 3000
    batch_size: int = 16
    lr: float = 1e-4
    disc_lr: float = 2e-4
    r1_every: int = 16
    seed: int = 0
    weights: GanLossWeights = field(default_factory=GanLossWeights)
    log_every: int = 0


def _dataset_tensors(records, cfg: GanConfig):
    x = torch.stack([_asset_tensor(r.asset) for r in records])
    labels = torch.from_numpy(np.stack(
        [np.concatenate([_onehot(r.label.ethnicity, 14),
                         _onehot(r.label.gender, 3),
                         _onehot(r.label.age_group, 13)]) for r in records]
    ).astype(np.float32))
    return x, labels


def _onehot(i: int, n: int) -> np.ndarray:
    v = np.zeros(n)
    v[i] = 1.0
    return v


def train_step1(records, cfg: GanConfig | None = None,
                tcfg: GanTrainConfig | None = None) -> tuple[Step1Model, list]:
    """Adversarial disentanglement training of (E, G1, D_E)."""
    if not records:
        raise ValueError("empty dataset")
    cfg = cfg or GanConfig(resolution=records[0].asset.resolution)
    tcfg = tcfg or GanTrainConfig()
    g = seed_all(tcfg.seed)
    encoder, g1, d_e = Encoder(cfg), AssistGenerator(cfg), CodeDiscriminator(cfg)
    opt_eg = torch.optim.Adam(list(encoder.parameters()) + list(g1.parameters()),
                              lr=tcfg.lr, betas=(0.5, 0.99))
    opt_d = torch.optim.Adam(d_e.parameters(), lr=tcfg.disc_lr, betas=(0.5, 0.99))
    x_all, label_all = _dataset_tensors(records, cfg)
    n = len(records)
    w = tcfg.weights
    history = []
    for step in range(tcfg.steps):
        idx = torch.randint(0, n, (tcfg.batch_size,), generator=g)
        x, labels = x_all[idx], label_all[idx]
        z = torch.randn(tcfg.batch_size, cfg.code_channels, cfg.code_size,
                        cfg.code_size, generator=g)

        # D_E step (optionally with lazy R1 on the prior inputs)
        with torch.no_grad():
            code = encoder(x)
        logit_prior = d_e(z, labels)
        logit_code = d_e(code, labels)
        d_loss = F.softplus(-logit_prior).mean() + F.softplus(logit_code).mean()
        if w.r1_gamma > 0 and tcfg.r1_every and step % tcfg.r1_every == 0:
            z_r1 = z.clone().requires_grad_(True)
            r1 = r1_penalty(d_e(z_r1, labels), z_r1)
            d_loss = d_loss + (w.r1_gamma / 2) * r1 * tcfg.r1_every
        check_finite(d_loss, "step-1 discriminator loss")
        opt_d.zero_grad()
        d_loss.backward()
        opt_d.step()

        # E, G1 step
        idx = torch.randint(0, n, (tcfg.batch_size,), generator=g)
        x, labels = x_all[idx], label_all[idx]
        code = encoder(x)
        adv = F.softplus(-d_e(code, labels)).mean()
        rec = F.mse_loss(g1(code, labels), x)
        eg_loss = w.rec * rec + w.adv * adv
        check_finite(eg_loss, "step-1 generator loss")
        opt_eg.zero_grad()
        eg_loss.backward()
        opt_eg.step()

        history.append({"step": step, "d_loss": float(d_loss.detach()),
                        "rec": float(rec.detach()), "adv": float(adv.detach())})
        if tcfg.log_every and (step + 1) % tcfg.log_every == 0:
            print(f"step1 {step + 1}/{tcfg.steps} d={d_loss.detach():.4f} "
                  f"rec={rec.detach():.4f} adv={adv.detach():.4f}")
    for m in (encoder, g1, d_e):
        m.eval()
    return Step1Model(encoder, g1, d_e, cfg), history


def train_step2(records, step1: Step1Model,
                tcfg: GanTrainConfig | None = None) -> tuple[Step2Model, list]:
    """Plain conditional GAN training of (G2, D_G) with E and G1 frozen."""
    if not records:
        raise ValueError("empty dataset")
    cfg = step1.config
    tcfg = tcfg or GanTrainConfig()
    g = seed_all(tcfg.seed)
    g2, d_g = ConditionalGenerator(cfg), ImageDiscriminator(cfg)
    opt_g = torch.optim.Adam(g2.parameters(), lr=tcfg.lr, betas=(0.5, 0.99))
    opt_d = torch.optim.Adam(d_g.parameters(), lr=tcfg.disc_lr, betas=(0.5, 0.99))

    encoder, g1 = step1.encoder, step1.g1
    for p in encoder.parameters():
        p.requires_grad_(False)
    for p in g1.parameters():
        p.requires_grad_(False)

    x_all, label_all = _dataset_tensors(records, cfg)
    with torch.no_grad():  # E is frozen, so codes are precomputable
        codes_all = torch.cat([encoder(x_all[i:i + 64])
                               for i in range(0, len(records), 64)])
    n = len(records)
    w = tcfg.weights
    history = []
    for step in range(tcfg.steps):
        idx = torch.randint(0, n, (tcfg.batch_size,), generator=g)
        fidx = torch.randint(0, n, (tcfg.batch_size,), generator=g)
        x, labels, codes = x_all[idx], label_all[idx], codes_all[idx]
        labels_fake = label_all[fidx]
        z = torch.randn(tcfg.batch_size, cfg.code_channels, cfg.code_size,
                        cfg.code_size, generator=g)

        # D_G step
        with torch.no_grad():
            fake = g2(z, labels_fake)
            g1_real = g1(codes, labels)
            g1_fake = g1(z, labels_fake)
        if w.r1_gamma > 0 and tcfg.r1_every and step % tcfg.r1_every == 0:
            x_r1 = x.clone().requires_grad_(True)
            logit_real = d_g(x_r1, g1_real, labels)
            r1 = r1_penalty(logit_real, x_r1)
            d_loss = (F.softplus(-logit_real).mean()
                      + F.softplus(d_g(fake, g1_fake, labels_fake)).mean()
                      + (w.r1_gamma / 2) * r1 * tcfg.r1_every)
        else:
            d_loss = (F.softplus(-d_g(x, g1_real, labels)).mean()
                      + F.softplus(d_g(fake, g1_fake, labels_fake)).mean())
        check_finite(d_loss, "step-2 discriminator loss")
        opt_d.zero_grad()
        d_loss.backward()
        opt_d.step()

        # G2 step
        fidx = torch.randint(0, n, (tcfg.batch_size,), generator=g)
        labels_fake = label_all[fidx]
        z = torch.randn(tcfg.batch_size, cfg.code_channels, cfg.code_size,
                        cfg.code_size, generator=g)
        with torch.no_grad():
            g1_fake = g1(z, labels_fake)
        adv = F.softplus(-d_g(g2(z, labels_fake), g1_fake, labels_fake)).mean()
        check_finite(adv, "step-2 generator loss")
        opt_g.zero_grad()
        adv.backward()
        opt_g.step()

        history.append({"step": step, "d_loss": float(d_loss.detach()),
                        "adv": float(adv.detach())})
        if tcfg.log_every and (step + 1) % tcfg.log_every == 0:
            print(f"step2 {step + 1}/{tcfg.steps} d={d_loss.detach():.4f} "
                  f"adv={adv.detach():.4f}")
    g2.eval()
    d_g.eval()
    return Step2Model(g2, d_g, encoder, g1, cfg), history
