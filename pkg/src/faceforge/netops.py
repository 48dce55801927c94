"""Small shared torch utilities: seeding, MLP builder, R1, checkpoints."""
from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

CHECKPOINT_FORMAT = 1


def seed_all(seed: int) -> torch.Generator:
    """Seed torch's global RNG and return a dedicated generator."""
    torch.manual_seed(seed)
    g = torch.Generator()
    g.manual_seed(seed)
    return g


def mlp(sizes: list[int], act=nn.ELU) -> nn.Sequential:
    """Fully connected stack with smooth activations between layers."""
    layers = []
    for i in range(len(sizes) - 1):
        layers.append(nn.Linear(sizes[i], sizes[i + 1]))
        if i < len(sizes) - 2:
            layers.append(act())
    return nn.Sequential(*layers)


def to_tensor(arr: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    """HWC numpy map -> CHW tensor (batched input stays NCHW)."""
    t = torch.from_numpy(np.ascontiguousarray(arr)).to(dtype)
    if t.ndim == 3:
        t = t.permute(2, 0, 1)
    elif t.ndim == 4:
        t = t.permute(0, 3, 1, 2)
    return t


def to_numpy(t: torch.Tensor) -> np.ndarray:
    """CHW/NCHW tensor -> HWC/NHWC float32 numpy."""
    t = t.detach()
    if t.ndim == 3:
        t = t.permute(1, 2, 0)
    elif t.ndim == 4:
        t = t.permute(0, 2, 3, 1)
    return t.cpu().numpy().astype(np.float32)


def r1_penalty(d_out: torch.Tensor, real_in: torch.Tensor) -> torch.Tensor:
    """Mean squared gradient norm of the discriminator at its real inputs."""
    grad, = torch.autograd.grad(d_out.sum(), real_in, create_graph=True)
    return grad.reshape(grad.shape[0], -1).pow(2).sum(dim=1).mean()


def count_params(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def params_fingerprint(modules: dict) -> str:
    """Stable hex digest over all parameter bytes, for staleness checks."""
    import hashlib
    h = hashlib.sha256()
    for name in sorted(modules):
        for key, tensor in sorted(modules[name].state_dict().items()):
            h.update(name.encode())
            h.update(key.encode())
            h.update(tensor.detach().cpu().numpy().tobytes())
    return h.hexdigest()[:16]


def save_checkpoint(path: Path, modules: dict, config: dict) -> None:
    """Versioned container: named parameter tensors plus a config dict."""
    payload = {
        "format_version": CHECKPOINT_FORMAT,
        "config": config,
        "state": {name: m.state_dict() for name, m in modules.items()},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path: Path) -> tuple[dict, dict]:
    """Returns (state dicts by module name, config)."""
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format: {version}")
    return payload["state"], payload["config"]


def check_finite(value: torch.Tensor, what: str) -> None:
    if not torch.isfinite(value).all():
        raise FloatingPointError(f"non-finite {what}: training diverged")
