"""Example builder: a small torch generator with taps at each stage.

A builder is any ``fn(checkpoint_path) -> nn.Module``; the bridge imports
this file and calls it. Submodule names (here ``stage1.act`` etc.) are what
an export job's layer mapping refers to.
"""
import torch
from torch import nn


class Stage(nn.Module):
    def __init__(self, c_in, c_out, upsample):
        super().__init__()
        self.up = nn.Upsample(scale_factor=2, mode="nearest") if upsample else nn.Identity()
        self.conv = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.act = nn.LeakyReLU(0.2)

    def forward(self, x):
        return self.act(self.conv(self.up(x)))


class ToyTorchGen(nn.Module):
    def __init__(self, latent_dim=16):
        super().__init__()
        self.latent_dim = latent_dim
        self.fc = nn.Linear(latent_dim, 6 * 8 * 8)
        self.stage1 = Stage(6, 6, upsample=False)
        self.stage2 = Stage(6, 4, upsample=True)
        self.rgb = nn.Conv2d(4, 3, 1)

    def forward(self, z):
        x = self.fc(z).reshape(-1, 6, 8, 8)
        x = self.stage1(x)
        x = self.stage2(x)
        return torch.tanh(self.rgb(x))


def build(checkpoint_path):
    torch.manual_seed(0)
    model = ToyTorchGen()
    if checkpoint_path:
        state = torch.load(checkpoint_path, map_location="cpu", weights_only=True)
        model.load_state_dict(state)
    return model
