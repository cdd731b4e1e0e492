"""The five networks: common/separate encoders, two decoders, code discriminator.

All convolutional blocks are 4x4, stride 2, pad 1. Encoders downsample the
input to a 2x2 bottleneck; decoders mirror them back up. At resolutions below
128 the shallow (widest-spatial) blocks are dropped from the front of the
channel lists so the 2x2 bottleneck and the deep channel widths are kept.
"""

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

FULL_RESOLUTION = 128
FULL_BLOCKS = 6


class ConfigError(ValueError):
    """Raised when a network configuration violates its invariants."""


@dataclass(frozen=True)
class NetConfig:
    resolution: int = 128
    sep: int = 100

    def __post_init__(self):
        n = self.n_blocks
        if 2**n * 2 != self.resolution or n < 2 or n > FULL_BLOCKS:
            raise ConfigError(
                f"resolution must be a power of two in [8, 128], got {self.resolution}"
            )
        if not 0 < 2 * self.sep < 512:
            raise ConfigError(f"sep must satisfy 0 < 2*sep < 512, got {self.sep}")

    @property
    def n_blocks(self) -> int:
        # stride-2 stages needed to reach a 2x2 bottleneck
        return max(int(round(math.log2(max(self.resolution, 1)))) - 1, 0)

    @property
    def common_channels(self) -> list:
        full = [32, 64, 128, 256, 512 - self.sep, 512 - 2 * self.sep]
        return full[FULL_BLOCKS - self.n_blocks :]

    @property
    def separate_channels(self) -> list:
        full = [32, 64, 128, 128, 128, self.sep]
        return full[FULL_BLOCKS - self.n_blocks :]

    @property
    def common_width(self) -> int:
        return 512 - 2 * self.sep

    @property
    def decoder_channels(self) -> list:
        # hidden channels only; the output block is appended by the decoder
        return [512, 256, 128, 64, 32][: self.n_blocks - 1]

    @property
    def code_features(self) -> int:
        return self.common_width * 4


def down_block(c_in: int, c_out: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, 4, stride=2, padding=1),
        nn.BatchNorm2d(c_out),
        nn.LeakyReLU(0.2),
    )


def up_block(c_in: int, c_out: int) -> nn.Sequential:
    return nn.Sequential(
        nn.ConvTranspose2d(c_in, c_out, 4, stride=2, padding=1),
        nn.BatchNorm2d(c_out),
        nn.ReLU(),
    )


class Encoder(nn.Module):
    """Stack of stride-2 conv blocks mapping (3, R, R) to (channels[-1], 2, 2)."""

    def __init__(self, channels: list):
        super().__init__()
        chain = [3] + list(channels)
        self.blocks = nn.Sequential(
            *[down_block(chain[i], chain[i + 1]) for i in range(len(channels))]
        )
        self.out_channels = channels[-1]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.blocks(x)


class Decoder(nn.Module):
    """Stack of stride-2 deconv blocks mapping (in_channels, 2, 2) back up.

    The final block has no normalization and no built-in activation; callers
    apply tanh / sigmoid per output channel.
    """

    def __init__(self, in_channels: int, hidden: list, out_channels: int):
        super().__init__()
        chain = [in_channels] + list(hidden)
        blocks = [up_block(chain[i], chain[i + 1]) for i in range(len(hidden))]
        blocks.append(nn.ConvTranspose2d(chain[-1], out_channels, 4, stride=2, padding=1))
        self.blocks = nn.Sequential(*blocks)
        self.in_channels = in_channels

    def forward(self, code: torch.Tensor) -> torch.Tensor:
        if code.shape[1] != self.in_channels:
            raise ValueError(
                f"decoder expects {self.in_channels} input channels, got {code.shape[1]}"
            )
        return self.blocks(code)


class DecoderA(nn.Module):
    """Decodes a common code into a domain-A image (tanh, 3 channels)."""

    def __init__(self, config: NetConfig):
        super().__init__()
        self.net = Decoder(config.common_width, config.decoder_channels, 3)

    def forward(self, code: torch.Tensor) -> torch.Tensor:
        return torch.tanh(self.net(code))


class DecoderB(nn.Module):
    """Decodes (common, separate) codes into a soft mask and a raw image.

    The two codes are concatenated along channels; the 4-channel output is
    split into sigmoid(channel 0) -> mask and tanh(channels 1-3) -> raw.
    """

    def __init__(self, config: NetConfig):
        super().__init__()
        self.net = Decoder(config.common_width + config.sep, config.decoder_channels, 4)

    def forward(self, common: torch.Tensor, separate: torch.Tensor):
        if common.shape[0] != separate.shape[0]:
            raise ValueError(
                f"batch sizes differ: common {common.shape[0]} vs separate {separate.shape[0]}"
            )
        out = self.net(torch.cat([common, separate], dim=1))
        mask = torch.sigmoid(out[:, :1])
        raw = torch.tanh(out[:, 1:])
        return mask, raw


class CodeDiscriminator(nn.Module):
    """Binary classifier over flattened common codes: 512-wide hidden layer."""

    def __init__(self, config: NetConfig, hidden: int = 512):
        super().__init__()
        self.in_features = config.code_features
        self.hidden = nn.Linear(self.in_features, hidden)
        self.act = nn.LeakyReLU(0.2)
        self.out = nn.Linear(hidden, 1)

    def forward(self, code: torch.Tensor) -> torch.Tensor:
        flat = code.reshape(code.shape[0], -1)
        if flat.shape[1] != self.in_features:
            raise ValueError(
                f"discriminator expects {self.in_features} features, got {flat.shape[1]}"
            )
        return torch.sigmoid(self.out(self.act(self.hidden(flat)))).squeeze(1)


def _init_parameters(module: nn.Module, generator: torch.Generator):
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            with torch.no_grad():
                m.weight.normal_(0.0, 0.02, generator=generator)
                if m.bias is not None:
                    m.bias.zero_()


@dataclass
class ModelBundle:
    """The five networks plus their configuration."""

    e_c: Encoder
    e_s: Encoder
    d_a: DecoderA
    d_b: DecoderB
    c: CodeDiscriminator
    config: NetConfig

    def networks(self) -> dict:
        return {"e_c": self.e_c, "e_s": self.e_s, "d_a": self.d_a, "d_b": self.d_b, "c": self.c}

    def generator_parameters(self):
        for name in ("e_c", "e_s", "d_a", "d_b"):
            yield from self.networks()[name].parameters()

    def train(self):
        for net in self.networks().values():
            net.train()
        return self

    def eval(self):
        for net in self.networks().values():
            net.eval()
        return self

    def to(self, device):
        for net in self.networks().values():
            net.to(device)
        return self

    def double(self):
        for net in self.networks().values():
            net.double()
        return self

    def _check_image(self, x: torch.Tensor):
        r = self.config.resolution
        if x.ndim != 4 or x.shape[1] != 3 or x.shape[2] != r or x.shape[3] != r:
            raise ValueError(f"expected image batch (N, 3, {r}, {r}), got {tuple(x.shape)}")

    def encode_common(self, x: torch.Tensor) -> torch.Tensor:
        self._check_image(x)
        return self.e_c(x)

    def encode_separate(self, x: torch.Tensor) -> torch.Tensor:
        self._check_image(x)
        return self.e_s(x)

    def decode_a(self, common: torch.Tensor) -> torch.Tensor:
        return self.d_a(common)

    def decode_b(self, common: torch.Tensor, separate: torch.Tensor):
        return self.d_b(common, separate)

    def discriminate(self, common: torch.Tensor) -> torch.Tensor:
        return self.c(common)

    def state_dict(self) -> dict:
        out = {}
        for name, net in self.networks().items():
            for key, value in net.state_dict().items():
                out[f"{name}.{key}"] = value
        return out

    def load_state_dict(self, state: dict):
        for name, net in self.networks().items():
            prefix = name + "."
            sub = {k[len(prefix) :]: v for k, v in state.items() if k.startswith(prefix)}
            net.load_state_dict(sub)
        return self


def build_model(config: NetConfig, seed: int) -> ModelBundle:
    """Construct the five networks with deterministic seeded initialization."""
    g = torch.Generator().manual_seed(seed)
    e_c = Encoder(config.common_channels)
    e_s = Encoder(config.separate_channels)
    d_a = DecoderA(config)
    d_b = DecoderB(config)
    c = CodeDiscriminator(config)
    bundle = ModelBundle(e_c, e_s, d_a, d_b, c, config)
    for net in bundle.networks().values():
        _init_parameters(net, g)
    return bundle


def parameter_counts(config: NetConfig) -> dict:
    """Closed-form parameter counts per network (conv: k*k*cin*cout + cout;
    batch norm: 2*c; linear: in*out + out)."""

    def conv(cin, cout):
        return 16 * cin * cout + cout

    def bn(c):
        return 2 * c

    def enc(channels):
        chain = [3] + channels
        return sum(conv(chain[i], chain[i + 1]) + bn(chain[i + 1]) for i in range(len(channels)))

    def dec(cin, hidden, cout):
        chain = [cin] + hidden
        total = sum(
            conv(chain[i], chain[i + 1]) + bn(chain[i + 1]) for i in range(len(hidden))
        )
        return total + conv(chain[-1], cout)

    f = config.code_features
    return {
        "e_c": enc(config.common_channels),
        "e_s": enc(config.separate_channels),
        "d_a": dec(config.common_width, config.decoder_channels, 3),
        "d_b": dec(config.common_width + config.sep, config.decoder_channels, 4),
        "c": (f * 512 + 512) + (512 + 1),
    }
