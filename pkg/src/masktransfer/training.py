"""Alternating generator/discriminator optimization with deterministic
resume and a language-neutral single-file checkpoint format.

Checkpoint container: 8-byte magic, 8-byte little-endian manifest length, a
JSON manifest (names, shapes, dtypes, offsets, config, step), then the raw
little-endian tensor payloads concatenated in manifest order.
"""

import io
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import losses as L
from .data import BatchStream, UnpairedDataset
from .losses import LossReport, LossWeights, NonFiniteLoss
from .networks import ModelBundle, NetConfig, build_model

MAGIC = b"MTCKPT01"
FORMAT_VERSION = 1
_DTYPES = {"float32": np.float32, "float64": np.float64, "int64": np.int64, "uint8": np.uint8}


class CheckpointError(RuntimeError):
    """Raised for corrupt, incompatible or truncated checkpoint files."""


class TrainingAborted(RuntimeError):
    """Raised when a training step produces a non-finite loss."""


def get_device() -> torch.device:
    return torch.device(os.environ.get("MBU_DEVICE", "cpu"))


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 1000
    batch_size: int = 32
    learning_rate: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    checkpoint_every: int = 1000
    resolution: int = 64
    sep: int = 100

    def __post_init__(self):
        for name in ("steps", "batch_size", "checkpoint_every", "resolution", "sep"):
            if getattr(self, name) < (0 if name == "steps" else 1):
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")

    @property
    def net_config(self) -> NetConfig:
        return NetConfig(resolution=self.resolution, sep=self.sep)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights"]["dropped"] = sorted(self.weights.dropped)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        w = dict(d.pop("weights"))
        w["dropped"] = frozenset(w.get("dropped", ()))
        return cls(weights=LossWeights(**w), **d)


@dataclass
class Checkpoint:
    config: TrainConfig
    step: int
    model_state: dict
    opt_gen: dict | None = None
    opt_disc: dict | None = None
    torch_rng: torch.Tensor | None = None

    def bundle(self, device=None) -> ModelBundle:
        """Rebuild the frozen model from this checkpoint."""
        bundle = build_model(self.config.net_config, self.config.seed)
        bundle.load_state_dict(self.model_state)
        bundle.eval()
        if device is not None:
            bundle.to(device)
        return bundle


def make_optimizers(bundle: ModelBundle, config: TrainConfig):
    kw = dict(lr=config.learning_rate, betas=(config.beta1, config.beta2))
    gen = torch.optim.Adam(list(bundle.generator_parameters()), **kw)
    disc = torch.optim.Adam(list(bundle.c.parameters()), **kw)
    return gen, disc


def train_step(bundle, batch_a, batch_b, weights, gen_opt, disc_opt, step: int = -1) -> LossReport:
    """One alternating update: generator-side networks first, then the
    discriminator on fresh forward passes with detached codes."""
    total, report = L.total_loss(bundle, batch_a, batch_b, weights)
    report.step = step
    gen_opt.zero_grad(set_to_none=True)
    disc_opt.zero_grad(set_to_none=True)
    if total.requires_grad:
        total.backward()
    gen_opt.step()

    d_loss = L.discriminator_loss(bundle, batch_a, batch_b)
    value = float(d_loss.detach())
    if not np.isfinite(value):
        raise NonFiniteLoss("disc", value)
    disc_opt.zero_grad(set_to_none=True)
    d_loss.backward()
    disc_opt.step()
    report.disc = value
    return report


def train(
    config: TrainConfig,
    dataset: UnpairedDataset,
    out_dir=None,
    resume: Checkpoint | None = None,
    device=None,
    log_every: int = 0,
) -> Checkpoint:
    """Run the training loop and return the final checkpoint.

    Writes `ckpt_<step>` files every `checkpoint_every` steps, `ckpt_final`
    at the end, and a `log.jsonl` loss log when `out_dir` is given.
    """
    if dataset.resolution != config.resolution:
        raise ValueError(
            f"dataset resolution {dataset.resolution} != config resolution {config.resolution}"
        )
    device = device or get_device()
    torch.manual_seed(config.seed)
    bundle = build_model(config.net_config, config.seed).to(device)
    gen_opt, disc_opt = make_optimizers(bundle, config)
    start_step = 0
    if resume is not None:
        # steps and checkpoint cadence may change on resume; everything that
        # affects the model or the batch sequence must match
        def essentials(c):
            d = c.to_dict()
            d.pop("steps")
            d.pop("checkpoint_every")
            return d

        if essentials(resume.config) != essentials(config):
            raise ValueError("resume checkpoint config differs from requested config")
        bundle.load_state_dict(resume.model_state)
        if resume.opt_gen:
            gen_opt.load_state_dict(resume.opt_gen)
        if resume.opt_disc:
            disc_opt.load_state_dict(resume.opt_disc)
        if resume.torch_rng is not None:
            torch.set_rng_state(resume.torch_rng.cpu().to(torch.uint8))
        start_step = resume.step

    stream = BatchStream(dataset, config.batch_size, config.seed)
    stream.seek(start_step)
    bundle.train()

    out_dir = Path(out_dir) if out_dir is not None else None
    log_file = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_file = open(out_dir / "log.jsonl", "a" if start_step else "w")

    def snapshot(step):
        return Checkpoint(
            config=config,
            step=step,
            model_state={k: v.detach().cpu().clone() for k, v in bundle.state_dict().items()},
            opt_gen=gen_opt.state_dict(),
            opt_disc=disc_opt.state_dict(),
            torch_rng=torch.get_rng_state().clone(),
        )

    last_saved = None
    try:
        for step in range(start_step, config.steps):
            batch_a, batch_b = stream.next_batch()
            try:
                report = train_step(
                    bundle, batch_a.to(device), batch_b.to(device), config.weights,
                    gen_opt, disc_opt, step,
                )
            except NonFiniteLoss as exc:
                raise TrainingAborted(
                    f"aborting at step {step}: {exc}; last good checkpoint: {last_saved}"
                ) from exc
            if log_file is not None:
                log_file.write(report.to_json() + "\n")
                if log_every and (step + 1) % log_every == 0:
                    log_file.flush()
                    print(f"step {step + 1}/{config.steps} total={report.total:.4f}", flush=True)
            if out_dir is not None and (step + 1) % config.checkpoint_every == 0:
                last_saved = out_dir / f"ckpt_{step + 1:06d}"
                save_checkpoint(snapshot(step + 1), last_saved)
        final = snapshot(config.steps)
        if out_dir is not None:
            save_checkpoint(final, out_dir / "ckpt_final")
        return final
    finally:
        if log_file is not None:
            log_file.close()


def _flatten_opt(state: dict | None, prefix: str, tensors: dict, manifest: dict):
    if state is None:
        return
    manifest[prefix] = {"param_groups": state["param_groups"], "state_keys": {}}
    for idx, entry in state["state"].items():
        keys = {}
        for key, value in entry.items():
            if isinstance(value, torch.Tensor):
                tensors[f"{prefix}.{idx}.{key}"] = value
                keys[key] = "tensor"
            else:
                keys[key] = value
        manifest[prefix]["state_keys"][str(idx)] = keys


def _unflatten_opt(prefix: str, tensors: dict, manifest: dict) -> dict | None:
    if prefix not in manifest:
        return None
    info = manifest[prefix]
    state = {}
    for idx, keys in info["state_keys"].items():
        entry = {}
        for key, marker in keys.items():
            entry[key] = tensors[f"{prefix}.{idx}.{key}"] if marker == "tensor" else marker
        state[int(idx)] = entry
    return {"state": state, "param_groups": info["param_groups"]}


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Serialize a checkpoint; identical checkpoints produce identical bytes."""
    tensors = dict(ckpt.model_state)
    manifest = {
        "format": FORMAT_VERSION,
        "step": ckpt.step,
        "config": ckpt.config.to_dict(),
        "tensors": [],
    }
    _flatten_opt(ckpt.opt_gen, "opt_gen", tensors, manifest)
    _flatten_opt(ckpt.opt_disc, "opt_disc", tensors, manifest)
    if ckpt.torch_rng is not None:
        tensors["torch_rng"] = ckpt.torch_rng

    payload = io.BytesIO()
    offset = 0
    for name in sorted(tensors):
        arr = tensors[name].detach().cpu().numpy()
        if arr.dtype.name not in _DTYPES:
            arr = arr.astype(np.float32)
        data = np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes()
        manifest["tensors"].append(
            {
                "name": name,
                "shape": list(arr.shape),
                "dtype": arr.dtype.name,
                "offset": offset,
                "nbytes": len(data),
            }
        )
        payload.write(data)
        offset += len(data)

    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(len(blob).to_bytes(8, "little"))
        f.write(blob)
        f.write(payload.getvalue())
    os.replace(tmp, path)


def load_checkpoint(path, expect_config: TrainConfig | None = None) -> Checkpoint:
    path = Path(path)
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file (bad magic)")
    n = int.from_bytes(raw[8:16], "little")
    try:
        manifest = json.loads(raw[16 : 16 + n].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint manifest in {path}") from exc
    if manifest.get("format") != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {manifest.get('format')} != {FORMAT_VERSION}"
        )
    base = 16 + n
    tensors = {}
    for entry in manifest["tensors"]:
        lo = base + entry["offset"]
        hi = lo + entry["nbytes"]
        if hi > len(raw):
            raise CheckpointError(f"truncated checkpoint {path}")
        dtype = np.dtype(_DTYPES[entry["dtype"]]).newbyteorder("<")
        arr = np.frombuffer(raw[lo:hi], dtype=dtype).reshape(entry["shape"])
        tensors[entry["name"]] = torch.from_numpy(arr.astype(entry["dtype"], copy=True))

    config = TrainConfig.from_dict(manifest["config"])
    if expect_config is not None and (
        config.resolution != expect_config.resolution or config.sep != expect_config.sep
    ):
        raise CheckpointError(
            f"checkpoint config mismatch: file has resolution={config.resolution}, "
            f"sep={config.sep}; expected resolution={expect_config.resolution}, "
            f"sep={expect_config.sep}"
        )
    rng = tensors.pop("torch_rng", None)
    opt_gen = _unflatten_opt("opt_gen", tensors, manifest)
    opt_disc = _unflatten_opt("opt_disc", tensors, manifest)
    model_state = {
        k: v for k, v in tensors.items() if not k.startswith(("opt_gen.", "opt_disc."))
    }
    return Checkpoint(
        config=config,
        step=manifest["step"],
        model_state=model_state,
        opt_gen=opt_gen,
        opt_disc=opt_disc,
        torch_rng=rng.to(torch.uint8) if rng is not None else None,
    )
