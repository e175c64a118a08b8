"""Progressive three-phase training, checkpointing, and the restore pipeline.

Phases run in order DENOISE -> SR -> JOINT. The denoising phase teaches the
conditional noise predictor on the volume's own shallow (low-noise) slices;
the SR phase trains the grid accumulator and decode head against the native
lateral slices; the joint phase couples both directions with the full
cycle-consistent objective. Training never reads clean ground truth: the
low-z quartile of each degraded volume serves as the clean-domain sample.

Every random draw comes from a generator keyed on (seed, phase, epoch,
step), so a run is reproducible and a resumed run replays the identical
stream from the checkpointed epoch onward.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np
import torch

from . import losses as L
from .denoiser import DenoiserModel, EditConfig, Hyperplane, denoise_volume, fit_hyperplane
from .diffusion import make_linear_schedule
from .errors import DegeneracyError, FormatError, TrainingAborted, ValidationError
from .networks import ConditionalUNet, FrozenEncoder, PatchDiscriminator, ResidualMapper
from .phantom import DatasetManifest, load_volume
from .srm import SrmModel, accumulate_grid, interp_grid, upsample_axis_last, super_resolve_volume
from .volume import Volume3D, step_of_index

CHECKPOINT_MAGIC = b"VTCDCKP1"
CHECKPOINT_VERSION = 1


class Phase(IntEnum):
    DENOISE = 0
    SR = 1
    JOINT = 2


def default_loss_weights() -> L.LossWeights:
    """Base weights with the per-phase schedule zeroing inactive groups."""
    return L.LossWeights(
        phase_schedule={
            Phase.DENOISE.name: {"w_cyc": 0.0, "w_content": 0.0, "w_id": 0.0},
            Phase.SR.name: {"w_diff": 0.0, "w_tv": 0.0, "w_id": 0.0},
            Phase.JOINT.name: {},
        }
    )


@dataclass(frozen=True)
class TrainConfig:
    epochs_per_phase: tuple[int, int, int] = (2, 2, 2)
    learning_rate: float = 5e-3
    weight_decay: float = 1e-5
    amsgrad: bool = True
    batch_size: int = 8
    T: int = 16
    beta_start: float = 2e-4
    beta_end: float = 8e-3
    seed: int = 0
    loss_weights: L.LossWeights = field(default_factory=default_loss_weights)
    sr_scale: int = 4
    # small negative strength deflates the noisy-direction component; measured
    # more reliable than amplification at desk scale
    lambda_edit: float = -0.02
    base_channels: int = 16
    feat_channels: int = 8
    disc_channels: int = 16
    acc_hidden: int = 32
    sr_slices_per_step: int = 4
    use_analytic_cycle: bool = False
    apply_yz: bool = False
    restore_stochastic: bool = False

    def __post_init__(self):
        if len(self.epochs_per_phase) != 3 or any(e < 0 for e in self.epochs_per_phase):
            raise ValidationError(f"epochs_per_phase must be 3 counts >= 0, got {self.epochs_per_phase}")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be > 0")
        if self.T < 1 or self.batch_size < 1 or self.sr_scale < 1:
            raise ValidationError("T, batch_size and sr_scale must be >= 1")
        object.__setattr__(self, "epochs_per_phase", tuple(int(e) for e in self.epochs_per_phase))

    def as_dict(self) -> dict:
        d = asdict(self)
        d["epochs_per_phase"] = list(self.epochs_per_phase)
        d["loss_weights"] = {
            **self.loss_weights.as_dict(),
            "phase_schedule": self.loss_weights.phase_schedule,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "loss_weights" in d:
            lw = dict(d["loss_weights"])
            schedule = lw.pop("phase_schedule", {})
            d["loss_weights"] = L.LossWeights(phase_schedule=schedule, **lw)
        if "epochs_per_phase" in d:
            d["epochs_per_phase"] = tuple(d["epochs_per_phase"])
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.as_dict(), sort_keys=True, indent=1), encoding="utf-8")


@dataclass
class Checkpoint:
    phase: str
    epoch: int
    blobs: dict
    config: TrainConfig
    extras: dict = field(default_factory=dict)
    format_version: int = CHECKPOINT_VERSION


def _keyed_torch_gen(seed: int, *keys: int) -> torch.Generator:
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *[int(k) & 0xFFFFFFFF for k in keys]])
    g = torch.Generator()
    g.manual_seed(int(ss.generate_state(1, dtype=np.uint64)[0]) & 0x7FFFFFFFFFFFFFFF)
    return g


def _keyed_np_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *[int(k) & 0xFFFFFFFF for k in keys]])
    )


class TrainState:
    """All trainable components plus their two optimizers."""

    def __init__(self, config: TrainConfig):
        self.config = config
        s = config.seed
        self.encoder = FrozenEncoder(channels=config.feat_channels, seed=s + 1000)
        self.unet = ConditionalUNet(base=config.base_channels, seed=s)
        self.srm = SrmModel(
            encoder=self.encoder,
            acc_hidden=config.acc_hidden,
            seed=s + 4000,
            apply_yz=config.apply_yz,
        )
        self.d_clean = PatchDiscriminator(base=config.disc_channels, seed=s + 2000)
        self.d_hr = PatchDiscriminator(base=config.disc_channels, seed=s + 3000)
        self.rev_noise = ResidualMapper(seed=s + 5000)
        self.rev_lr = ResidualMapper(seed=s + 6000)
        self.hyperplane: Hyperplane | None = None

        self.g_params = (
            list(self.unet.parameters())
            + list(self.srm.accumulator.parameters())
            + list(self.srm.decode_head.parameters())
            + list(self.rev_noise.parameters())
            + list(self.rev_lr.parameters())
        )
        self.d_params = list(self.d_clean.parameters()) + list(self.d_hr.parameters())
        self.opt_g = torch.optim.Adam(
            self.g_params,
            lr=config.learning_rate,
            weight_decay=config.weight_decay,
            amsgrad=config.amsgrad,
        )
        self.opt_d = torch.optim.Adam(
            self.d_params,
            lr=config.learning_rate,
            weight_decay=config.weight_decay,
            amsgrad=config.amsgrad,
        )

    def modules(self) -> dict:
        return {
            "encoder": self.encoder,
            "unet": self.unet,
            "srm.accumulator": self.srm.accumulator,
            "srm.decode_head": self.srm.decode_head,
            "d_clean": self.d_clean,
            "d_hr": self.d_hr,
            "rev_noise": self.rev_noise,
            "rev_lr": self.rev_lr,
        }

    def denoiser_model(self) -> DenoiserModel:
        return DenoiserModel(predictor=self.unet, encoder=self.encoder)

    def collect_blobs(self) -> dict:
        blobs = {}
        for prefix, module in self.modules().items():
            for name, tensor in module.state_dict().items():
                blobs[f"{prefix}.{name}"] = tensor.detach().cpu().numpy().copy()
        for opt_name, opt, params in (
            ("opt_g", self.opt_g, self.g_params),
            ("opt_d", self.opt_d, self.d_params),
        ):
            opt_state = opt.state_dict()["state"]
            for idx in range(len(params)):
                if idx not in opt_state:
                    continue
                for key, val in opt_state[idx].items():
                    arr = val.detach().cpu().numpy() if isinstance(val, torch.Tensor) else np.asarray(val)
                    blobs[f"{opt_name}.{idx}.{key}"] = np.asarray(arr, dtype=np.float64 if arr.ndim == 0 else None)
        if self.hyperplane is not None:
            blobs["hyperplane.n"] = self.hyperplane.n.copy()
        return blobs

    def load_blobs(self, blobs: dict, extras: dict) -> None:
        for prefix, module in self.modules().items():
            sd = {}
            for name, tensor in module.state_dict().items():
                key = f"{prefix}.{name}"
                if key not in blobs:
                    raise FormatError(f"checkpoint missing parameter blob {key}")
                sd[name] = torch.from_numpy(np.array(blobs[key])).to(tensor.dtype)
            module.load_state_dict(sd)
        for opt_name, opt, params in (
            ("opt_g", self.opt_g, self.g_params),
            ("opt_d", self.opt_d, self.d_params),
        ):
            state = {}
            for idx in range(len(params)):
                entry = {}
                for key in ("step", "exp_avg", "exp_avg_sq", "max_exp_avg_sq"):
                    bkey = f"{opt_name}.{idx}.{key}"
                    if bkey in blobs:
                        arr = blobs[bkey]
                        t = torch.from_numpy(np.array(arr))
                        if key == "step":
                            t = t.to(torch.float32).reshape(())
                        else:
                            t = t.to(torch.float32)
                        entry[key] = t
                if entry:
                    state[idx] = entry
            sd = opt.state_dict()
            sd["state"] = state
            opt.load_state_dict(sd)
        if "hyperplane.n" in blobs:
            self.hyperplane = Hyperplane(
                n=blobs["hyperplane.n"],
                fit_accuracy=float(extras.get("hyperplane_accuracy", 0.0)),
                orientation=int(extras.get("hyperplane_orientation", 1)),
            )
        else:
            self.hyperplane = None


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Versioned container: JSON manifest plus raw little-endian payloads."""
    names = sorted(ckpt.blobs)
    manifest = {
        "format_version": ckpt.format_version,
        "phase": ckpt.phase,
        "epoch": ckpt.epoch,
        "config": ckpt.config.as_dict(),
        "extras": ckpt.extras,
        "blobs": [
            {
                "name": name,
                "dtype": str(np.asarray(ckpt.blobs[name]).dtype),
                "shape": list(np.asarray(ckpt.blobs[name]).shape),
            }
            for name in names
        ],
    }
    header = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for name in names:
            arr = np.asarray(ckpt.blobs[name])
            fh.write(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:8] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a VTCD checkpoint (bad magic)")
    (hlen,) = struct.unpack("<I", raw[8:12])
    if len(raw) < 12 + hlen:
        raise FormatError(f"{path}: truncated checkpoint header")
    manifest = json.loads(raw[12 : 12 + hlen].decode("utf-8"))
    version = manifest.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise FormatError(
            f"{path}: checkpoint format version {version}, this build supports {CHECKPOINT_VERSION}"
        )
    offset = 12 + hlen
    blobs = {}
    for spec in manifest["blobs"]:
        dtype = np.dtype(spec["dtype"]).newbyteorder("<")
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        nbytes = dtype.itemsize * count
        chunk = raw[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise FormatError(f"{path}: truncated payload for blob {spec['name']}")
        arr = np.frombuffer(chunk, dtype=dtype).reshape(spec["shape"]).astype(np.dtype(spec["dtype"]))
        blobs[spec["name"]] = arr
        offset += nbytes
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes after payloads")
    return Checkpoint(
        phase=manifest["phase"],
        epoch=manifest["epoch"],
        blobs=blobs,
        config=TrainConfig.from_dict(manifest["config"]),
        extras=manifest["extras"],
        format_version=version,
    )


def _gaussian_kernel1d(sigma: float) -> torch.Tensor:
    radius = max(1, int(4.0 * sigma + 0.5))
    xs = torch.arange(-radius, radius + 1, dtype=torch.float32)
    k = torch.exp(-0.5 * (xs / sigma) ** 2)
    return k / k.sum()


def blur_last_axis(x: torch.Tensor, sigma: float) -> torch.Tensor:
    """Gaussian blur along the last axis with edge replication."""
    if sigma <= 0:
        return x
    k = _gaussian_kernel1d(sigma)
    radius = (len(k) - 1) // 2
    orig_shape = x.shape
    flat = x.reshape(-1, 1, orig_shape[-1])
    padded = torch.nn.functional.pad(flat, (radius, radius), mode="replicate")
    out = torch.nn.functional.conv1d(padded, k[None, None])
    return out.reshape(orig_shape)


def blockavg_last_axis(x: torch.Tensor, s: int) -> torch.Tensor:
    if s == 1:
        return x
    n = x.shape[-1]
    return x.reshape(*x.shape[:-1], n // s, s).mean(dim=-1)


def _tv_batch(batch: torch.Tensor) -> torch.Tensor:
    """Mean TV over a (B,1,H,W) batch of slices."""
    return torch.stack([L.tv_loss(batch[i, 0]) for i in range(batch.shape[0])]).mean()


class _Trainer:
    def __init__(self, config: TrainConfig, manifest: DatasetManifest, out_dir: Path):
        if not manifest.entries:
            raise ValidationError("manifest has no entries")
        if not manifest.train_indices:
            raise ValidationError("manifest has an empty train split")
        self.config = config
        self.out_dir = out_dir
        self.state = TrainState(config)
        self.sched = make_linear_schedule(config.T, config.beta_start, config.beta_end)
        self.sqrt_ab = torch.tensor(
            np.sqrt(np.concatenate([[1.0], self.sched.alphas_bar])), dtype=torch.float32
        )
        self.sqrt_1mab = torch.tensor(
            np.sqrt(1.0 - np.concatenate([[1.0], self.sched.alphas_bar])), dtype=torch.float32
        )
        self.volumes = []
        for idx in manifest.train_indices:
            _, degraded_path = manifest.volume_paths(idx)
            vol = load_volume(degraded_path)
            self.volumes.append(
                {
                    "tensor": torch.from_numpy(np.array(vol.data)),
                    "dspec": manifest.entries[idx].degradation_spec,
                }
            )
        self._hyperplane_fitted = False
        self._hyperplane_cache = None

    # -- slice sampling -------------------------------------------------

    def _proxy_count(self, c: int) -> int:
        return max(1, math.ceil(c / 4))

    def _sample_proxy_slices(self, vol_t: torch.Tensor, count: int, gen) -> torch.Tensor:
        """Low-z quartile slices: the volume's own clean-domain samples."""
        c = vol_t.shape[2]
        n_proxy = self._proxy_count(c)
        idx = torch.randint(0, n_proxy, (count,), generator=gen)
        return vol_t[:, :, idx].permute(2, 0, 1)[:, None]

    def _sample_deep_slices(self, vol_t: torch.Tensor, count: int, gen):
        c = vol_t.shape[2]
        if c < 2:
            raise ValidationError("training volumes need at least 2 axial slices")
        zidx = torch.randint(1, c, (count,), generator=gen)
        x = vol_t[:, :, zidx].permute(2, 0, 1)[:, None]
        cond = vol_t[:, :, zidx - 1].permute(2, 0, 1)[:, None]
        t = torch.tensor(
            [max(1, step_of_index(int(z), c, self.config.T)) for z in zidx], dtype=torch.long
        )
        return x, cond, t

    # -- loss branches ---------------------------------------------------

    def _denoise_parts(self, vol_t: torch.Tensor, gen, with_cycle: bool, with_identity: bool):
        cfg = self.config
        b = cfg.batch_size
        x0 = self._sample_proxy_slices(vol_t, b, gen)
        cond0 = x0.roll(1, dims=0)  # condition on other clean-domain slices
        t = torch.randint(1, cfg.T + 1, (b,), generator=gen)
        eps = torch.randn(x0.shape, generator=gen)
        sab = self.sqrt_ab[t][:, None, None, None]
        s1m = self.sqrt_1mab[t][:, None, None, None]
        attenuate = torch.randint(0, 2, (b,), generator=gen)[:, None, None, None].float()
        x_t = attenuate * (sab * x0 + s1m * eps) + (1 - attenuate) * (x0 + s1m * eps)
        eps_target = (x_t - sab * x0) / s1m
        eps_hat = self.state.unet(x_t, t, cond0)
        diff = L.diffusion_loss(eps_target, eps_hat)

        x_real, cond_real, t_real = self._sample_deep_slices(vol_t, b, gen)
        eps_real = self.state.unet(x_real, t_real, cond_real)
        sab_r = self.sqrt_ab[t_real][:, None, None, None]
        s1m_r = self.sqrt_1mab[t_real][:, None, None, None]
        x0_real = (x_real - s1m_r * eps_real) / sab_r
        tv = _tv_batch(x0_real)
        adv_g = L.adversarial_g(self.state.d_clean(x0_real))

        cyc = x0.new_zeros(())
        if with_cycle:
            re = x0_real if self.config.use_analytic_cycle else self.state.rev_noise(x0_real)
            cyc = L.cycle_consistency(x_real, re)
        ident = x0.new_zeros(())
        if with_identity:
            t1 = torch.ones(b, dtype=torch.long)
            eps_id = self.state.unet(x0, t1, x0)
            x0_id = (x0 - self.sqrt_1mab[1] * eps_id) / self.sqrt_ab[1]
            ident = L.identity_loss(x0, x0_id)

        fakes = x0_real.detach()
        reals = x0
        return diff, tv, adv_g, cyc, ident, reals.detach(), fakes

    def _sr_parts(self, vol_entry: dict, gen, learned_reverse: bool):
        cfg = self.config
        vol_t = vol_entry["tensor"]
        dspec = vol_entry["dspec"]
        h, w, c = vol_t.shape
        s = cfg.sr_scale
        grid = accumulate_grid(interp_grid(self.state.srm.encode_stack(vol_t), s), self.state.srm)
        y_idx = torch.randint(0, w, (cfg.sr_slices_per_step,), generator=gen)
        lr = vol_t[:, y_idx, :].permute(1, 0, 2)  # (B, H, C)
        up = upsample_axis_last(lr, s * c)
        planes = grid[:, :, y_idx, :].permute(2, 0, 1, 3)  # (B, d, H, C')
        res = self.state.srm.decode_head(planes)[:, 0]
        sr = up + res

        down = blockavg_last_axis(blur_last_axis(sr, dspec.axial_blur_sigma), s)
        if learned_reverse and not cfg.use_analytic_cycle:
            down = self.state.rev_lr(down[:, None])[:, 0]
        cyc = L.cycle_consistency(lr, down)
        content = L.content_loss(sr[:, None], up[:, None], self.encoder_feats)

        z_idx = torch.randint(0, c, (cfg.sr_slices_per_step,), generator=gen)
        real_xy = vol_t[:, :, z_idx].permute(2, 0, 1)[:, None]
        fake = sr[:, None]
        adv_g = L.adversarial_g(self.state.d_hr(fake))
        return cyc, content, adv_g, real_xy, fake.detach()

    def encoder_feats(self, x: torch.Tensor) -> torch.Tensor:
        return self.state.encoder(x)

    # -- epochs -----------------------------------------------------------

    def run_epoch(self, phase: Phase, epoch: int) -> L.LossBreakdown:
        cfg = self.config
        weights = cfg.loss_weights.active_for(phase.name)
        order = _keyed_np_rng(cfg.seed, phase.value, epoch, 777).permutation(len(self.volumes))
        sums = {k: 0.0 for k in ("adv_g", "adv_d", "cyc", "id", "tv", "content", "diff")}
        steps = 0
        for step, vol_i in enumerate(order):
            entry = self.volumes[int(vol_i)]
            gen = _keyed_torch_gen(cfg.seed, phase.value, epoch, step)
            parts, d_pairs = self._step_parts(phase, entry, gen)
            g_loss = (
                weights.w_adv * parts["adv_g"]
                + weights.w_diff * parts["diff"]
                + weights.w_tv * parts["tv"]
                + weights.w_cyc * parts["cyc"]
                + weights.w_content * parts["content"]
                + weights.w_id * parts["id"]
            )
            if not torch.isfinite(g_loss):
                raise TrainingAborted(
                    f"non-finite generator loss in {phase.name} epoch {epoch}; last checkpoint kept"
                )
            self.opt_g.zero_grad(set_to_none=True)
            g_loss.backward()
            self.opt_g.step()

            adv_d = torch.zeros(())
            for disc, real, fake in d_pairs:
                adv_d = adv_d + L.adversarial_d(disc(real), disc(fake))
            if len(d_pairs) and weights.w_adv > 0:
                d_loss = weights.w_adv * adv_d
                if not torch.isfinite(d_loss):
                    raise TrainingAborted(
                        f"non-finite discriminator loss in {phase.name} epoch {epoch}; last checkpoint kept"
                    )
                self.opt_d.zero_grad(set_to_none=True)
                d_loss.backward()
                self.opt_d.step()

            for key, val in parts.items():
                sums[key] += float(val.detach()) if isinstance(val, torch.Tensor) else float(val)
            sums["adv_d"] += float(adv_d.detach())
            steps += 1
        means = {k: v / max(steps, 1) for k, v in sums.items()}
        breakdown = L.total_loss(L.LossBreakdown(**means), cfg.loss_weights, phase.name)
        return breakdown.detached()

    @property
    def opt_g(self):
        return self.state.opt_g

    @property
    def opt_d(self):
        return self.state.opt_d

    def _step_parts(self, phase: Phase, entry: dict, gen):
        zero = torch.zeros(())
        parts = {"adv_g": zero, "cyc": zero, "id": zero, "tv": zero, "content": zero, "diff": zero}
        d_pairs = []
        if phase in (Phase.DENOISE, Phase.JOINT):
            diff, tv, adv_g_dn, cyc_dn, ident, reals, fakes = self._denoise_parts(
                entry["tensor"], gen, with_cycle=phase is Phase.JOINT, with_identity=phase is Phase.JOINT
            )
            parts["diff"] = diff
            parts["tv"] = tv
            parts["adv_g"] = parts["adv_g"] + adv_g_dn
            parts["cyc"] = parts["cyc"] + cyc_dn
            parts["id"] = ident
            d_pairs.append((self.state.d_clean, reals, fakes))
        if phase in (Phase.SR, Phase.JOINT):
            cyc_sr, content, adv_g_sr, real_xy, fake_sr = self._sr_parts(
                entry, gen, learned_reverse=phase is Phase.JOINT
            )
            parts["cyc"] = parts["cyc"] + cyc_sr
            parts["content"] = content
            parts["adv_g"] = parts["adv_g"] + adv_g_sr
            d_pairs.append((self.state.d_hr, real_xy, fake_sr))
        return parts, d_pairs

    def fit_hyperplane_from_volumes(self):
        # the encoder is frozen, so the fit is a constant of the dataset
        if self._hyperplane_fitted:
            self.state.hyperplane = self._hyperplane_cache
            return
        model = self.state.denoiser_model()
        lows, highs = [], []
        for entry in self.volumes:
            vol = entry["tensor"].numpy()
            c = vol.shape[2]
            n_proxy = self._proxy_count(c)
            for z in range(n_proxy):
                lows.append(model.encode_latent(vol[:, :, z]))
            for z in range(c - n_proxy, c):
                highs.append(model.encode_latent(vol[:, :, z]))
        try:
            self.state.hyperplane = fit_hyperplane(np.stack(lows), np.stack(highs))
        except DegeneracyError:
            self.state.hyperplane = None
        self._hyperplane_cache = self.state.hyperplane
        self._hyperplane_fitted = True


def _epoch_plan(config: TrainConfig):
    plan = []
    for phase, count in zip(Phase, config.epochs_per_phase):
        for e in range(count):
            plan.append((phase, e))
    return plan


def train(
    config: TrainConfig,
    manifest: DatasetManifest,
    out_dir,
    resume_from: Checkpoint | None = None,
) -> Checkpoint:
    """Run the progressive schedule; returns (and writes) the final checkpoint.

    A checkpoint is written to ``out_dir/checkpoint.ckpt`` before training
    and after every epoch, so a non-finite loss abort always leaves the last
    good state on disk. ``resume_from`` continues after its recorded epoch
    and replays the identical random streams.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trainer = _Trainer(config, manifest, out_dir)
    log_path = out_dir / "loss_log.jsonl"
    ckpt_path = out_dir / "checkpoint.ckpt"

    completed = 0
    if resume_from is not None:
        if resume_from.config.as_dict() != config.as_dict():
            raise ValidationError("resume checkpoint was produced by a different config")
        trainer.state.load_blobs(resume_from.blobs, resume_from.extras)
        completed = int(resume_from.extras.get("completed_epochs", 0))
    else:
        log_path.write_text("", encoding="utf-8")

    plan = _epoch_plan(config)

    def _snapshot(phase_name: str, epoch: int, done: int) -> Checkpoint:
        trainer.fit_hyperplane_from_volumes()
        extras = {"completed_epochs": done}
        if trainer.state.hyperplane is not None:
            extras["hyperplane_accuracy"] = trainer.state.hyperplane.fit_accuracy
            extras["hyperplane_orientation"] = trainer.state.hyperplane.orientation
        ckpt = Checkpoint(
            phase=phase_name,
            epoch=epoch,
            blobs=trainer.state.collect_blobs(),
            config=config,
            extras=extras,
        )
        save_checkpoint(ckpt, ckpt_path)
        return ckpt

    ckpt = _snapshot(plan[completed][0].name if completed < len(plan) else Phase.JOINT.name, 0, completed)
    for global_idx in range(completed, len(plan)):
        phase, epoch_in_phase = plan[global_idx]
        breakdown = trainer.run_epoch(phase, epoch_in_phase)
        line = {
            "phase": phase.name,
            "epoch": global_idx,
            "weights": config.loss_weights.active_for(phase.name).as_dict(),
            **breakdown.as_dict(),
        }
        with open(log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(line, sort_keys=True) + "\n")
        ckpt = _snapshot(phase.name, epoch_in_phase, global_idx + 1)
    return ckpt


def build_state_from_checkpoint(ckpt: Checkpoint) -> TrainState:
    state = TrainState(ckpt.config)
    state.load_blobs(ckpt.blobs, ckpt.extras)
    return state


def restore_volume(ckpt: Checkpoint, vol: Volume3D, mode: str = "both", seed: int = 0) -> Volume3D:
    """Inference pipeline: guided denoising then axial super-resolution."""
    if mode not in ("both", "denoise", "sr"):
        raise ValidationError(f"unknown restore mode {mode!r}")
    state = build_state_from_checkpoint(ckpt)
    config = ckpt.config
    sched = make_linear_schedule(config.T, config.beta_start, config.beta_end)
    if not config.restore_stochastic:
        sched = sched.deterministic()
    out = vol
    if mode in ("both", "denoise"):
        cfg = EditConfig(lam=config.lambda_edit, apply_range=(1, config.T))
        out = denoise_volume(out, state.denoiser_model(), state.hyperplane, cfg, sched, seed=seed)
    if mode in ("both", "sr"):
        out = super_resolve_volume(out, state.srm, config.sr_scale)
    return out
