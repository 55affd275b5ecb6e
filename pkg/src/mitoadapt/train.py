"""Training loops for the three adaptation strategies.

Three entry points share one phase runner:

* :func:`train_baseline` - supervised attention U-Net on labeled source
  patches (the no-adaptation reference).
* :func:`train_ssl` - super-resolution pretext pretraining on unlabeled
  source+target patches, then segmentation fine-tuning with a frozen
  encoder on labeled source patches.
* :func:`train_ynet` - three-phase attention Y-Net schedule: combined
  reconstruction+segmentation warm-up, reconstruction-only, then
  segmentation-only with a frozen encoder; source patches are remapped
  to the target histogram after the first phase.

Each phase declares its optimizer, learning-rate policy, loss weight,
frozen parameter groups and data feed.  Recorded phases evaluate the
model on the target test stack after every epoch and append the average
solidity (plus research-mode IoU when target labels exist) to a
:class:`~mitoadapt.morpho.SolidityTrace` used for checkpoint selection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from . import nets
from .dataio import (
    AnnotatedDataset,
    ImageStack,
    PatchSampler,
    PatchSet,
    extract_patches,
    sample_patches,
)
from .exceptions import ConfigError, TrainingError
from .morpho import (
    DEFAULT_MIN_OBJECT_PX,
    SolidityTrace,
    TraceEntry,
    average_solidity,
    objective_solidity,
)
from .objectives import CombinedLossConfig, bce_loss, combined_loss, iou_f, mse_loss
from .preprocess import DegradationConfig, degrade_for_ssl, match_stack

OPTIMIZERS = ("adam", "sgd")
LR_POLICIES = ("one_cycle", "reduce_on_plateau")
TASKS = ("segmentation", "super_resolution", "multitask")


def lr_one_cycle(
    step: int,
    total_steps: int,
    max_lr: float,
    pct_start: float = 0.3,
    div_factor: float = 25.0,
    final_div_factor: float = 1e4,
) -> float:
    """One-cycle learning rate: cosine warm-up to ``max_lr``, cosine anneal down.

    The sequence over ``step = 0..total_steps-1`` is unimodal and hits
    exactly ``max_lr`` at its peak.
    """
    if total_steps < 1:
        raise ValueError("total_steps must be positive")
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    if total_steps == 1:
        return max_lr
    peak = max(1, round(pct_start * (total_steps - 1)))
    start_lr = max_lr / div_factor
    if step <= peak:
        t = step / peak
        return start_lr + (max_lr - start_lr) * 0.5 * (1.0 - math.cos(math.pi * t))
    final_lr = start_lr / final_div_factor
    t = (step - peak) / (total_steps - 1 - peak)
    return final_lr + (max_lr - final_lr) * 0.5 * (1.0 + math.cos(math.pi * t))


class ReduceOnPlateau:
    """Multiply the learning rate by ``factor`` after ``patience``
    consecutive epochs without improvement of the monitored value."""

    def __init__(self, initial_lr: float, patience: int, factor: float = 0.5,
                 min_delta: float = 0.0):
        if not 0.0 < factor < 1.0:
            raise ValueError("factor must lie in (0, 1)")
        if patience < 1:
            raise ValueError("patience must be positive")
        self.lr = initial_lr
        self.patience = patience
        self.factor = factor
        self.min_delta = min_delta
        self.best: float | None = None
        self.wait = 0

    def step(self, value: float) -> float:
        if self.best is None or value < self.best - self.min_delta:
            self.best = value
            self.wait = 0
        else:
            self.wait += 1
            if self.wait >= self.patience:
                self.lr *= self.factor
                self.wait = 0
        return self.lr


def lr_reduce_on_plateau(history, patience: int, factor: float, lr: float) -> float:
    """Replay a monitored-value history and return the final learning rate."""
    scheduler = ReduceOnPlateau(lr, patience=patience, factor=factor)
    for value in history:
        scheduler.step(value)
    return scheduler.lr


@dataclass(frozen=True)
class PhaseConfig:
    """One training phase: loss weight, optimizer, schedule, freezing, data feed."""

    name: str
    epochs: int
    task: str = "segmentation"
    optimizer: str = "adam"
    lr_policy: str = "one_cycle"
    max_lr: float = 2e-4
    initial_lr: float = 1e-3
    patience: int = 7
    factor: float = 0.5
    alpha: float = 0.0
    freeze: tuple[str, ...] = ()
    data: str = "source"
    batch_size: int = 1
    record_trace: bool = False
    early_stop_patience: int | None = None

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.lr_policy not in LR_POLICIES:
            raise ConfigError(f"unknown lr policy {self.lr_policy!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        unknown = set(self.freeze) - set(nets.PARAMETER_GROUPS)
        if unknown:
            raise ConfigError(f"unknown parameter groups in freeze: {sorted(unknown)}")
        if self.data not in ("source", "source+target"):
            raise ConfigError(f"unknown data selector {self.data!r}")


@dataclass(frozen=True)
class TrainPlan:
    """Ordered phases plus checkpoint cadence and the run seed."""

    phases: tuple[PhaseConfig, ...]
    checkpoint_every: int = 1
    rng_seed: int = 0

    def __post_init__(self):
        if not self.phases:
            raise ConfigError("a plan needs at least one phase")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be >= 1")
        # Once the encoder is frozen it stays frozen in later phases.
        seen_frozen_encoder = False
        for phase in self.phases:
            frozen = "encoder" in phase.freeze
            if seen_frozen_encoder and not frozen:
                raise ConfigError("encoder unfrozen after a frozen phase (plan order violation)")
            seen_frozen_encoder = seen_frozen_encoder or frozen

    def scaled(self, epochs: dict[str, int]) -> "TrainPlan":
        """Copy of the plan with per-phase epoch budgets overridden (desk scale)."""
        phases = tuple(
            replace(p, epochs=epochs.get(p.name, p.epochs)) for p in self.phases
        )
        return replace(self, phases=phases)


def baseline_plan(epochs: int = 100, max_lr: float = 2e-4, rng_seed: int = 0) -> TrainPlan:
    """Supervised baseline: Adam + one-cycle, BCE on source patches."""
    phase = PhaseConfig(
        name="baseline",
        epochs=epochs,
        task="segmentation",
        optimizer="adam",
        lr_policy="one_cycle",
        max_lr=max_lr,
        data="source",
        record_trace=True,
    )
    return TrainPlan(phases=(phase,), rng_seed=rng_seed)


def ssl_plan(
    pretrain_epochs: int = 200,
    finetune_epochs: int = 60,
    pretrain_max_lr: float = 5e-4,
    finetune_max_lr: float = 1e-4,
    rng_seed: int = 0,
) -> TrainPlan:
    """Super-resolution pretraining then frozen-encoder fine-tuning."""
    pretrain = PhaseConfig(
        name="pretrain",
        epochs=pretrain_epochs,
        task="super_resolution",
        optimizer="adam",
        lr_policy="one_cycle",
        max_lr=pretrain_max_lr,
        data="source+target",
    )
    finetune = PhaseConfig(
        name="finetune",
        epochs=finetune_epochs,
        task="segmentation",
        optimizer="adam",
        lr_policy="one_cycle",
        max_lr=finetune_max_lr,
        freeze=("encoder",),
        data="source",
        record_trace=True,
    )
    return TrainPlan(phases=(pretrain, finetune), rng_seed=rng_seed)


def ynet_plan(
    epochs: tuple[int, int, int] = (50, 40, 100),
    lrs: tuple[float, float, float] = (1e-3, 2e-4, 2e-4),
    rng_seed: int = 0,
) -> TrainPlan:
    """Three-phase multi-task schedule: alpha = 0.98, 1.0, 0.0.

    ``lrs`` holds the initial rates of the two plateau phases and the
    one-cycle peak of the segmentation phase; shrunken desk-scale epoch
    budgets usually need larger rates than the published defaults.
    """
    combined = PhaseConfig(
        name="combined",
        epochs=epochs[0],
        task="multitask",
        optimizer="sgd",
        lr_policy="reduce_on_plateau",
        initial_lr=lrs[0],
        patience=7,
        alpha=0.98,
        data="source+target",
    )
    reconstruction = PhaseConfig(
        name="reconstruction",
        epochs=epochs[1],
        task="multitask",
        optimizer="adam",
        lr_policy="reduce_on_plateau",
        initial_lr=lrs[1],
        patience=6,
        alpha=1.0,
        data="source+target",
    )
    segmentation = PhaseConfig(
        name="segmentation",
        epochs=epochs[2],
        task="multitask",
        optimizer="adam",
        lr_policy="one_cycle",
        max_lr=lrs[2],
        alpha=0.0,
        freeze=("encoder",),
        data="source",
        record_trace=True,
    )
    return TrainPlan(phases=(combined, reconstruction, segmentation), rng_seed=rng_seed)


@dataclass
class _Sample:
    image: np.ndarray
    label: np.ndarray | None
    key: int  # stable identity for deterministic per-sample noise


@dataclass
class TrainResult:
    """Trained model plus its selection trace and audit material."""

    model: nets.SegmentationNetwork
    trace: SolidityTrace
    history: list[dict] = field(default_factory=list)
    checkpoints: dict[int, Path] = field(default_factory=dict)
    snapshots_before: dict[str, dict] = field(default_factory=dict)


def predict_stack(model: nets.SegmentationNetwork, stack: ImageStack) -> np.ndarray:
    """Slice-wise segmentation probabilities for a whole stack.

    Slices are reflect-padded to the network's spatial divisor and
    cropped back, so arbitrary stack geometries are accepted.
    """
    m = model.spec.spatial_divisor
    h, w = stack.height, stack.width
    pad_h = (-h) % m
    pad_w = (-w) % m
    out = np.empty(stack.data.shape, dtype=np.float32)
    model.eval()
    with torch.no_grad():
        for i in range(stack.n_slices):
            sl = stack.data[i]
            if pad_h or pad_w:
                sl = np.pad(sl, ((0, pad_h), (0, pad_w)), mode="reflect")
            x = torch.from_numpy(sl[None, None].astype(np.float32))
            pred = model(x)
            if isinstance(pred, tuple):
                pred = pred[0]
            out[i] = pred[0, 0, :h, :w].numpy()
    return out


def _make_optimizer(name: str, params, lr: float):
    if name == "adam":
        return torch.optim.Adam(params, lr=lr)
    if name == "sgd":
        return torch.optim.SGD(params, lr=lr)
    raise ConfigError(f"unknown optimizer {name!r}")


def _set_lr(optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr


def _to_tensor(arr: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32))[None, None]


class _Run:
    """Shared state of one training run (all phases)."""

    def __init__(self, model, plan, *, eval_images=None, eval_labels=None,
                 threshold=0.5, min_object_px=DEFAULT_MIN_OBJECT_PX,
                 degradation: DegradationConfig | None = None):
        self.model = model
        self.plan = plan
        self.eval_images = eval_images
        self.eval_labels = eval_labels
        self.threshold = threshold
        self.min_object_px = min_object_px
        self.degradation = degradation
        self.source_train: list[_Sample] = []
        self.source_val: list[_Sample] = []
        self.target_train: list[_Sample] = []
        self.target_val: list[_Sample] = []

    @staticmethod
    def to_samples(patches: PatchSet, key_offset: int = 0, with_labels=True) -> list[_Sample]:
        labels = patches.labels if with_labels else None
        return [
            _Sample(
                image=patches.images[i],
                label=None if labels is None else labels[i],
                key=key_offset + i,
            )
            for i in range(len(patches))
        ]

    def samples_for(self, phase: PhaseConfig):
        if phase.data == "source":
            return list(self.source_train), list(self.source_val)
        return (
            list(self.source_train) + list(self.target_train),
            list(self.source_val) + list(self.target_val),
        )

    def on_phase_start(self, phase_index: int) -> None:
        pass

    # Per-sample losses -------------------------------------------------

    def sample_loss(self, phase: PhaseConfig, sample: _Sample, phase_index: int,
                    epoch: int) -> torch.Tensor:
        if phase.task == "segmentation":
            if sample.label is None:
                raise TrainingError("segmentation phase received an unlabeled sample")
            seg = self.model(_to_tensor(sample.image))
            if isinstance(seg, tuple):
                seg = seg[0]
            return bce_loss(seg, _to_tensor(sample.label))
        if phase.task == "super_resolution":
            # epoch -1 marks validation, whose degradations stay fixed.
            seed = (self.plan.rng_seed, phase_index, epoch + 1, sample.key)
            degraded = degrade_for_ssl(sample.image, self.degradation, seed)
            pred = self.model(_to_tensor(degraded))
            if isinstance(pred, tuple):
                pred = pred[0]
            return mse_loss(pred, _to_tensor(sample.image))
        # multitask
        image_t = _to_tensor(sample.image)
        seg, rec = self.model(image_t)
        label_t = None if sample.label is None else _to_tensor(sample.label)
        return combined_loss(seg, rec, label_t, image_t, CombinedLossConfig(phase.alpha))

    def validation_loss(self, phase: PhaseConfig, samples, phase_index: int) -> float:
        if not samples:
            return float("nan")
        total = 0.0
        with torch.no_grad():
            for sample in samples:
                # epoch fixed at -1 so validation degradations stay comparable
                total += self.sample_loss(phase, sample, phase_index, epoch=-1).item()
        return total / len(samples)

    # Target / source evaluation ----------------------------------------

    def source_val_iou(self) -> float | None:
        labeled = [s for s in self.source_val if s.label is not None]
        if not labeled:
            return None
        preds, gts = [], []
        with torch.no_grad():
            for sample in labeled:
                seg = self.model(_to_tensor(sample.image))
                if isinstance(seg, tuple):
                    seg = seg[0]
                preds.append(seg[0, 0].numpy())
                gts.append(sample.label)
        return iou_f(np.stack(preds), np.stack(gts), self.threshold).iou_f

    def evaluate_epoch(self, trace_epoch: int) -> TraceEntry:
        entry = TraceEntry(epoch=trace_epoch)
        entry.source_val_iou = self.source_val_iou()
        if self.eval_images is not None:
            probs = predict_stack(self.model, self.eval_images)
            masks = probs >= self.threshold
            entry.target_solidity = average_solidity(masks, self.min_object_px)
            if self.eval_labels is not None:
                entry.target_iou = iou_f(probs, self.eval_labels.data, self.threshold).iou_f
        return entry


def _run_phases(run: _Run, objective: float | None, out_dir=None) -> TrainResult:
    model, plan = run.model, run.plan
    trace = SolidityTrace(objective_solidity=objective, min_object_px=run.min_object_px)
    result = TrainResult(model=model, trace=trace)
    shuffle_rng = np.random.default_rng(plan.rng_seed)
    trace_epoch = 0

    for phase_index, phase in enumerate(plan.phases):
        run.on_phase_start(phase_index)
        result.snapshots_before[phase.name] = nets.snapshot_groups(model)
        nets.set_trainable(model, nets.PARAMETER_GROUPS, True)
        if phase.freeze:
            nets.set_trainable(model, phase.freeze, False)
        params = nets.trainable_parameters(model)
        if not params:
            # Fully frozen phase: nothing to optimize, but epochs still count.
            params = None

        train_samples, val_samples = run.samples_for(phase)
        if not train_samples and phase.epochs > 0:
            raise TrainingError(f"phase {phase.name!r} has no training samples")

        steps_per_epoch = math.ceil(len(train_samples) / phase.batch_size) if train_samples else 0
        total_steps = max(phase.epochs * steps_per_epoch, 1)
        plateau = None
        if phase.lr_policy == "reduce_on_plateau":
            plateau = ReduceOnPlateau(phase.initial_lr, phase.patience, phase.factor)
        optimizer = None
        if params is not None:
            initial_lr = phase.max_lr if phase.lr_policy == "one_cycle" else phase.initial_lr
            optimizer = _make_optimizer(phase.optimizer, params, initial_lr)

        early_stop = phase.early_stop_patience
        if early_stop is None and phase.lr_policy == "reduce_on_plateau":
            early_stop = 2 * phase.patience  # stop once the plateau patience exhausts twice
        best_val = math.inf
        stagnant = 0
        step = 0

        for epoch in range(phase.epochs):
            model.train()
            order = shuffle_rng.permutation(len(train_samples))
            epoch_loss = 0.0
            lr = plateau.lr if plateau is not None else float("nan")
            for start in range(0, len(order), phase.batch_size):
                chunk = order[start:start + phase.batch_size]
                if phase.lr_policy == "one_cycle":
                    lr = lr_one_cycle(step, total_steps, phase.max_lr)
                if optimizer is not None:
                    _set_lr(optimizer, lr)
                    optimizer.zero_grad()
                losses = [
                    run.sample_loss(phase, train_samples[j], phase_index, epoch)
                    for j in chunk
                ]
                loss = torch.stack(losses).mean()
                if optimizer is not None:
                    loss.backward()
                    optimizer.step()
                step += 1
                epoch_loss += loss.item() * len(chunk)

            model.eval()
            val_loss = run.validation_loss(phase, val_samples, phase_index)
            if plateau is not None and not math.isnan(val_loss):
                plateau.step(val_loss)
            result.history.append({
                "phase": phase.name,
                "epoch": epoch + 1,
                "train_loss": epoch_loss / max(len(train_samples), 1),
                "val_loss": val_loss,
                "lr": lr,
            })

            if phase.record_trace:
                trace_epoch += 1
                trace.append(run.evaluate_epoch(trace_epoch))
                if out_dir is not None and (epoch + 1) % plan.checkpoint_every == 0:
                    path = nets.save_checkpoint(model, out_dir, phase.name, epoch + 1)
                    result.checkpoints[trace_epoch] = path

            if not math.isnan(val_loss):
                if val_loss < best_val:
                    best_val = val_loss
                    stagnant = 0
                else:
                    stagnant += 1
            if early_stop is not None and stagnant >= early_stop:
                break

        if out_dir is not None and not phase.record_trace and phase.epochs > 0:
            nets.save_checkpoint(model, out_dir, phase.name, phase.epochs)
    return result


def train_baseline(
    source: AnnotatedDataset,
    spec: nets.NetworkSpec,
    plan: TrainPlan,
    *,
    sampler: PatchSampler,
    eval_target: AnnotatedDataset | None = None,
    out_dir=None,
    threshold: float = 0.5,
    min_object_px: int = DEFAULT_MIN_OBJECT_PX,
) -> TrainResult:
    """Supervised training on the labeled source domain (no adaptation)."""
    if source.labels is None:
        raise TrainingError("baseline training requires labeled source data")
    if spec.variant != "attention_unet":
        raise ConfigError("baseline training uses the attention_unet variant")
    for phase in plan.phases:
        if phase.task != "segmentation":
            raise ConfigError("baseline plans contain segmentation phases only")

    model = nets.build_network(spec, plan.rng_seed)
    run = _Run(
        model, plan,
        eval_images=None if eval_target is None else eval_target.images,
        eval_labels=None if eval_target is None else eval_target.labels,
        threshold=threshold, min_object_px=min_object_px,
    )
    train_set, val_set = sample_patches(source, sampler)
    run.source_train = run.to_samples(train_set)
    run.source_val = run.to_samples(val_set, key_offset=len(train_set))
    objective = objective_solidity(source.labels, min_object_px)
    return _run_phases(run, objective, out_dir)


def train_ssl(
    source: AnnotatedDataset,
    target: AnnotatedDataset,
    spec: nets.NetworkSpec,
    plan: TrainPlan,
    *,
    sampler: PatchSampler,
    degradation: DegradationConfig | None = None,
    hm_source: bool = True,
    eval_target: AnnotatedDataset | None = None,
    out_dir=None,
    threshold: float = 0.5,
    min_object_px: int = DEFAULT_MIN_OBJECT_PX,
) -> TrainResult:
    """Super-resolution pretraining on both domains, then source fine-tuning.

    With ``hm_source`` the source images are histogram-matched to the
    target domain before any patches are cut.  Fine-tuning freezes the
    encoder so target-domain features learned during the pretext task
    survive.
    """
    if source.labels is None:
        raise TrainingError("SSL fine-tuning requires labeled source data")
    if target is None or target.images.n_slices == 0:
        raise TrainingError("SSL pretraining requires target images")
    if spec.variant != "attention_unet":
        raise ConfigError("SSL training uses the attention_unet variant")
    tasks = tuple(p.task for p in plan.phases)
    if tasks != ("super_resolution", "segmentation"):
        raise ConfigError(
            f"SSL plans have a super_resolution then a segmentation phase, got {tasks}"
        )

    source_images = source.images
    if hm_source:
        source_images = match_stack(source.images, target.images)
    matched_source = replace(source, images=source_images)

    if eval_target is None:
        eval_target = target
    model = nets.build_network(spec, plan.rng_seed)
    run = _Run(
        model, plan,
        eval_images=eval_target.images,
        eval_labels=eval_target.labels,
        threshold=threshold, min_object_px=min_object_px,
        degradation=degradation or DegradationConfig(),
    )
    src_train, src_val = sample_patches(matched_source, sampler)
    tgt_train, tgt_val = sample_patches(
        replace(target, labels=None),
        replace(sampler, rng_seed=sampler.rng_seed + 1),
    )
    run.source_train = run.to_samples(src_train)
    run.source_val = run.to_samples(src_val, key_offset=len(src_train))
    offset = len(src_train) + len(src_val)
    run.target_train = run.to_samples(tgt_train, key_offset=offset, with_labels=False)
    run.target_val = run.to_samples(
        tgt_val, key_offset=offset + len(tgt_train), with_labels=False
    )
    objective = objective_solidity(source.labels, min_object_px)
    return _run_phases(run, objective, out_dir)


class _YNetRun(_Run):
    """Y-Net run that swaps in histogram-matched source patches after phase 1."""

    def __init__(self, *args, source_stack=None, target_stack=None, source_coords=None,
                 val_coords=None, patch_size=None, hm_after_first_phase=True, **kwargs):
        super().__init__(*args, **kwargs)
        self.source_stack = source_stack
        self.target_stack = target_stack
        self.source_coords = source_coords
        self.val_coords = val_coords
        self.patch_size = patch_size
        self.hm_after_first_phase = hm_after_first_phase

    def on_phase_start(self, phase_index: int) -> None:
        if phase_index != 1 or not self.hm_after_first_phase:
            return
        matched = match_stack(self.source_stack, self.target_stack)
        train_images = extract_patches(matched.data, self.source_coords, self.patch_size)
        val_images = extract_patches(matched.data, self.val_coords, self.patch_size)
        for sample, image in zip(self.source_train, train_images):
            sample.image = image
        for sample, image in zip(self.source_val, val_images):
            sample.image = image


def train_ynet(
    source: AnnotatedDataset,
    target: AnnotatedDataset,
    spec: nets.NetworkSpec,
    plan: TrainPlan,
    *,
    sampler: PatchSampler,
    hm_after_first_phase: bool = True,
    eval_target: AnnotatedDataset | None = None,
    out_dir=None,
    threshold: float = 0.5,
    min_object_px: int = DEFAULT_MIN_OBJECT_PX,
) -> TrainResult:
    """Three-phase multi-task training on labeled source + unlabeled target."""
    if source.labels is None:
        raise TrainingError("Y-Net training requires labeled source data")
    if target is None or target.images.n_slices == 0:
        raise TrainingError("Y-Net training requires target images")
    if spec.variant != "attention_ynet":
        raise ConfigError("Y-Net training uses the attention_ynet variant")
    for phase in plan.phases:
        if phase.task != "multitask":
            raise ConfigError("Y-Net plans contain multitask phases only")

    if eval_target is None:
        eval_target = target
    model = nets.build_network(spec, plan.rng_seed)
    src_train, src_val = sample_patches(source, sampler)
    run = _YNetRun(
        model, plan,
        eval_images=eval_target.images,
        eval_labels=eval_target.labels,
        threshold=threshold, min_object_px=min_object_px,
        source_stack=source.images,
        target_stack=target.images,
        source_coords=src_train.coords,
        val_coords=src_val.coords,
        patch_size=sampler.patch_size,
        hm_after_first_phase=hm_after_first_phase,
    )
    tgt_train, tgt_val = sample_patches(
        replace(target, labels=None),
        replace(sampler, rng_seed=sampler.rng_seed + 1),
    )
    run.source_train = run.to_samples(src_train)
    run.source_val = run.to_samples(src_val, key_offset=len(src_train))
    offset = len(src_train) + len(src_val)
    run.target_train = run.to_samples(tgt_train, key_offset=offset, with_labels=False)
    run.target_val = run.to_samples(
        tgt_val, key_offset=offset + len(tgt_train), with_labels=False
    )
    objective = objective_solidity(source.labels, min_object_px)
    return _run_phases(run, objective, out_dir)
