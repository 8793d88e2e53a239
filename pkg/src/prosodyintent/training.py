"""Training loops: teacher pretraining, distillation, and baselines.

The distillation student minimizes a * CE + b * (attention MSE + feature
MSE) against a teacher trained on prosody alone. Teacher outputs are
always detached before entering the distillation losses; with a frozen
teacher its parameters never change bitwise, and in joint mode the teacher
is driven only by its own classification loss while the targets track it
live.
"""

import hashlib
import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import rng as initrng
from .autodiff import Tensor
from .checkpoint import ModelCheckpoint, load_checkpoint, save_checkpoint
from .data import FeatureStore, batch_iter, split_entries
from .frontend import PROSODY_CHANNELS
from .models import align_frames, build_model, sap_forward
from .optim import Adam


@dataclass(frozen=True)
class MtlScheme:
    kind: str = "random_per_step"  # or "fixed"
    a: float = 1.0
    b: float = 1.0

    def __post_init__(self):
        if self.kind not in ("fixed", "random_per_step"):
            raise ValueError(f"unknown MTL scheme {self.kind!r}")


def mtl_weights(scheme: MtlScheme, rng) -> tuple:
    """Per-step loss weights (a, b).

    random_per_step draws two standard normals and softmax-normalizes them
    fresh on every optimizer step, so a + b == 1 and both stay positive.
    """
    if scheme.kind == "fixed":
        return scheme.a, scheme.b
    z = rng.standard_normal(2)
    e = np.exp(z - z.max())
    w = e / e.sum()
    return float(w[0]), float(w[1])


@dataclass(frozen=True)
class TrainConfig:
    arch: str
    n_intents: int = 8
    epochs: int = 20
    early_stop_patience: int = 10
    batch_size: int = 16
    lr_head: float = 1e-3
    lr_encoder: float | None = None
    mtl: MtlScheme = field(default_factory=MtlScheme)
    distill_parts: str = "both"  # attention_only | feature_only | both
    distill_level: str = "frame"  # frame | global
    teacher_mode: str = "pretrained_frozen"  # or "joint"
    teacher_path: str | None = None
    feature_mask: tuple = PROSODY_CHANNELS
    hidden_channels: int = 64
    n_layers: int = 3
    kernel: int = 5
    downsample_factor: int = 2
    lstm_hidden: int = 32
    prosody_attention: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.distill_parts not in ("attention_only", "feature_only", "both"):
            raise ValueError(f"unknown distill_parts {self.distill_parts!r}")
        if self.distill_level not in ("frame", "global"):
            raise ValueError(f"unknown distill_level {self.distill_level!r}")
        if self.teacher_mode not in ("pretrained_frozen", "joint"):
            raise ValueError(f"unknown teacher mode {self.teacher_mode!r}")
        consumes_prosody = self.arch in ("teacher", "student", "baseline_local_concat") \
            or self.prosody_attention
        if consumes_prosody and not self.feature_mask:
            raise ValueError("feature_mask must keep at least one channel")


def config_hash(cfg: TrainConfig) -> str:
    """Hash of the mechanism-defining fields: seeds and filesystem paths are
    excluded so repeated runs of one configuration group together."""
    semantic = {
        "arch": cfg.arch,
        "n_intents": cfg.n_intents,
        "epochs": cfg.epochs,
        "early_stop_patience": cfg.early_stop_patience,
        "batch_size": cfg.batch_size,
        "lr_head": cfg.lr_head,
        "lr_encoder": cfg.lr_encoder,
        "mtl": [cfg.mtl.kind, cfg.mtl.a, cfg.mtl.b],
        "distill_parts": cfg.distill_parts,
        "distill_level": cfg.distill_level,
        "teacher_mode": cfg.teacher_mode,
        "feature_mask": sorted(cfg.feature_mask),
        "hidden_channels": cfg.hidden_channels,
        "n_layers": cfg.n_layers,
        "kernel": cfg.kernel,
        "downsample_factor": cfg.downsample_factor,
        "lstm_hidden": cfg.lstm_hidden,
        "prosody_attention": cfg.prosody_attention,
    }
    blob = json.dumps(semantic, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("ascii")).hexdigest()[:16]


@dataclass
class LossBreakdown:
    l_cls: float
    l_attn: float
    l_feat: float
    a: float
    b: float

    @property
    def l_dis(self) -> float:
        return self.l_attn + self.l_feat

    @property
    def l_total(self) -> float:
        return self.a * self.l_cls + self.b * self.l_dis

    def validate(self, observed_total: float):
        parts = (self.l_cls, self.l_attn, self.l_feat)
        if any(p < 0 for p in parts):
            raise FloatingPointError(f"negative loss component: {parts}")
        expected = self.l_total
        if abs(observed_total - expected) > 1e-6 * max(1.0, abs(expected)):
            raise FloatingPointError(
                f"loss identity violated: total {observed_total} != "
                f"a*l_cls + b*l_dis = {expected}"
            )


@dataclass
class TrainLog:
    seed: int
    entries: list = field(default_factory=list)  # one dict per epoch

    def add_epoch(self, **kwargs):
        self.entries.append(kwargs)

    @property
    def best_epoch(self) -> int:
        """1-based epoch of the best validation accuracy; ties go earliest."""
        accs = [e["val_accuracy"] for e in self.entries]
        return int(np.argmax(accs)) + 1

    def without_wall_time(self):
        return [{k: v for k, v in e.items() if k != "wall_time"} for e in self.entries]

    def write_jsonl(self, path):
        with open(path, "w", encoding="ascii") as f:
            for entry in self.entries:
                f.write(json.dumps(entry, sort_keys=True) + "\n")


def early_stop(log: TrainLog, patience: int) -> bool:
    """Stop once the best epoch is `patience` or more epochs behind."""
    if not log.entries:
        raise ValueError("early_stop needs at least one completed epoch")
    current = log.entries[-1]["epoch"]
    return (current - log.best_epoch) >= patience


def distillation_loss(student_zf, student_alpha, teacher_zf, teacher_alpha,
                      parts: str, level: str):
    """Attention and feature MSE between student and (constant) teacher.

    Caller aligns frame counts first (align_frames). level "global"
    compares attention-pooled feature vectors instead of frame matrices;
    disabled parts contribute an exact scalar zero.
    """
    zero = Tensor(np.zeros((), dtype=np.float32))
    if student_zf.data.shape[0] != teacher_zf.data.shape[0] or \
            student_alpha.data.shape[0] != teacher_alpha.data.shape[0]:
        raise ValueError(
            f"shape mismatch after alignment: student {student_zf.data.shape}/"
            f"{student_alpha.data.shape}, teacher {teacher_zf.data.shape}/"
            f"{teacher_alpha.data.shape}"
        )

    l_attn = zero
    if parts in ("attention_only", "both"):
        l_attn = ad.mse(student_alpha, teacher_alpha)

    l_feat = zero
    if parts in ("feature_only", "both"):
        if level == "frame":
            l_feat = ad.mse(student_zf, teacher_zf)
        else:
            t_s = student_zf.data.shape[0]
            t_t = teacher_zf.data.shape[0]
            pooled_s = ad.matmul(ad.reshape(student_alpha, (1, t_s)), student_zf)
            pooled_t = ad.matmul(ad.reshape(teacher_alpha, (1, t_t)), teacher_zf)
            l_feat = ad.mse(pooled_s, pooled_t)
    return l_attn, l_feat


def _teacher_targets(teacher, prosody, mask, t_out, frozen: bool):
    """Teacher forward; returns (aligned detached zF/alpha, teacher CE input).

    With a frozen teacher no graph is recorded at all; in joint mode the
    graph is kept so the teacher's own CE can backpropagate, but the
    distillation targets are detached either way.
    """
    if frozen:
        with ad.no_grad():
            logits, zf, alpha, _ = teacher.forward(prosody=prosody, mask=mask)
    else:
        logits, zf, alpha, _ = teacher.forward(prosody=prosody, mask=mask)
    zf_c = zf.detach()
    alpha_c = alpha.detach()
    zf_aligned = align_frames(zf_c, t_out)
    alpha_2d = Tensor(alpha_c.data.reshape(-1, 1))
    alpha_aligned = ad.reshape(align_frames(alpha_2d, t_out), (t_out,))
    return zf_aligned, alpha_aligned, logits


def _accuracy(model, entries, store: FeatureStore) -> float:
    correct = 0
    for e in entries:
        mel, pros = store.features(e)
        if model.predict(mel=mel, prosody=pros) == e.intent_id:
            correct += 1
    return correct / len(entries)


def _distills(cfg: TrainConfig) -> bool:
    return cfg.arch == "student"


def train_teacher(entries, store: FeatureStore, cfg: TrainConfig, run_dir=None,
                  step_callback=None):
    """Pretrain the prosody-only classifier with CE; saves best-validation."""
    cfg = replace(cfg, arch="teacher")
    return _train(entries, store, cfg, run_dir, step_callback=step_callback)


def train_student(entries, store: FeatureStore, cfg: TrainConfig, run_dir=None,
                  step_callback=None):
    """Distillation training per the MTL objective; arch must be 'student'."""
    if cfg.arch != "student":
        raise ValueError("train_student expects arch='student'")
    return _train(entries, store, cfg, run_dir, step_callback=step_callback)


def train_baseline(entries, store: FeatureStore, cfg: TrainConfig, run_dir=None,
                   step_callback=None):
    """CE-only training of either baseline, optionally with prosody-attention."""
    if cfg.arch not in ("baseline_plain", "baseline_local_concat"):
        raise ValueError("train_baseline expects a baseline architecture")
    return _train(entries, store, cfg, run_dir, step_callback=step_callback)


def train(entries, store: FeatureStore, cfg: TrainConfig, run_dir=None,
          step_callback=None):
    """Dispatch on cfg.arch."""
    if cfg.arch == "teacher":
        return train_teacher(entries, store, cfg, run_dir, step_callback)
    if cfg.arch == "student":
        return train_student(entries, store, cfg, run_dir, step_callback)
    return train_baseline(entries, store, cfg, run_dir, step_callback)


def _build_from_cfg(cfg: TrainConfig, arch: str, seed: int):
    return build_model(
        arch=arch, n_intents=cfg.n_intents, seed=seed,
        hidden_channels=cfg.hidden_channels, n_layers=cfg.n_layers,
        kernel=cfg.kernel, downsample_factor=cfg.downsample_factor,
        lstm_hidden=cfg.lstm_hidden,
        prosody_attention=cfg.prosody_attention and arch != "teacher",
        feature_mask=list(cfg.feature_mask),
    )


def _train(entries, store, cfg: TrainConfig, run_dir, step_callback=None):
    split_entries(entries, "train")  # fail fast on an empty train split
    val_rows = split_entries(entries, "validation")
    max_intent = max(e.intent_id for e in entries)
    if max_intent >= cfg.n_intents:
        raise ValueError(f"manifest has intent {max_intent}, config allows {cfg.n_intents}")

    model = _build_from_cfg(cfg, cfg.arch, cfg.seed)

    teacher = None
    if _distills(cfg):
        if cfg.teacher_mode == "pretrained_frozen":
            if cfg.teacher_path is None:
                raise ValueError("pretrained_frozen distillation needs teacher_path")
            if isinstance(cfg.teacher_path, ModelCheckpoint):
                teacher_ckpt = cfg.teacher_path
            else:
                teacher_ckpt = load_checkpoint(cfg.teacher_path)
            teacher = teacher_ckpt.to_model().set_trainable(False)
        else:
            teacher = _build_from_cfg(cfg, "teacher",
                                      initrng.stream_seed(cfg.seed, "teacher"))
        if teacher.n_intents != cfg.n_intents:
            raise ValueError(
                f"teacher/student intent-count mismatch: {teacher.n_intents} vs {cfg.n_intents}"
            )
        if cfg.distill_parts != "attention_only" and \
                teacher.hidden_channels != cfg.hidden_channels:
            raise ValueError(
                "feature distillation needs matching hidden widths: "
                f"teacher {teacher.hidden_channels}, student {cfg.hidden_channels}"
            )

    lr_overrides = {"enc.": cfg.lr_encoder} if cfg.lr_encoder is not None else None
    opt = Adam(model.params, lr=cfg.lr_head, lr_overrides=lr_overrides)
    teacher_opt = None
    if teacher is not None and cfg.teacher_mode == "joint":
        teacher_opt = Adam(teacher.params, lr=cfg.lr_head)

    mtl_rng = np.random.default_rng([cfg.seed, 0x6D74])
    log = TrainLog(seed=cfg.seed)
    best_acc = -1.0
    best_ckpt = None
    step = 0

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.monotonic()
        sums = {"l_cls": 0.0, "l_attn": 0.0, "l_feat": 0.0, "l_total": 0.0}
        n_steps = 0
        for batch in batch_iter(entries, "train", cfg.batch_size, cfg.seed, epoch - 1, store):
            a_w, b_w = mtl_weights(cfg.mtl, mtl_rng)
            cls_terms, attn_terms, feat_terms, teacher_terms = [], [], [], []
            alpha_min, alpha_max = np.inf, -np.inf
            for i in range(len(batch.labels)):
                mask = batch.frame_mask[i] if batch.lengths[i] != batch.mel.shape[1] else None
                logits, zf, alpha, _ = model.forward(
                    mel=batch.mel[i], prosody=batch.prosody[i], mask=mask)
                cls_terms.append(ad.cross_entropy(logits, int(batch.labels[i])))
                asum = float(alpha.data.sum(dtype=np.float64))
                alpha_min, alpha_max = min(alpha_min, asum), max(alpha_max, asum)
                if teacher is not None:
                    t_zf, t_alpha, t_logits = _teacher_targets(
                        teacher, batch.prosody[i], mask, zf.data.shape[0],
                        frozen=cfg.teacher_mode == "pretrained_frozen")
                    l_attn_i, l_feat_i = distillation_loss(
                        zf, alpha, t_zf, t_alpha, cfg.distill_parts, cfg.distill_level)
                    attn_terms.append(l_attn_i)
                    feat_terms.append(l_feat_i)
                    if teacher_opt is not None:
                        teacher_terms.append(ad.cross_entropy(t_logits, int(batch.labels[i])))

            inv_b = 1.0 / len(batch.labels)
            l_cls = ad.scale(ad.add_n(cls_terms), inv_b)
            zero = Tensor(np.zeros((), dtype=np.float32))
            l_attn = ad.scale(ad.add_n(attn_terms), inv_b) if attn_terms else zero
            l_feat = ad.scale(ad.add_n(feat_terms), inv_b) if feat_terms else zero
            l_dis = ad.add(l_attn, l_feat)
            l_total = ad.add(ad.scale(l_cls, a_w), ad.scale(l_dis, b_w))

            breakdown = LossBreakdown(
                l_cls=float(l_cls.data), l_attn=float(l_attn.data),
                l_feat=float(l_feat.data), a=a_w, b=b_w)
            breakdown.validate(float(l_total.data))

            objective = l_total
            if teacher_terms:
                objective = ad.add(objective, ad.scale(ad.add_n(teacher_terms), inv_b))
            objective.backward()
            opt.step()
            opt.zero_grad()
            if teacher_opt is not None:
                teacher_opt.step()
                teacher_opt.zero_grad()

            step += 1
            n_steps += 1
            for key in ("l_cls", "l_attn", "l_feat", "l_total"):
                sums[key] += getattr(breakdown, key)
            if step_callback is not None:
                step_callback({
                    "step": step, "epoch": epoch, "breakdown": breakdown,
                    "alpha_sum_min": alpha_min, "alpha_sum_max": alpha_max,
                })

        val_acc = _accuracy(model, val_rows, store)
        log.add_epoch(
            epoch=epoch,
            l_cls=sums["l_cls"] / n_steps,
            l_attn=sums["l_attn"] / n_steps,
            l_feat=sums["l_feat"] / n_steps,
            l_dis=(sums["l_attn"] + sums["l_feat"]) / n_steps,
            l_total=sums["l_total"] / n_steps,
            val_accuracy=val_acc,
            wall_time=time.monotonic() - t0,
        )
        if val_acc > best_acc:
            best_acc = val_acc
            best_ckpt = ModelCheckpoint.from_model(model, metadata={
                "epoch": epoch, "best_validation_accuracy": val_acc, "seed": cfg.seed,
                "config_hash": config_hash(cfg),
            })
        if early_stop(log, cfg.early_stop_patience):
            break

    last_ckpt = ModelCheckpoint.from_model(model, metadata={
        "epoch": log.entries[-1]["epoch"], "best_validation_accuracy": best_acc,
        "seed": cfg.seed, "config_hash": config_hash(cfg),
    })

    if run_dir is not None:
        from pathlib import Path
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(best_ckpt, run_dir / "best.ckpt")
        save_checkpoint(last_ckpt, run_dir / "last.ckpt")
        log.write_jsonl(run_dir / "log.jsonl")
        _write_metrics(run_dir, best_ckpt, entries, store, cfg)

    return best_ckpt, log


def _write_metrics(run_dir, ckpt: ModelCheckpoint, entries, store, cfg: TrainConfig):
    from .evaluation import evaluate
    if not any(e.split == "test" for e in entries):
        return  # no test split; metrics are only defined for evaluated runs
    report = evaluate(ckpt, entries, "test", store)
    payload = report.to_dict()
    payload["checkpoint"] = str(run_dir / "best.ckpt")
    payload["config_hash"] = config_hash(cfg)
    payload["seed"] = cfg.seed
    with open(run_dir / "metrics.json", "w", encoding="ascii") as f:
        json.dump(payload, f, sort_keys=True, indent=1)
        f.write("\n")
