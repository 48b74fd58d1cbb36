"""
Gradient-based fitting of basis LUTs, per-clip fusion weights and,
optionally, free per-pixel intensity maps to paired low/normal-light clips.

One optimisation step takes a batch of frames (optionally random crops) from
a single clip:

    fuse basis with the clip's weights -> look up every pixel (pre-clamp)
    -> reconstruction loss vs ground truth + regularisers on the fused table
    -> gradients back through the lookup into the fused table, the basis,
       the weights and (free mode) the intensities -> Adam update

The full training objective is evaluated at the start and after every epoch.
Unless keep_best is off, fit returns the parameters with the lowest objective
seen, the identity start included, so a run that only wanders away from its
initial tables hands those back.

Reductions run in a fixed order, so two runs with the same configuration and
seed produce identical loss traces.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .errors import DivergenceError, FormatError, NumericalError, ShapeMismatchError
from .fusion import BasisLutSet, export, fuse_values, init_basis
from .losses import LossWeights, charbonnier, l2, mono_lut, smooth_lut, total_loss, weight_l2
from .lut_core import Grid1D, IaLut4, Lut3, quad_backward, tri_backward
from .metrics import luminance, psnr

logger = logging.getLogger(__name__)

IntensityMode = Literal["constant", "luma", "provided", "free"]
ReconLoss = Literal["charbonnier", "l2"]

DIVERGENCE_LIMIT = 1e6

ClipPair = tuple[np.ndarray, np.ndarray, "np.ndarray | None"]


# ── Configuration ──────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class FitConfig:
    grid_size: int = 33
    basis_count: int = 3
    epochs: int = 100
    batch_size: int = 8
    lr: float = 4e-4
    min_lr: float = 1e-7
    loss_weights: LossWeights = field(default_factory=LossWeights)
    intensity: IntensityMode = "luma"
    intensity_value: float = 0.5
    fit_3d: bool = False
    recon_loss: ReconLoss = "charbonnier"
    restarts: int = 0
    crop: int | None = None
    holdout_frames: int = 0
    seed: int = 0
    log_every: int = 10
    grad_chunks: int = 4
    keep_best: bool = True

    def __post_init__(self) -> None:
        if self.grid_size < 2:
            raise FormatError("grid size must be ≥ 2")
        if self.basis_count < 1:
            raise FormatError("basis count must be ≥ 1")
        if self.epochs < 1:
            raise FormatError("epochs must be ≥ 1")
        if self.batch_size < 1:
            raise FormatError("batch size must be ≥ 1")
        if not 0 < self.min_lr <= self.lr:
            raise FormatError("learning rates must satisfy 0 < min lr ≤ initial lr")
        if self.intensity not in ("constant", "luma", "provided", "free"):
            raise FormatError(f"unknown intensity mode '{self.intensity}'")
        if not 0.0 <= self.intensity_value <= 1.0:
            raise FormatError("constant intensity must lie in [0, 1]")
        if self.recon_loss not in ("charbonnier", "l2"):
            raise FormatError(f"unknown reconstruction loss '{self.recon_loss}'")
        if self.restarts < 0:
            raise FormatError("restarts must be ≥ 0")
        if self.crop is not None and self.crop < 1:
            raise FormatError("crop size must be ≥ 1")
        if self.holdout_frames < 0:
            raise FormatError("holdout frames must be ≥ 0")
        if self.log_every < 1:
            raise FormatError("log interval must be ≥ 1 epoch")
        if self.grad_chunks < 1:
            raise FormatError("gradient chunks must be ≥ 1")


# ── Adam and the learning-rate schedule ────────────────────────────────────────

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: np.ndarray) -> "AdamState":
        return cls(m=np.zeros_like(params, dtype=np.float64), v=np.zeros_like(params, dtype=np.float64))


def adam_step(
    params: np.ndarray, grads: np.ndarray, state: AdamState, lr: float
) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update, applied to params in place."""
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ShapeMismatchError(
            f"Adam shapes disagree: params {params.shape}, grads {grads.shape}, state {state.m.shape}"
        )
    if not np.all(np.isfinite(grads)):
        raise NumericalError(
            f"non-finite gradient at Adam step {state.step + 1} "
            f"({int(np.count_nonzero(~np.isfinite(grads)))} entries)"
        )
    state.step += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * grads
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1**state.step)
    v_hat = state.v / (1.0 - state.beta2**state.step)
    params -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


def cosine_lr(step: int, total_steps: int, lr0: float, lr_min: float) -> float:
    """Cosine annealing from lr0 at step 0 to lr_min at total_steps."""
    if total_steps <= 0:
        return lr0
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * step / total_steps))


def scheduled_lr(step: int, total_steps: int, cfg: FitConfig) -> float:
    """cosine_lr with cfg.restarts warm restarts spread evenly over the run."""
    cycle = max(1, math.ceil(total_steps / (cfg.restarts + 1)))
    return cosine_lr(step % cycle, cycle, cfg.lr, cfg.min_lr)


# ── Reports ────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    lr: float
    total: float
    recon: float
    smooth: float
    mono: float
    weight: float


@dataclass
class FitReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    steps: int = 0
    final_psnr: float = float("nan")
    final_mse: float = float("nan")
    best_epoch: int = 0
    best_total: float = float("nan")
    wall_clock: float = field(default=0.0, compare=False)

    @property
    def final(self) -> EpochRecord | None:
        return self.epochs[-1] if self.epochs else None

    def to_text(self) -> str:
        lines = ["# epoch lr total recon smooth mono weight"]
        for r in self.epochs:
            lines.append(
                f"{r.epoch} {r.lr:.9g} {r.total:.9g} {r.recon:.9g} "
                f"{r.smooth:.9g} {r.mono:.9g} {r.weight:.9g}"
            )
        lines.append(f"# steps {self.steps}")
        lines.append(f"# best_epoch {self.best_epoch} {self.best_total:.9g}")
        lines.append(f"# final_psnr {self.final_psnr:.6f}")
        lines.append(f"# final_mse {self.final_mse:.9g}")
        lines.append(f"# wall_clock {self.wall_clock:.3f}")
        return "\n".join(lines) + "\n"


@dataclass
class FitResult:
    basis: BasisLutSet
    weights: np.ndarray
    intensities: list[np.ndarray] | None
    report: FitReport

    def fused(self, clip: int = 0) -> IaLut4 | Lut3:
        """The exported (clamped) table of one clip."""
        return export(self.basis, self.weights[clip])


# ── The differentiable objective ───────────────────────────────────────────────

@dataclass(frozen=True)
class LossTerms:
    total: float
    recon: float
    smooth: float
    mono: float
    weight: float


@dataclass(frozen=True)
class Gradients:
    basis: np.ndarray
    weights: np.ndarray
    intensity: np.ndarray | None


class FitProblem:
    """Loss and gradients of one batch under a fixed configuration."""

    def __init__(self, grids: Sequence[Grid1D], cfg: FitConfig) -> None:
        self._grids = tuple(grids)
        self._cfg = cfg
        self._lw = cfg.loss_weights

    @property
    def four_d(self) -> bool:
        return len(self._grids) == 4

    def _recon(self, pred: np.ndarray, gt: np.ndarray) -> tuple[float, np.ndarray]:
        if self._cfg.recon_loss == "l2":
            return l2(pred, gt)
        return charbonnier(pred, gt, self._lw.charbonnier_eps)

    def _terms(self, recon: float, fused: np.ndarray, weights: np.ndarray) -> LossTerms:
        smooth, _ = smooth_lut(fused)
        mono, _ = mono_lut(fused)
        w_term, _ = weight_l2(weights)
        return LossTerms(
            total=total_loss(recon, (smooth, mono), w_term, self._lw),
            recon=recon,
            smooth=smooth,
            mono=mono,
            weight=w_term,
        )

    def objective(
        self,
        basis_values: np.ndarray,
        weights: np.ndarray,
        low: np.ndarray,
        gt: np.ndarray,
        intensity: np.ndarray | None,
    ) -> LossTerms:
        """The training objective without its gradients."""
        low = np.asarray(low, dtype=np.float64)
        fused = fuse_values(basis_values, weights)
        if self.four_d:
            if intensity is None:
                raise FormatError("an IA-LUT fit needs an intensity map for every batch")
            lut = IaLut4(self._grids, fused)  # type: ignore[arg-type]
            pred = lut.apply(low, np.asarray(intensity, dtype=np.float64), clamp=False)
        else:
            pred = Lut3(self._grids, fused).apply(low, clamp=False)  # type: ignore[arg-type]
        recon, _ = self._recon(pred, gt)
        return self._terms(recon, fused, weights)

    def loss_and_grad(
        self,
        basis_values: np.ndarray,
        weights: np.ndarray,
        low: np.ndarray,
        gt: np.ndarray,
        intensity: np.ndarray | None,
    ) -> tuple[LossTerms, Gradients]:
        low = np.asarray(low, dtype=np.float64)
        fused = fuse_values(basis_values, weights)

        if self.four_d:
            if intensity is None:
                raise FormatError("an IA-LUT fit needs an intensity map for every batch")
            inten = np.asarray(intensity, dtype=np.float64)
            lut = IaLut4(self._grids, fused)  # type: ignore[arg-type]
            pred = lut.apply(low, inten, clamp=False)
            recon, g_pred = self._recon(pred, gt)
            g_fused, d_e = quad_backward(
                lut, low, inten, g_pred, n_chunks=self._cfg.grad_chunks
            )
            g_inten: np.ndarray | None = d_e.reshape(inten.shape)
        else:
            lut3 = Lut3(self._grids, fused)  # type: ignore[arg-type]
            pred = lut3.apply(low, clamp=False)
            recon, g_pred = self._recon(pred, gt)
            g_fused = tri_backward(lut3, low, g_pred, n_chunks=self._cfg.grad_chunks)
            g_inten = None

        smooth, g_smooth = smooth_lut(fused)
        mono, g_mono = mono_lut(fused)
        w_term, g_w = weight_l2(weights)

        g_fused += self._lw.alpha_s * g_smooth
        g_fused += self._lw.alpha_m * g_mono

        shape = (-1,) + (1,) * g_fused.ndim
        g_basis = weights.reshape(shape) * g_fused[None]
        g_weights = np.array(
            [float(np.sum(basis_values[t] * g_fused)) for t in range(basis_values.shape[0])]
        )
        g_weights += self._lw.alpha_s * g_w

        terms = LossTerms(
            total=total_loss(recon, (smooth, mono), w_term, self._lw),
            recon=recon,
            smooth=smooth,
            mono=mono,
            weight=w_term,
        )
        return terms, Gradients(basis=g_basis, weights=g_weights, intensity=g_inten)


# ── Data preparation ───────────────────────────────────────────────────────────

def _check_pairs(pairs: Sequence[ClipPair], cfg: FitConfig) -> None:
    if not pairs:
        raise FormatError("cannot fit on an empty dataset")
    for n, (low, gt, imap) in enumerate(pairs):
        low = np.asarray(low)
        gt = np.asarray(gt)
        if low.ndim != 4 or low.shape[-1] != 3 or low.shape[0] < 1:
            raise ShapeMismatchError(f"clip {n}: low video must be N×H×W×3, got {low.shape}")
        if low.shape != gt.shape:
            raise ShapeMismatchError(f"clip {n}: low {low.shape} and ground truth {gt.shape} differ")
        if low.shape[0] <= cfg.holdout_frames:
            raise ShapeMismatchError(
                f"clip {n}: {low.shape[0]} frame(s) leave nothing to train on "
                f"after holding out {cfg.holdout_frames}"
            )
        if imap is not None and np.asarray(imap).shape != low.shape[:3]:
            raise ShapeMismatchError(
                f"clip {n}: intensity map {np.asarray(imap).shape} does not match video {low.shape[:3]}"
            )
        if cfg.intensity == "provided" and imap is None and not cfg.fit_3d:
            raise FormatError(f"clip {n}: intensity mode 'provided' but no map was supplied")


def _initial_intensity(low: np.ndarray, imap: np.ndarray | None, cfg: FitConfig) -> np.ndarray:
    if cfg.intensity == "constant":
        return np.full(low.shape[:3], cfg.intensity_value, dtype=np.float64)
    if cfg.intensity in ("provided", "free") and imap is not None:
        return np.clip(np.asarray(imap, dtype=np.float64), 0.0, 1.0)
    return np.clip(1.0 - luminance(low), 0.0, 1.0)


def _batches(n_frames: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n_frames)
    return [order[s:s + batch_size] for s in range(0, n_frames, batch_size)]


def _crop_windows(
    frames: np.ndarray, height: int, width: int, crop: int | None, rng: np.random.Generator
) -> list[tuple[int, slice, slice]]:
    windows = []
    for f in frames:
        if crop is None or (crop >= height and crop >= width):
            windows.append((int(f), slice(0, height), slice(0, width)))
            continue
        ch, cw = min(crop, height), min(crop, width)
        y0 = int(rng.integers(0, height - ch + 1))
        x0 = int(rng.integers(0, width - cw + 1))
        windows.append((int(f), slice(y0, y0 + ch), slice(x0, x0 + cw)))
    return windows


# ── Fitting ────────────────────────────────────────────────────────────────────

def fit(pairs: Sequence[ClipPair], cfg: FitConfig) -> FitResult:
    """Fit basis tables, per-clip weights and (free mode) intensities."""
    _check_pairs(pairs, cfg)
    started = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)

    basis, w0 = init_basis(cfg.basis_count, cfg.grid_size, four_d=not cfg.fit_3d)
    basis_values = basis.values.copy()
    weights = np.tile(w0, (len(pairs), 1))
    problem = FitProblem(basis.grids, cfg)

    lows = [np.asarray(low, dtype=np.float64) for low, _, _ in pairs]
    gts = [np.asarray(gt, dtype=np.float64) for _, gt, _ in pairs]
    intensities = (
        None if cfg.fit_3d else [_initial_intensity(low, imap, cfg) for low, (_, _, imap) in zip(lows, pairs)]
    )
    free = cfg.intensity == "free" and intensities is not None

    states: dict[str, AdamState] = {"basis": AdamState.zeros_like(basis_values)}
    for c in range(len(pairs)):
        states[f"w{c}"] = AdamState.zeros_like(weights[c])
        if free and intensities is not None:
            states[f"e{c}"] = AdamState.zeros_like(intensities[c])

    train_frames = [low.shape[0] - cfg.holdout_frames for low in lows]
    steps_per_epoch = sum(math.ceil(n / cfg.batch_size) for n in train_frames)
    total_steps = cfg.epochs * steps_per_epoch
    report = FitReport()

    logger.info(
        "Fitting %d %s basis table(s) at L=%d on %d clip(s): %d epoch(s), %d step(s)",
        cfg.basis_count, "3D LUT" if cfg.fit_3d else "IA-LUT", cfg.grid_size,
        len(pairs), cfg.epochs, total_steps,
    )

    total = _training_objective(problem, basis_values, weights, lows, gts, intensities, train_frames)
    best = _Snapshot.take(0, total, basis_values, weights, intensities)

    step = 0
    lr = cfg.lr
    for epoch in range(1, cfg.epochs + 1):
        sums = np.zeros(5)
        for c in rng.permutation(len(pairs)):
            low, gt = lows[c], gts[c]
            height, width = low.shape[1:3]
            for frames in _batches(train_frames[c], cfg.batch_size, rng):
                windows = _crop_windows(frames, height, width, cfg.crop, rng)
                low_b = np.stack([low[f, ys, xs] for f, ys, xs in windows])
                gt_b = np.stack([gt[f, ys, xs] for f, ys, xs in windows])
                inten_b = (
                    None if intensities is None
                    else np.stack([intensities[c][f, ys, xs] for f, ys, xs in windows])
                )

                lr = scheduled_lr(step, total_steps, cfg)
                terms, grads = problem.loss_and_grad(basis_values, weights[c], low_b, gt_b, inten_b)
                if not math.isfinite(terms.total) or terms.total > DIVERGENCE_LIMIT:
                    report.steps = step
                    report.wall_clock = time.perf_counter() - started
                    raise DivergenceError(
                        f"fit diverged at epoch {epoch}, step {step + 1}: loss {terms.total:.6g}",
                        report,
                    )

                adam_step(basis_values, grads.basis, states["basis"], lr)
                adam_step(weights[c], grads.weights, states[f"w{c}"], lr)
                if free and intensities is not None and grads.intensity is not None:
                    g_e = np.zeros_like(intensities[c])
                    for n, (f, ys, xs) in enumerate(windows):
                        g_e[f, ys, xs] += grads.intensity[n]
                    adam_step(intensities[c], g_e, states[f"e{c}"], lr)
                    np.clip(intensities[c], 0.0, 1.0, out=intensities[c])

                sums += (terms.total, terms.recon, terms.smooth, terms.mono, terms.weight)
                step += 1

        mean = sums / steps_per_epoch
        record = EpochRecord(epoch, lr, *map(float, mean))
        report.epochs.append(record)
        if epoch % cfg.log_every == 0 or epoch == cfg.epochs:
            logger.info(
                "epoch %d/%d  lr=%.3g  total=%.6g  recon=%.6g  smooth=%.4g  mono=%.4g",
                epoch, cfg.epochs, lr, record.total, record.recon, record.smooth, record.mono,
            )
        total = _training_objective(
            problem, basis_values, weights, lows, gts, intensities, train_frames
        )
        if total < best.total:
            best = _Snapshot.take(epoch, total, basis_values, weights, intensities)

    report.steps = step
    report.best_epoch, report.best_total = best.epoch, best.total
    if cfg.keep_best and best.epoch < cfg.epochs:
        logger.warning(
            "Objective %.6g after epoch %d beats the last epoch's %.6g; keeping the epoch-%d tables",
            best.total, best.epoch, total, best.epoch,
        )
        basis_values, weights, intensities = best.basis_values, best.weights, best.intensities

    fitted = BasisLutSet(basis.grids, basis_values)
    report.final_psnr, report.final_mse = _evaluate(fitted, weights, lows, gts, intensities, cfg)
    report.wall_clock = time.perf_counter() - started
    logger.info(
        "Fit finished in %.2fs: final PSNR %.3f dB, MSE %.6g", report.wall_clock,
        report.final_psnr, report.final_mse,
    )
    return FitResult(basis=fitted, weights=weights, intensities=intensities, report=report)


@dataclass(frozen=True)
class _Snapshot:
    epoch: int
    total: float
    basis_values: np.ndarray
    weights: np.ndarray
    intensities: list[np.ndarray] | None

    @classmethod
    def take(
        cls,
        epoch: int,
        total: float,
        basis_values: np.ndarray,
        weights: np.ndarray,
        intensities: list[np.ndarray] | None,
    ) -> "_Snapshot":
        return cls(
            epoch=epoch,
            total=total,
            basis_values=basis_values.copy(),
            weights=weights.copy(),
            intensities=None if intensities is None else [e.copy() for e in intensities],
        )


def _training_objective(
    problem: FitProblem,
    basis_values: np.ndarray,
    weights: np.ndarray,
    lows: list[np.ndarray],
    gts: list[np.ndarray],
    intensities: list[np.ndarray] | None,
    train_frames: list[int],
) -> float:
    """Mean over clips of the full-frame objective on the training frames."""
    totals = []
    for c, (low, gt) in enumerate(zip(lows, gts)):
        n = train_frames[c]
        inten = None if intensities is None else intensities[c][:n]
        totals.append(problem.objective(basis_values, weights[c], low[:n], gt[:n], inten).total)
    return float(np.mean(totals))


def _evaluate(
    basis: BasisLutSet,
    weights: np.ndarray,
    lows: list[np.ndarray],
    gts: list[np.ndarray],
    intensities: list[np.ndarray] | None,
    cfg: FitConfig,
) -> tuple[float, float]:
    """PSNR and MSE of the exported tables on held-out frames (or all frames)."""
    preds, targets = [], []
    for c, (low, gt) in enumerate(zip(lows, gts)):
        frames = slice(low.shape[0] - cfg.holdout_frames, None) if cfg.holdout_frames else slice(None)
        lut = export(basis, weights[c])
        if isinstance(lut, IaLut4) and intensities is not None:
            preds.append(lut.apply(low[frames], intensities[c][frames]))
        else:
            preds.append(lut.apply(low[frames]))  # type: ignore[call-arg]
        targets.append(gt[frames])
    pred = np.concatenate([p.reshape(-1) for p in preds])
    target = np.concatenate([t.reshape(-1) for t in targets])
    return psnr(pred, target), float(np.mean((pred - target) ** 2))


# ── Synthetic one-to-many data ─────────────────────────────────────────────────

def gen_one_to_many(
    height: int,
    width: int,
    frames: int,
    input_color: Sequence[float],
    target_a: Sequence[float],
    target_b: Sequence[float],
    seed: int = 0,
    noise: float = 0.0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """A uniform low clip whose left half must map to target_a, right half to target_b.

    The intensity map is 0 on the left half and 1 on the right half. With
    noise > 0, seeded Gaussian noise of that standard deviation is added to
    the low clip.
    """
    if height < 1 or width < 1:
        raise FormatError(f"frame size must be non-zero, got {width}x{height}")
    if frames < 1:
        raise FormatError("frames must be ≥ 1")
    colors = [np.asarray(c, dtype=np.float64) for c in (input_color, target_a, target_b)]
    for c in colors:
        if c.shape != (3,) or np.any(c < 0.0) or np.any(c > 1.0):
            raise FormatError(f"colours must be rgb triples in [0, 1], got {c.tolist()}")
    src, a, b = colors
    half = width // 2

    low = np.broadcast_to(src, (frames, height, width, 3)).copy()
    if noise > 0.0:
        rng = np.random.default_rng(seed)
        low = np.clip(low + rng.normal(0.0, noise, low.shape), 0.0, 1.0)
    gt = np.empty((frames, height, width, 3), dtype=np.float64)
    gt[:, :, :half] = a
    gt[:, :, half:] = b
    imap = np.zeros((frames, height, width), dtype=np.float64)
    imap[:, :, half:] = 1.0
    return low, gt, imap
