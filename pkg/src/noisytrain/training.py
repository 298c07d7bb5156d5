"""Two-network training: cross-entropy warmup and the per-epoch SSL loop.

Each SSL epoch trains the networks alternately.  Before a network's half
of the epoch, the clean/noisy partition is recomputed from scratch, so
the other network's most recent update always informs the split.  Within
the half, clean batches get refined labels, noisy batches get sharpened
pseudo-labels guessed by both networks, everything is mixed with MixUp,
and the contrastive term pulls together the two strong views of each
noisy sample.

Label refinement and pseudo-label guessing are evaluation-mode forward
passes: their outputs enter the losses as constants, never on the tape.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernel
from .data import (AugmentationSpec, LabeledDataset, batch_iterator,
                   strong_augment, weak_augment)
from .kernel import GradientTape, Matrix, OptimizerState, backward, sgd_step
from .model import ALL_GROUPS, PHI, THETA, NetworkParams, TwinNetworks, \
    ensemble_softmax, forward_logits, forward_projection, forward_softmax
from .selection import (CutoffParams, DivergenceReport, SelectionResult,
                        baseline_global_select, compute_cutoff,
                        compute_filter_rate, divergences_from_probs,
                        uniform_select)

logger = logging.getLogger(__name__)

# rng substream tags
_S_WARMUP = 50
_S_CLEAN = 60
_S_NOISY = 61
_S_ITER = 70


class DegenerateBatchError(RuntimeError):
    """MixMatch assembly was asked to mix an empty collection."""


@dataclass(frozen=True)
class Hyperparams:
    """Every scalar training knob in one validated record."""

    T: float = 0.5
    lambda_u: float = 30.0
    lambda_c: float = 0.025
    lambda_r: float = 1.0
    kappa: float = 0.05
    d_omega: float = 0.5
    alpha: float = 4.0
    lr: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 64
    warmup_epochs: int = 10
    total_epochs: int = 300
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 120
    seed: int = 0

    def __post_init__(self):
        if self.T <= 0:
            raise ValueError("T must be > 0")
        if self.kappa <= 0:
            raise ValueError("kappa must be > 0")
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        for name in ("lambda_u", "lambda_c", "lambda_r"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 <= self.d_omega <= 1.0:
            raise ValueError("d_omega must be in [0, 1]")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.warmup_epochs < 0 or self.total_epochs < 0:
            raise ValueError("epoch counts must be >= 0")
        if self.total_epochs < self.warmup_epochs:
            raise ValueError("total_epochs must be >= warmup_epochs")
        if not 0.0 < self.lr_decay_factor <= 1.0:
            raise ValueError("lr_decay_factor must be in (0, 1]")
        if self.lr_decay_every < 1:
            raise ValueError("lr_decay_every must be >= 1")


@dataclass(frozen=True)
class AblationFlags:
    """Switchable pieces of the pipeline; all on for the full method."""

    balancing: bool = True
    contrastive: bool = True
    ensemble: bool = True


@dataclass
class MixedBatch:
    inputs: Matrix
    targets: Matrix
    lambda_prime: np.ndarray


def one_hot(labels, num_classes: int) -> Matrix:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((len(labels), num_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return Matrix(out)


def refinement_weights(d: np.ndarray, d_omega: float) -> np.ndarray:
    """Confidence weight per sample: 1 below the threshold, else 1 - d."""
    d = np.asarray(d, dtype=np.float64)
    return np.where(d < d_omega, 1.0, 1.0 - d)


def sharpen(p: Matrix, T: float) -> Matrix:
    """Raise each row to 1/T and renormalize; T < 1 concentrates mass."""
    if T <= 0:
        raise ValueError("T must be > 0")
    powered = p.data ** (1.0 / T)
    return Matrix(powered / powered.sum(axis=1, keepdims=True))


def blend_targets(y_onehot: Matrix, p: Matrix, weights: np.ndarray) -> Matrix:
    """Per-row convex combination w * y + (1 - w) * p."""
    w = np.asarray(weights, dtype=np.float64).reshape(-1, 1)
    return Matrix(w * y_onehot.data + (1.0 - w) * p.data)


def refine_labels(net: NetworkParams, x_weak_1: Matrix, x_weak_2: Matrix,
                  y_onehot: Matrix, weights: np.ndarray, T: float) -> Matrix:
    """Blend given labels with the training network's average prediction.

    Only the network currently being trained contributes here; pseudo
    labels for the noisy set are the ones that use both networks.
    """
    p = Matrix((forward_softmax(net, x_weak_1).data + forward_softmax(net, x_weak_2).data) / 2.0)
    return sharpen(blend_targets(y_onehot, p, weights), T)


def guess_pseudo_labels(twins: TwinNetworks, u_weak_1: Matrix, u_weak_2: Matrix, T: float) -> Matrix:
    """Average both networks over both weak views, then sharpen."""
    q = (forward_softmax(twins.net1, u_weak_1).data
         + forward_softmax(twins.net1, u_weak_2).data
         + forward_softmax(twins.net2, u_weak_1).data
         + forward_softmax(twins.net2, u_weak_2).data) / 4.0
    return sharpen(Matrix(q), T)


def mixup_with_lambda(x1: Matrix, t1: Matrix, x2: Matrix, t2: Matrix, lam: np.ndarray) -> MixedBatch:
    """Convex combination with given per-row coefficients (already >= 0.5)."""
    lam = np.asarray(lam, dtype=np.float64).reshape(-1, 1)
    inputs = Matrix(lam * x1.data + (1.0 - lam) * x2.data)
    targets = Matrix(lam * t1.data + (1.0 - lam) * t2.data)
    return MixedBatch(inputs, targets, lam.ravel())


def mixup(x1: Matrix, t1: Matrix, x2: Matrix, t2: Matrix, alpha: float,
          rng: np.random.Generator) -> MixedBatch:
    """Beta(alpha, alpha) mixing with lambda' = max(lambda, 1 - lambda).

    The max keeps every mixed sample dominated by its first argument, so
    a clean batch stays mostly clean after mixing.
    """
    lam = rng.beta(alpha, alpha, size=x1.rows)
    lam = np.maximum(lam, 1.0 - lam)
    return mixup_with_lambda(x1, t1, x2, t2, lam)


def mixmatch_assemble(x_inputs: Matrix, x_targets: Matrix,
                      u_inputs: Matrix, u_targets: Matrix,
                      alpha: float, rng: np.random.Generator) -> tuple[MixedBatch, MixedBatch]:
    """Mix labeled and unlabeled entries against a shuffle of their union."""
    n_x, n_u = x_inputs.rows, u_inputs.rows
    if n_x == 0 or n_u == 0:
        raise DegenerateBatchError("mixmatch needs non-empty labeled and unlabeled collections")
    all_inputs = np.vstack([x_inputs.data, u_inputs.data])
    all_targets = np.vstack([x_targets.data, u_targets.data])
    perm = rng.permutation(n_x + n_u)
    w_inputs = all_inputs[perm]
    w_targets = all_targets[perm]
    mixed_x = mixup(x_inputs, x_targets,
                    Matrix(w_inputs[:n_x]), Matrix(w_targets[:n_x]), alpha, rng)
    mixed_u = mixup(u_inputs, u_targets,
                    Matrix(w_inputs[n_x:]), Matrix(w_targets[n_x:]), alpha, rng)
    return mixed_x, mixed_u


# ---------------------------------------------------------------------------
# loss terms (tape-aware; targets are constants)


def loss_lx(logits: Matrix, targets: Matrix, tape: GradientTape | None = None) -> Matrix:
    """Mean soft cross-entropy between target rows and softmax(logits)."""
    ls = kernel.log_softmax_rows(logits, tape)
    total = kernel.sum_all(kernel.mul(ls, targets, tape), tape)
    return kernel.scale(total, -1.0 / logits.rows, tape)


def loss_lu(logits: Matrix, targets: Matrix, tape: GradientTape | None = None) -> Matrix:
    """Mean squared Euclidean distance between targets and softmax(logits)."""
    p = kernel.softmax_rows(logits, tape)
    diff = kernel.sub(p, targets, tape)
    total = kernel.sum_all(kernel.mul(diff, diff, tape), tape)
    return kernel.scale(total, 1.0 / logits.rows, tape)


def loss_reg(logits: Matrix, num_classes: int, tape: GradientTape | None = None) -> Matrix:
    """KL of the uniform prior from the batch-mean prediction.

    Penalizes collapsing all outputs onto few classes; zero when the
    batch-mean prediction is exactly uniform.
    """
    n = logits.rows
    p = kernel.softmax_rows(logits, tape)
    mean_row = kernel.matmul(Matrix(np.full((1, n), 1.0 / n)), p, tape)
    log_mean = kernel.log(mean_row, tape)
    cross = kernel.scale(kernel.sum_all(log_mean, tape), -1.0 / num_classes, tape)
    return kernel.add(cross, Matrix([[-np.log(num_classes)]]), tape)


def _pair_mask(n: int) -> Matrix:
    mask = np.zeros((n, n))
    idx = np.arange(n)
    mask[idx, idx ^ 1] = 1.0
    return Matrix(mask)


def loss_contrastive(embeddings: Matrix, kappa: float, tape: GradientTape | None = None) -> Matrix:
    """Normalized-temperature cross-entropy over interleaved positive pairs.

    Rows 2b and 2b+1 are the two augmented views of sample b; every other
    row in the batch is a negative.  An empty batch contributes zero, and
    a single pair is exactly zero (its denominator is just the positive).
    """
    n = embeddings.rows
    if n == 0:
        return Matrix([[0.0]])
    if n % 2 != 0:
        raise ValueError("contrastive batch must hold an even number of embeddings")
    sim = kernel.matmul(embeddings, kernel.transpose(embeddings, tape), tape)
    sim_t = kernel.scale(sim, 1.0 / kappa, tape)
    denom = kernel.sum_all(kernel.lse_offdiag_rows(sim_t, tape), tape)
    pos = kernel.sum_all(kernel.mul(sim_t, _pair_mask(n), tape), tape)
    return kernel.scale(kernel.sub(denom, pos, tape), 1.0 / n, tape)


def total_loss(lx: Matrix, lu: Matrix, lreg: Matrix, lc: Matrix,
               hp: Hyperparams, tape: GradientTape | None = None) -> Matrix:
    semi = kernel.add(lx, kernel.scale(lu, hp.lambda_u, tape), tape)
    extra = kernel.add(kernel.scale(lreg, hp.lambda_r, tape),
                       kernel.scale(lc, hp.lambda_c, tape), tape)
    return kernel.add(semi, extra, tape)


# ---------------------------------------------------------------------------
# epoch mechanics


def decayed_lr(hp: Hyperparams, epoch: int) -> float:
    """Step decay: multiply by the decay factor every lr_decay_every epochs."""
    return hp.lr * (hp.lr_decay_factor ** (epoch // hp.lr_decay_every))


@dataclass
class HalfEpochRecord:
    """What one network's half of an SSL epoch produced."""

    net_index: int
    report: DivergenceReport
    selection: SelectionResult
    losses: dict[str, float]
    degenerate: str | None = None


@dataclass
class EpochRecord:
    halves: list[HalfEpochRecord] = field(default_factory=list)

    def mean_losses(self) -> dict[str, float]:
        keys = ("lx", "lu", "lreg", "lc")
        return {k: float(np.mean([h.losses[k] for h in self.halves])) for k in keys}


def _rows(features: Matrix, idx: np.ndarray) -> Matrix:
    return Matrix(features.data[idx])


def _update_params(net: NetworkParams, opt: OptimizerState, grads: dict[Matrix, Matrix],
                   group_names: tuple[str, ...]) -> None:
    group = net.group(group_names)
    named_grads = {name: grads[p] for name, p in group.items()}
    net.params.update(sgd_step(opt, group, named_grads))


def warmup_train(twins: TwinNetworks, opts: tuple[OptimizerState, OptimizerState],
                 ds: LabeledDataset, hp: Hyperparams, epochs: int,
                 epoch_offset: int = 0) -> list[float]:
    """Cross-entropy on all given labels, both networks independently.

    The projection head is untouched during warmup.  Returns the mean CE
    per epoch (averaged over both networks).
    """
    all_idx = np.arange(len(ds))
    targets_full = one_hot(ds.given_labels, ds.num_classes)
    epoch_losses = []
    for i in range(epochs):
        epoch = epoch_offset + i
        ce_values = []
        for k, (net, opt) in enumerate(zip((twins.net1, twins.net2), opts), start=1):
            opt.learning_rate = decayed_lr(hp, epoch)
            for batch in batch_iterator(all_idx, hp.batch_size, (hp.seed, _S_WARMUP, k), epoch):
                tape = GradientTape()
                for p in net.group(THETA + PHI).values():
                    tape.watch(p)
                logits = forward_logits(net, _rows(ds.features, batch), tape)
                ce = loss_lx(logits, _rows(targets_full, batch), tape)
                grads = backward(tape, ce)
                _update_params(net, opt, grads, THETA + PHI)
                ce_values.append(ce.item())
        epoch_losses.append(float(np.mean(ce_values)) if ce_values else 0.0)
    return epoch_losses


def select_for_network(twins: TwinNetworks, net_index: int, ds: LabeledDataset,
                       cutoff_params: CutoffParams, flags: AblationFlags,
                       quota_mode: str = "class_fraction") -> tuple[DivergenceReport, SelectionResult]:
    """One full selection pass as seen by the given network.

    With ensembling on, divergences come from the averaged prediction of
    both networks; with it off, only the network's own softmax is used.
    """
    if flags.ensemble:
        probs = ensemble_softmax(twins, ds.features)
    else:
        net = twins.net1 if net_index == 1 else twins.net2
        probs = forward_softmax(net, ds.features)
    report = divergences_from_probs(probs, ds.given_labels)
    d_cut = compute_cutoff(report, cutoff_params)
    rate = compute_filter_rate(report, d_cut)
    if flags.balancing:
        sel = uniform_select(report, ds.given_labels, ds.num_classes, rate,
                             quota_mode=quota_mode, d_cutoff=d_cut)
    else:
        sel = baseline_global_select(report, rate, ds.given_labels, ds.num_classes,
                                     d_cutoff=d_cut)
    return report, sel


def _interleave_two_views(a: Matrix, b: Matrix) -> Matrix:
    """Stack two per-sample views as adjacent rows: a0, b0, a1, b1, ..."""
    n, d = a.shape
    out = np.empty((2 * n, d))
    out[0::2] = a.data
    out[1::2] = b.data
    return Matrix(out)


def _repeat_rows_twice(t: Matrix) -> Matrix:
    return Matrix(np.repeat(t.data, 2, axis=0))


def train_half_epoch(twins: TwinNetworks, net_index: int,
                     opts: tuple[OptimizerState, OptimizerState],
                     ds: LabeledDataset, hp: Hyperparams, aug: AugmentationSpec,
                     cutoff_params: CutoffParams, flags: AblationFlags,
                     epoch: int, quota_mode: str = "class_fraction",
                     precomputed: tuple[DivergenceReport, SelectionResult] | None = None) -> HalfEpochRecord:
    """Select, then train one network while the other stays frozen."""
    net = twins.net1 if net_index == 1 else twins.net2
    opt = opts[net_index - 1]
    opt.learning_rate = decayed_lr(hp, epoch)

    if precomputed is None:
        report, sel = select_for_network(twins, net_index, ds, cutoff_params, flags, quota_mode)
    else:
        report, sel = precomputed
    weights = refinement_weights(report.d, hp.d_omega)
    targets_full = one_hot(ds.given_labels, ds.num_classes)

    clean_batches = batch_iterator(sel.clean_indices, hp.batch_size,
                                   (hp.seed, _S_CLEAN, net_index), epoch)
    noisy_batches = batch_iterator(sel.noisy_indices, hp.batch_size,
                                   (hp.seed, _S_NOISY, net_index), epoch)

    losses = {"lx": [], "lu": [], "lreg": [], "lc": []}
    degenerate = None

    if not clean_batches:
        # no trusted samples: fall back to plain CE on the given labels
        degenerate = "empty_clean"
        logger.warning("epoch %d net %d: clean set empty, falling back to CE on noisy set",
                       epoch, net_index)
        for batch in noisy_batches:
            tape = GradientTape()
            for p in net.group(THETA + PHI).values():
                tape.watch(p)
            logits = forward_logits(net, _rows(ds.features, batch), tape)
            ce = loss_lx(logits, _rows(targets_full, batch), tape)
            grads = backward(tape, ce)
            _update_params(net, opt, grads, THETA + PHI)
            losses["lx"].append(ce.item())
            for key in ("lu", "lreg", "lc"):
                losses[key].append(0.0)
        return HalfEpochRecord(net_index, report, sel, _mean_losses(losses), degenerate)

    if not noisy_batches:
        degenerate = "empty_noisy"
        logger.warning("epoch %d net %d: noisy set empty, training on refined clean labels only",
                       epoch, net_index)

    iterations = zip(clean_batches, noisy_batches) if noisy_batches else \
        ((cb, None) for cb in clean_batches)

    for it, (cb, ub) in enumerate(iterations):
        rng = np.random.default_rng([hp.seed, _S_ITER, epoch, net_index, it])
        x_raw = _rows(ds.features, cb)
        xw1 = weak_augment(x_raw, aug, rng)
        xw2 = weak_augment(x_raw, aug, rng)
        xs1 = strong_augment(x_raw, aug, rng)
        xs2 = strong_augment(x_raw, aug, rng)
        y_refined = refine_labels(net, xw1, xw2, _rows(targets_full, cb), weights[cb], hp.T)
        x_in = _interleave_two_views(xs1, xs2)
        x_t = _repeat_rows_twice(y_refined)

        if ub is not None:
            u_raw = _rows(ds.features, ub)
            uw1 = weak_augment(u_raw, aug, rng)
            uw2 = weak_augment(u_raw, aug, rng)
            us1 = strong_augment(u_raw, aug, rng)
            us2 = strong_augment(u_raw, aug, rng)
            q = guess_pseudo_labels(twins, uw1, uw2, hp.T)
            u_in = _interleave_two_views(us1, us2)
            u_t = _repeat_rows_twice(q)
            mixed_x, mixed_u = mixmatch_assemble(x_in, x_t, u_in, u_t, hp.alpha, rng)
        else:
            # noisy set exhausted: mix the clean entries among themselves
            perm = rng.permutation(x_in.rows)
            mixed_x = mixup(x_in, x_t, Matrix(x_in.data[perm]), Matrix(x_t.data[perm]),
                            hp.alpha, rng)
            mixed_u = None

        tape = GradientTape()
        for p in net.group(ALL_GROUPS).values():
            tape.watch(p)
        logits_x = forward_logits(net, mixed_x.inputs, tape)
        lx = loss_lx(logits_x, mixed_x.targets, tape)
        if mixed_u is not None:
            logits_u = forward_logits(net, mixed_u.inputs, tape)
            lu = loss_lu(logits_u, mixed_u.targets, tape)
            logits_all = kernel.concat_rows(logits_x, logits_u, tape)
        else:
            lu = Matrix([[0.0]])
            logits_all = logits_x
        lreg = loss_reg(logits_all, ds.num_classes, tape)
        if flags.contrastive and ub is not None:
            z = forward_projection(net, u_in, tape)
            lc = loss_contrastive(z, hp.kappa, tape)
        else:
            lc = Matrix([[0.0]])
        ltot = total_loss(lx, lu, lreg, lc, hp, tape)
        grads = backward(tape, ltot)
        _update_params(net, opt, grads, ALL_GROUPS)

        losses["lx"].append(lx.item())
        losses["lu"].append(lu.item())
        losses["lreg"].append(lreg.item())
        losses["lc"].append(lc.item())

    return HalfEpochRecord(net_index, report, sel, _mean_losses(losses), degenerate)


def _mean_losses(losses: dict[str, list[float]]) -> dict[str, float]:
    return {k: (float(np.mean(v)) if v else 0.0) for k, v in losses.items()}


def train_epoch(twins: TwinNetworks, opts: tuple[OptimizerState, OptimizerState],
                ds: LabeledDataset, hp: Hyperparams, aug: AugmentationSpec,
                cutoff_params: CutoffParams, flags: AblationFlags, epoch: int,
                quota_mode: str = "class_fraction",
                first_selection: tuple[DivergenceReport, SelectionResult] | None = None) -> EpochRecord:
    """One SSL epoch: fresh selection before each network, trained in turn."""
    record = EpochRecord()
    for net_index in (1, 2):
        pre = first_selection if net_index == 1 else None
        record.halves.append(
            train_half_epoch(twins, net_index, opts, ds, hp, aug, cutoff_params,
                             flags, epoch, quota_mode, precomputed=pre))
    return record
