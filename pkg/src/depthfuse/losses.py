"""Set-image losses over augmented copies of one image, with analytic gradients.

Every loss returns a :class:`LossValue` holding the scalar and its gradient
with respect to each differentiated map.  Gradients are exactly zero at
pixels that do not enter the loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from depthfuse.core import (
    DepthMap,
    GradientMap,
    require_same_grid,
    require_same_scale,
    valid_intersection,
)
from depthfuse.errors import EmptyMask, SetTooSmall
from depthfuse.fusion import gradient_adjoint, gradient_op
from depthfuse.transforms import AugTransform, TransformMapping, realign, realign_array

DEFAULT_LAMBDA = 1.0


@dataclass(eq=False)
class LossValue:
    value: float
    # d(value)/d(depth map), one (H, W) array per depth argument.
    grads: tuple = ()
    # d(value)/d(gradient map), one (2, H, W) array [d/dgx, d/dgy] per gradient argument.
    grads_g: tuple = ()


@dataclass(frozen=True, eq=False)
class ImageSetBatch:
    """Estimates and ground truths for ``{I, f_1(I), ..., f_{N-1}(I)}``.

    ``transforms[i]`` is the augmentation that produced image ``i``; by
    convention ``transforms[0]`` is the identity.
    """

    estimates: Sequence[DepthMap]
    ground_truths: Sequence[DepthMap]
    transforms: Sequence[AugTransform] = field(default=())

    def __post_init__(self):
        estimates = tuple(self.estimates)
        gts = tuple(self.ground_truths)
        transforms = tuple(self.transforms) or tuple(AugTransform.identity() for _ in estimates)
        if not estimates:
            raise ValueError("image set must contain at least one image")
        if not len(estimates) == len(gts) == len(transforms):
            raise ValueError(
                f"estimates ({len(estimates)}), ground truths ({len(gts)}) and "
                f"transforms ({len(transforms)}) must have equal length"
            )
        require_same_grid(*estimates, *gts)
        require_same_scale(*estimates, *gts)
        object.__setattr__(self, "estimates", estimates)
        object.__setattr__(self, "ground_truths", gts)
        object.__setattr__(self, "transforms", transforms)

    @property
    def n(self) -> int:
        return len(self.estimates)

    def with_estimates(self, estimates: Sequence[DepthMap]) -> "ImageSetBatch":
        return ImageSetBatch(estimates, self.ground_truths, self.transforms)


def l2_pixelwise(d1: DepthMap, d2: DepthMap) -> LossValue:
    """Mean squared difference over jointly valid pixels."""
    require_same_grid(d1, d2)
    require_same_scale(d1, d2)
    mask = valid_intersection(d1.mask, d2.mask)
    n = np.count_nonzero(mask)
    if n == 0:
        raise EmptyMask("no jointly valid pixels")
    diff = np.where(mask, d1.values - d2.values, 0.0)
    grad = (2.0 / n) * diff
    return LossValue(float(np.sum(diff * diff) / n), (grad, -grad))


def l2g_pixelwise(g1: GradientMap, g2: GradientMap) -> LossValue:
    require_same_grid(g1, g2)
    require_same_scale(g1, g2)
    mask = valid_intersection(g1.mask, g2.mask)
    n = np.count_nonzero(mask)
    if n == 0:
        raise EmptyMask("no jointly valid gradient pixels")
    diff = np.where(mask, g1.stacked() - g2.stacked(), 0.0)
    grad = (2.0 / n) * diff
    return LossValue(float(np.sum(diff * diff) / n), grads_g=(grad, -grad))


def loss_single(batch: ImageSetBatch) -> LossValue:
    n = batch.n
    total = 0.0
    grads = []
    for est, gt in zip(batch.estimates, batch.ground_truths):
        lv = l2_pixelwise(est, gt)
        total += lv.value
        grads.append(lv.grads[0] / n)
    return LossValue(total / n, tuple(grads))


def set_regularizer(batch: ImageSetBatch) -> LossValue:
    """Average pairwise l2 between estimates after realigning them to each other."""
    n = batch.n
    if n < 2:
        raise SetTooSmall("set regularizer needs at least two images")
    coeff = 2.0 / (n * (n - 1))
    total = 0.0
    grads = [np.zeros(batch.estimates[0].shape) for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            g_ij = TransformMapping(batch.transforms[i], batch.transforms[j])
            lv = l2_pixelwise(batch.estimates[i], realign(g_ij, batch.estimates[j]))
            total += lv.value
            grads[i] += lv.grads[0]
            # realignment is a pixel permutation; its transpose is the inverse mapping
            grads[j] += realign_array(g_ij.inverse(), lv.grads[1])
    return LossValue(coeff * total, tuple(coeff * g for g in grads))


def loss_set(batch: ImageSetBatch, lam: float = DEFAULT_LAMBDA) -> LossValue:
    """``L_single + lam * Omega_set``; the regularizer is skipped for a single image."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    single = loss_single(batch)
    if batch.n < 2:
        return single
    reg = set_regularizer(batch)
    grads = tuple(a + lam * b for a, b in zip(single.grads, reg.grads))
    return LossValue(single.value + lam * reg.value, grads)


def loss_combined(batch: ImageSetBatch, gradient_estimates: Sequence[GradientMap],
                  lam: float = DEFAULT_LAMBDA) -> LossValue:
    """Set loss plus the mean gradient-consistency term ``l2g(grad D_i, G_i)``.

    ``grads`` are w.r.t. the depth estimates, ``grads_g`` w.r.t. the
    gradient estimates.
    """
    gradient_estimates = tuple(gradient_estimates)
    n = batch.n
    if len(gradient_estimates) != n:
        raise ValueError(f"need {n} gradient estimates, got {len(gradient_estimates)}")
    base = loss_set(batch, lam)
    total = base.value
    grads = list(base.grads)
    grads_g = []
    for i, (est, g_est) in enumerate(zip(batch.estimates, gradient_estimates)):
        lv = l2g_pixelwise(gradient_op(est), g_est)
        total += lv.value / n
        c = lv.grads_g[0] / n
        grads[i] = grads[i] + gradient_adjoint(c[0], c[1])
        grads_g.append(lv.grads_g[1] / n)
    return LossValue(total, tuple(grads), tuple(grads_g))


# -- finite-difference checking ------------------------------------------------

GRADCHECK_STEP = 1e-5
GRADCHECK_TOL = 1e-5
# Denominator floor so tiny gradients are judged on absolute error.
GRADCHECK_FLOOR = 1e-4


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), GRADCHECK_FLOOR)
    return np.abs(analytic - numeric) / denom


def _central_difference(f: Callable[[np.ndarray], float], x: np.ndarray,
                        where: np.ndarray, step: float) -> np.ndarray:
    out = np.zeros_like(x)
    flat = x.reshape(-1)
    for k in np.flatnonzero(where.reshape(-1)):
        old = flat[k]
        flat[k] = old + step
        up = f(x)
        flat[k] = old - step
        down = f(x)
        flat[k] = old
        out.reshape(-1)[k] = (up - down) / (2 * step)
    return out


def check_loss_gradients(batch: ImageSetBatch,
                         gradient_estimates: Optional[Sequence[GradientMap]] = None,
                         lam: float = DEFAULT_LAMBDA,
                         step: float = GRADCHECK_STEP) -> dict[str, float]:
    """Worst relative error between analytic and central-difference gradients.

    Covers l2, l2g (on the first image), L_single, Omega_set (N >= 2), L_set
    and, when gradient estimates are given, L_comb.  Only valid pixels are
    perturbed.
    """
    def depth_errors(loss: Callable[[ImageSetBatch], LossValue]) -> float:
        analytic = loss(batch).grads
        worst = 0.0
        for i, est in enumerate(batch.estimates):
            x = est.values.copy()

            def f(v, i=i):
                ests = list(batch.estimates)
                ests[i] = est.replace(values=v)
                return loss(batch.with_estimates(ests)).value

            num = _central_difference(f, x, est.mask, step)
            err = relative_error(analytic[i], num)[est.mask]
            worst = max(worst, float(err.max(initial=0.0)))
        return worst

    d1, d2 = batch.estimates[0], batch.ground_truths[0]

    def first_pair_l2(b: ImageSetBatch) -> LossValue:
        lv = l2_pixelwise(b.estimates[0], d2)
        zeros = tuple(np.zeros(d1.shape) for _ in range(b.n - 1))
        return LossValue(lv.value, (lv.grads[0],) + zeros)

    report = {"l2": depth_errors(first_pair_l2)}
    report["single"] = depth_errors(loss_single)
    if batch.n >= 2:
        report["set_regularizer"] = depth_errors(set_regularizer)
    report["set"] = depth_errors(lambda b: loss_set(b, lam))

    if gradient_estimates is not None:
        gradient_estimates = tuple(gradient_estimates)
        report["combined"] = depth_errors(lambda b: loss_combined(b, gradient_estimates, lam))
        g_ref = gradient_op(d1)
        g0 = gradient_estimates[0]
        analytic = l2g_pixelwise(g0, g_ref).grads_g[0]
        stacked = g0.stacked()

        def f_g(v):
            return l2g_pixelwise(GradientMap(v[0], v[1], g0.mask, g0.scale), g_ref).value

        mask2 = np.stack([g0.mask, g0.mask])
        num = _central_difference(f_g, stacked, mask2, step)
        report["l2g"] = float(relative_error(analytic, num)[mask2].max(initial=0.0))
        # L_comb w.r.t. the gradient estimates
        analytic_c = loss_combined(batch, gradient_estimates, lam).grads_g
        worst = 0.0
        for i, g in enumerate(gradient_estimates):
            mask2 = np.stack([g.mask, g.mask])

            def f_c(v, i=i, g=g):
                gs = list(gradient_estimates)
                gs[i] = GradientMap(v[0], v[1], g.mask, g.scale)
                return loss_combined(batch, gs, lam).value

            num = _central_difference(f_c, g.stacked(), mask2, step)
            worst = max(worst, float(relative_error(analytic_c[i], num)[mask2].max(initial=0.0)))
        report["combined_wrt_gradients"] = worst
    return report
