"""Loss terms, the pose-level / joint-level / fusion training loops, and
evaluation analytics (MPJPE, PA-MPJPE, uncertainty statistics, AUROC).

Every loss term owns its own Adam optimizer; within an iteration the
updates run sequentially in the algorithm's order.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .model import FusionNet, PoseNet
from .optim import Adam
from .skeleton import mpjpe, pa_mpjpe
from .uncertainty import (PseudoLabelSet, joint_uncertainty, pose_uncertainty,
                          pose_uncertainty_np, predict,
                          select_joint_pseudo_labels, select_pose_pseudo_labels)

LN_GRID = None  # entropy ceiling is config dependent; computed per call


@dataclass
class HyperParams:
    """Every scalar knob of the training algorithms. The selection
    thresholds default to fractions of the entropy ceiling ln(H'W') so they
    stay meaningful across grid sizes."""

    lam1: float = 1.0            # 3D-pose weight in the supervised losses
    lam2: float = 0.1            # uncertainty weight in the supervised losses
    lam: float = 1.0             # 3D-pose weight in the pseudo-label loss
    alpha_p: float = 0.05        # pose-level pseudo-label threshold
    alpha_q: float = 0.02 * math.log(256.0)
    alpha_h: float = 0.5 * math.log(256.0)
    k_interval: int = 200        # pseudo-label refresh / eval period
    max_iter: int = 3000
    m_u: float = 0.5             # background hinge margin (half frame)
    m_h: float = 0.9 * math.log(256.0)   # entropy-maximization hinge margin
    # In-view sharpness hinge margin (~0.81 of the 16x16 entropy ceiling).
    # Low enough that visible joints separate cleanly from occluded ones,
    # high enough that the sharpening pressure releases before it starts
    # fighting the localization loss over peak placement.
    m_l: float = 4.5
    lr: float = 1e-3
    lr_overrides: dict = field(default_factory=dict)  # loss name -> lr
    batch_size: int = 8
    sigma: float = 1.0           # GT heatmap sigma, grid cells
    # Entropy-shaping terms update only the localization head when True.
    # Letting them touch the shared encoder flattens every heatmap: under
    # per-loss Adam the flattening direction gets a full-size step no
    # matter how weak its gradient, and the supervised terms lose.
    entropy_head_only: bool = True

    def __post_init__(self):
        for name in ("lam1", "lam2", "lam", "alpha_p", "alpha_q", "alpha_h",
                     "m_u", "m_h", "m_l", "lr"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.k_interval < 1 or self.max_iter < 0:
            raise ValueError("k_interval >= 1 and max_iter >= 0 required")

    def lr_for(self, loss_name):
        return self.lr_overrides.get(loss_name, self.lr)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, doc):
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown HyperParams keys: {sorted(unknown)}")
        return cls(**doc)


@dataclass
class TrainState:
    model: PoseNet
    fusion: FusionNet | None
    optimizers: dict
    pseudo: object
    iteration: int
    metrics: list = field(default_factory=list)
    loss_log: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# loss terms


def _per_joint_heat_mse(out, h_gt):
    b, j = out.heatmap.shape[:2]
    d = ad.sub(ad.reshape(out.heatmap, (b, j, -1)),
               Tensor(np.asarray(h_gt, dtype=np.float64).reshape(b, j, -1)))
    return ad.tmean(ad.mul(d, d), axis=-1)  # (B, J)


def _per_joint_pose_mse(out, p_gt):
    d = ad.sub(out.pose_cam, Tensor(p_gt))
    return ad.tmean(ad.mul(d, d), axis=-1)  # (B, J)


def loss_sup_source(out, h_gt, p_gt, hp):
    """Heatmap MSE + lam1 * 3D-pose MSE + lam2 * pose-uncertainty,
    averaged over the batch."""
    loss = ad.mse(out.heatmap, Tensor(np.asarray(h_gt, dtype=np.float64)))
    loss = ad.add(loss, ad.scale(ad.mse(out.pose_cam, Tensor(p_gt)), hp.lam1))
    return ad.add(loss, ad.scale(ad.tmean(pose_uncertainty(out)), hp.lam2))


def loss_bg_uncertainty(out, hp):
    """Hinge surrogate for unbounded background-uncertainty maximization:
    minimize max(0, m_u - U)."""
    u = pose_uncertainty(out)
    return ad.tmean(ad.relu(ad.sub(Tensor(hp.m_u), u)))


def loss_tgt_uncertainty(out):
    return ad.tmean(pose_uncertainty(out))


def normalized_confidences(conf):
    """Per-sample confidence weights summing to one; treated as constants
    (no gradient through the weights)."""
    conf = np.asarray(conf, dtype=np.float64)
    return conf / conf.sum(axis=-1, keepdims=True)


def loss_psup_target(out, h_pl, p_pl, hp, weights=None):
    """Confidence-weighted per-joint pseudo-supervision (heatmap + lam *
    3D pose), averaged over the batch."""
    if weights is None:
        weights = normalized_confidences(out.conf)
    per_joint = ad.add(_per_joint_heat_mse(out, h_pl),
                       ad.scale(_per_joint_pose_mse(out, p_pl), hp.lam))
    return ad.tmean(ad.tsum(ad.mul(per_joint, Tensor(weights)), axis=-1))


def loss_sup_occlusion_aware(out, h_gt, p_gt, in_mask, out_mask, hp,
                             margin=None):
    """In-view supervision plus lam2 times an entropy-shaping bonus.

    With ``margin`` the bonus is two-sided: hinge relu(margin - entropy)
    per out-view joint (flatten what cannot be seen) plus hinge
    relu(entropy - hp.m_l) per in-view joint (sharpen what can).  The MSE
    heatmap loss alone barely moves the entropy of a softmax heatmap, so
    without the in-view hinge every heatmap idles near the uniform ceiling
    and entropy carries almost no visibility signal.  Without ``margin``
    the raw out-view entropy is subtracted (unbounded, no in-view term).

    Combining supervision and entropy shaping in one term matters under
    per-loss Adam: as separate losses the entropy gradient is a small but
    perfectly persistent direction that Adam normalizes to full-size steps
    and that wins against supervision; in a single term the directions
    cancel before normalization, and the hinges gate the pressure off once
    a joint is flat (or sharp) enough."""
    per_joint = ad.add(_per_joint_heat_mse(out, h_gt),
                       ad.scale(_per_joint_pose_mse(out, p_gt), hp.lam1))
    in_w = Tensor(np.asarray(in_mask, dtype=np.float64))
    sup = ad.tsum(ad.mul(per_joint, in_w), axis=-1)
    out_w = Tensor(np.asarray(out_mask, dtype=np.float64))
    ent = joint_uncertainty(out)
    if margin is None:
        bonus = ad.tsum(ad.mul(ent, out_w), axis=-1)
        return ad.tmean(ad.sub(sup, ad.scale(bonus, hp.lam2)))
    flat = ad.mul(ad.relu(ad.sub(Tensor(margin), ent)), out_w)
    sharp = ad.mul(ad.relu(ad.sub(ent, Tensor(hp.m_l))), in_w)
    pen = ad.tsum(ad.add(flat, sharp), axis=-1)
    return ad.tmean(ad.add(sup, ad.scale(pen, hp.lam2)))


def loss_entropy_max(out, mask=None, margin=None):
    """Minimized surrogate for entropy maximization: sum of
    hinge(margin - entropy) over the masked joints.

    The hinge (default margin: the ceiling ln(H'W')) releases joints once
    they are flat enough. Without it the term supplies a small but
    perfectly persistent flattening gradient that per-loss Adam normalizes
    up to a full-size step, and every heatmap collapses to uniform no
    matter how small the term's weight."""
    b, j, h, w = out.heatmap.shape
    margin = math.log(h * w) if margin is None else margin
    gap = ad.relu(ad.sub(Tensor(margin), joint_uncertainty(out)))
    if mask is not None:
        gap = ad.mul(gap, Tensor(np.asarray(mask, dtype=np.float64)))
    return ad.tmean(ad.tsum(gap, axis=-1))


def loss_entropy_min(out, mask):
    """Mean over the batch of the summed masked joint entropies."""
    ent = ad.mul(joint_uncertainty(out), Tensor(np.asarray(mask, dtype=np.float64)))
    return ad.tmean(ad.tsum(ent, axis=-1))


def loss_bg_entropy(out, margin=None):
    return loss_entropy_max(out, mask=None, margin=margin)


# ---------------------------------------------------------------------------
# helpers


def _batch_indices(rng, n, batch_size):
    return rng.integers(0, n, size=min(batch_size, max(n, 1)))


def _gather(samples, idx):
    return [samples[int(i)] for i in idx]


def _obs(batch):
    return np.stack([s.obs for s in batch])


def _update(model, opt, loss):
    model.zero_grad()
    ad.backward(loss)
    opt.step()
    return float(loss.data)


# Entropy-MAXIMIZATION terms; these are restricted to the localization
# head when hp.entropy_head_only is set (see HyperParams).  Entropy
# minimization (ent_inv_t) deliberately updates the whole model: its
# gradient agrees with supervision, and only the encoder can learn to be
# sharp on visible joints while staying flat on occluded ones — the
# localization head is shared across joints and can only change global
# sharpness.
ENTROPY_TERMS = ("ent_outv_s", "ent_bg", "ent_outv_t")


def _make_optimizers(model, hp, names):
    opts = {}
    for name in names:
        params = model.parameters()
        if hp.entropy_head_only and name in ENTROPY_TERMS:
            params = [p for key, p in sorted(model.params.items())
                      if key.startswith("loc_head")]
        opts[name] = Adam(params, lr=hp.lr_for(name))
    return opts


# ---------------------------------------------------------------------------
# training algorithms


POSE_LEVEL_TERMS = ("sup", "bg", "tgt", "psup")


def train_pose_level(ds, dt, db, hp, rng, model=None, enable=POSE_LEVEL_TERMS,
                     eval_hook=None):
    """Pose-level adaptation: supervised source training, background
    uncertainty maximization, target uncertainty minimization, and
    pseudo-label self-training, refreshed every ``k_interval``.

    ``enable`` restricts the active loss terms (ablation runs). An empty
    dataset disables its terms. ``eval_hook(state)`` runs at every refresh
    point and after the last iteration.
    """
    if model is None:
        model = PoseNet(rng=rng)
    enable = tuple(enable)
    opts = _make_optimizers(model, hp, POSE_LEVEL_TERMS)
    state = TrainState(model=model, fusion=None, optimizers=opts,
                       pseudo=None, iteration=0)
    hs = model.config.heatmap_size
    for it in range(hp.max_iter):
        state.iteration = it
        if "psup" in enable and dt and it % hp.k_interval == 0:
            state.pseudo = select_pose_pseudo_labels(
                model, dt, hp.alpha_p, heatmap_size=hs, sigma=hp.sigma, iteration=it)
        if eval_hook is not None and it % hp.k_interval == 0:
            eval_hook(state)
        losses = {}
        if "sup" in enable and ds:
            batch = _gather(ds, _batch_indices(rng, len(ds), hp.batch_size))
            out = model.forward(_obs(batch))
            losses["sup"] = _update(model, opts["sup"], loss_sup_source(
                out, np.stack([s.gt_h for s in batch]),
                np.stack([s.gt_p for s in batch]), hp))
        if "bg" in enable and db:
            batch = _gather(db, _batch_indices(rng, len(db), hp.batch_size))
            out = model.forward(_obs(batch))
            losses["bg"] = _update(model, opts["bg"], loss_bg_uncertainty(out, hp))
        if "tgt" in enable and dt:
            batch = _gather(dt, _batch_indices(rng, len(dt), hp.batch_size))
            out = model.forward(_obs(batch))
            losses["tgt"] = _update(model, opts["tgt"], loss_tgt_uncertainty(out))
        if "psup" in enable and state.pseudo is not None and len(state.pseudo) > 0:
            ids = state.pseudo.ids
            pick = [ids[int(i)] for i in _batch_indices(rng, len(ids), hp.batch_size)]
            batch = _gather(dt, pick)
            out = model.forward(_obs(batch))
            h_pl = np.stack([state.pseudo.h[i] for i in pick])
            p_pl = np.stack([state.pseudo.p[i] for i in pick])
            losses["psup"] = _update(model, opts["psup"],
                                     loss_psup_target(out, h_pl, p_pl, hp))
        state.loss_log.append(losses)
    state.iteration = hp.max_iter
    if eval_hook is not None:
        eval_hook(state)
    return state


JOINT_LEVEL_TERMS = ("sup_inv", "ent_outv_s", "ent_bg", "ent_inv_t",
                     "ent_outv_t", "psup")


def train_joint_level(ds_o, dt_o, db, hp, rng, model=None,
                      enable=JOINT_LEVEL_TERMS, eval_hook=None):
    """Joint-level adaptation for occlusion/truncation: in-view source
    supervision, entropy shaping on source out-view joints, backgrounds and
    the selected target pairs, plus confidence-weighted pseudo-supervision
    on the selected target in-view pairs."""
    if model is None:
        model = PoseNet(rng=rng)
    enable = tuple(enable)
    opts = _make_optimizers(model, hp, JOINT_LEVEL_TERMS)
    state = TrainState(model=model, fusion=None, optimizers=opts,
                       pseudo=None, iteration=0)
    hs = model.config.heatmap_size
    target_terms = {"ent_inv_t", "ent_outv_t", "psup"}
    for it in range(hp.max_iter):
        state.iteration = it
        if target_terms & set(enable) and dt_o and it % hp.k_interval == 0:
            state.pseudo = select_joint_pseudo_labels(
                model, dt_o, hp.alpha_q, hp.alpha_h, heatmap_size=hs,
                sigma=hp.sigma, iteration=it)
        if eval_hook is not None and it % hp.k_interval == 0:
            eval_hook(state)
        losses = {}
        if ds_o and ("sup_inv" in enable or "ent_outv_s" in enable):
            idx = _batch_indices(rng, len(ds_o), hp.batch_size)
            batch = _gather(ds_o, idx)
            in_mask = np.stack([s.visibility for s in batch])
            if "sup_inv" in enable:
                # Supervision and out-view entropy shaping share one term
                # (and one optimizer step); see loss_sup_occlusion_aware for
                # why splitting them misbehaves under per-loss Adam.
                out = model.forward(_obs(batch))
                out_mask = (~in_mask) if "ent_outv_s" in enable else \
                    np.zeros_like(in_mask)
                loss = loss_sup_occlusion_aware(
                    out, np.stack([s.gt_h for s in batch]),
                    np.stack([s.gt_p for s in batch]), in_mask, out_mask,
                    hp, margin=hp.m_h)
                losses["sup_inv"] = _update(model, opts["sup_inv"], loss)
            elif "ent_outv_s" in enable:
                out = model.forward(_obs(batch))
                losses["ent_outv_s"] = _update(
                    model, opts["ent_outv_s"],
                    loss_entropy_max(out, ~in_mask, margin=hp.m_h))
        if "ent_bg" in enable and db:
            batch = _gather(db, _batch_indices(rng, len(db), hp.batch_size))
            out = model.forward(_obs(batch))
            losses["ent_bg"] = _update(model, opts["ent_bg"],
                                       loss_bg_entropy(out, margin=hp.m_h))
        sel = state.pseudo
        if sel is not None and dt_o:
            if "ent_inv_t" in enable and sel.in_mask.any():
                idx = _batch_indices(rng, len(dt_o), hp.batch_size)
                out = model.forward(_obs(_gather(dt_o, idx)))
                losses["ent_inv_t"] = _update(model, opts["ent_inv_t"],
                                              loss_entropy_min(out, sel.in_mask[idx]))
            if "ent_outv_t" in enable and sel.out_mask.any():
                idx = _batch_indices(rng, len(dt_o), hp.batch_size)
                out = model.forward(_obs(_gather(dt_o, idx)))
                losses["ent_outv_t"] = _update(
                    model, opts["ent_outv_t"],
                    loss_entropy_max(out, sel.out_mask[idx], margin=hp.m_h))
            if "psup" in enable and sel.q:
                ids = sorted(sel.q)
                pick = [ids[int(i)] for i in _batch_indices(rng, len(ids), hp.batch_size)]
                out = model.forward(_obs(_gather(dt_o, pick)))
                mask = sel.in_mask[pick].astype(np.float64)
                conf = out.conf * mask
                weights = conf / np.maximum(conf.sum(axis=-1, keepdims=True), 1e-12)
                h_pl = np.stack([sel.h[i] for i in pick])
                p_pl = np.stack([sel.p[i] for i in pick])
                losses["psup"] = _update(model, opts["psup"],
                                         loss_psup_target(out, h_pl, p_pl, hp,
                                                          weights=weights))
        state.loss_log.append(losses)
    state.iteration = hp.max_iter
    if eval_hook is not None:
        eval_hook(state)
    return state


def train_fusion(model, source, target, pseudo, hp, rng, fusion=None,
                 max_iter=None, joint_level=False):
    """Train the fusion regressor with the main model frozen: supervised
    3D loss on source batches and confidence-weighted pseudo-supervision
    on pseudo-labeled target batches. ``joint_level`` restricts both
    losses to in-view joints."""
    if fusion is None:
        fusion = FusionNet(tree=model.tree, config=model.config, rng=rng)
    max_iter = hp.max_iter if max_iter is None else max_iter
    opt_s = Adam(fusion.parameters(), lr=hp.lr_for("fusion_sup"))
    opt_t = Adam(fusion.parameters(), lr=hp.lr_for("fusion_psup"))
    pseudo_ids = sorted(pseudo.q) if pseudo is not None else []
    for _ in range(max_iter):
        batch = _gather(source, _batch_indices(rng, len(source), hp.batch_size))
        out = model.forward(_obs(batch))
        # detached inputs keep the main model frozen
        pf = fusion.forward(out.pose_cam.data, out.q_loc.data, out.conf)
        p_gt = np.stack([s.gt_p for s in batch])
        if joint_level:
            mask = np.stack([s.visibility for s in batch]).astype(np.float64)
            d = ad.sub(pf, Tensor(p_gt))
            per_joint = ad.tmean(ad.mul(d, d), axis=-1)
            loss = ad.tmean(ad.tsum(ad.mul(per_joint, Tensor(mask)), axis=-1))
        else:
            loss = ad.mse(pf, Tensor(p_gt))
        fusion.zero_grad()
        ad.backward(loss)
        opt_s.step()
        if pseudo_ids:
            pick = [pseudo_ids[int(i)]
                    for i in _batch_indices(rng, len(pseudo_ids), hp.batch_size)]
            batch = _gather(target, pick)
            out = model.forward(_obs(batch))
            pf = fusion.forward(out.pose_cam.data, out.q_loc.data, out.conf)
            conf = out.conf
            if joint_level:
                conf = conf * pseudo.in_mask[pick]
            weights = conf / np.maximum(conf.sum(axis=-1, keepdims=True), 1e-12)
            d = ad.sub(pf, Tensor(np.stack([pseudo.p[i] for i in pick])))
            per_joint = ad.tmean(ad.mul(d, d), axis=-1)
            loss = ad.tmean(ad.tsum(ad.mul(per_joint, Tensor(weights)), axis=-1))
            fusion.zero_grad()
            ad.backward(loss)
            opt_t.step()
    return fusion


# ---------------------------------------------------------------------------
# evaluation


def auroc(pos, neg):
    """Area under the ROC curve of scores separating ``pos`` (should score
    high) from ``neg``, via the rank-sum statistic with midranks for ties."""
    pos = np.asarray(pos, dtype=np.float64)
    neg = np.asarray(neg, dtype=np.float64)
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("auroc needs both populations")
    scores = np.concatenate([pos, neg])
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    rank_sum = ranks[:len(pos)].sum()
    return float((rank_sum - len(pos) * (len(pos) + 1) / 2.0)
                 / (len(pos) * len(neg)))


def fused_poses(model, fusion, samples, batch_size=64):
    out = []
    for lo in range(0, len(samples), batch_size):
        batch = samples[lo:lo + batch_size]
        o = model.forward(_obs(batch))
        out.append(fusion.forward(o.pose_cam.data, o.q_loc.data, o.conf).data)
    return np.concatenate(out)


def evaluate(model, samples, fusion=None):
    """Metrics over one dataset: MPJPE / PA-MPJPE (overall and in-view
    only) for the regression head and optionally the fused pose, plus mean
    pose-uncertainty and per-joint entropies."""
    pred = predict(model, samples)
    u = pose_uncertainty_np(pred["q_loc"], pred["q_proj"])
    row = {"mean_u": float(u.mean()), "mean_entropy": float(pred["entropy"].mean())}
    if not all(s.is_background for s in samples):
        gts = np.stack([s.gt_p for s in samples])
        vis = np.stack([s.visibility for s in samples])
        row.update(_pose_errors(pred["pose_cam"], gts, vis, prefix=""))
        if fusion is not None:
            fused = fused_poses(model, fusion, samples)
            row.update(_pose_errors(fused, gts, vis, prefix="fused_"))
    row["u_scores"] = u
    row["entropies"] = pred["entropy"]
    return row


def _pose_errors(preds, gts, vis, prefix):
    n = len(preds)
    errs = np.array([mpjpe(preds[i], gts[i]) for i in range(n)])
    pa = np.array([pa_mpjpe(preds[i], gts[i]) for i in range(n)])
    inview = []
    for i in range(n):
        d = np.linalg.norm((preds[i] - preds[i][0]) - (gts[i] - gts[i][0]), axis=-1)
        if vis[i].any():
            inview.append(d[vis[i]].mean())
    return {prefix + "mpjpe": float(errs.mean()),
            prefix + "pa_mpjpe": float(pa.mean()),
            prefix + "mpjpe_inview": float(np.mean(inview)) if inview else float("nan")}


METRIC_COLUMNS = (
    "iteration", "mpjpe_target", "pa_mpjpe_target", "mpjpe_target_inview",
    "fused_mpjpe_target", "mpjpe_source", "pa_mpjpe_source",
    "mean_u_source", "mean_u_target", "mean_u_background",
    "mean_h_inv_s", "mean_h_outv_s", "mean_h_inv_t", "mean_h_outv_t", "mean_h_bg",
    "pseudo_count", "auroc_u_bg_vs_source", "auroc_h_outv_vs_inv_target",
)


def metrics_row(state, source, target, background, fusion=None):
    """One MetricsLog row across the held-out splits."""
    ev_s = evaluate(state.model, source)
    ev_t = evaluate(state.model, target, fusion=fusion)
    ev_b = evaluate(state.model, background)
    vis_s = np.stack([s.visibility for s in source])
    vis_t = np.stack([s.visibility for s in target])
    row = {
        "iteration": state.iteration,
        "mpjpe_target": ev_t["mpjpe"],
        "pa_mpjpe_target": ev_t["pa_mpjpe"],
        "mpjpe_target_inview": ev_t["mpjpe_inview"],
        "fused_mpjpe_target": ev_t.get("fused_mpjpe", float("nan")),
        "mpjpe_source": ev_s["mpjpe"],
        "pa_mpjpe_source": ev_s["pa_mpjpe"],
        "mean_u_source": ev_s["mean_u"],
        "mean_u_target": ev_t["mean_u"],
        "mean_u_background": ev_b["mean_u"],
        "mean_h_inv_s": _masked_mean(ev_s["entropies"], vis_s),
        "mean_h_outv_s": _masked_mean(ev_s["entropies"], ~vis_s),
        "mean_h_inv_t": _masked_mean(ev_t["entropies"], vis_t),
        "mean_h_outv_t": _masked_mean(ev_t["entropies"], ~vis_t),
        "mean_h_bg": float(ev_b["entropies"].mean()),
        "pseudo_count": _pseudo_count(state.pseudo),
        "auroc_u_bg_vs_source": auroc(ev_b["u_scores"], ev_s["u_scores"]),
        "auroc_h_outv_vs_inv_target": (
            auroc(ev_t["entropies"][~vis_t], ev_t["entropies"][vis_t])
            if (~vis_t).any() and vis_t.any() else float("nan")),
    }
    return row


def _masked_mean(values, mask):
    return float(values[mask].mean()) if mask.any() else float("nan")


def _pseudo_count(pseudo):
    if pseudo is None:
        return 0
    if isinstance(pseudo, PseudoLabelSet):
        return len(pseudo)
    return len(pseudo.in_view)


def write_metrics_csv(rows, path):
    """Fixed column order, deterministic float formatting."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(METRIC_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(row.get(c, float("nan"))) for c in METRIC_COLUMNS])


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".12g")


def histogram_groups(model, source, target, background, bins=24):
    """Fig-style uncertainty histograms: per-joint entropies grouped by
    true in/out-view on source and target, all joints on backgrounds, plus
    pose-uncertainty per domain."""
    ev_s = evaluate(model, source)
    ev_t = evaluate(model, target)
    ev_b = evaluate(model, background)
    vis_s = np.stack([s.visibility for s in source])
    vis_t = np.stack([s.visibility for s in target])
    hmax = math.log(model.config.heatmap_size ** 2)
    edges = np.linspace(0.0, hmax, bins + 1)
    groups = {
        "inV-S": ev_s["entropies"][vis_s], "outV-S": ev_s["entropies"][~vis_s],
        "inV-T": ev_t["entropies"][vis_t], "outV-T": ev_t["entropies"][~vis_t],
        "BG": ev_b["entropies"].reshape(-1),
    }
    doc = {"entropy": {"bin_edges": edges.tolist(), "counts": {
        k: np.histogram(v, bins=edges)[0].tolist() for k, v in groups.items()}}}
    u_edges = np.linspace(0.0, 1.0, bins + 1)
    doc["pose_uncertainty"] = {"bin_edges": u_edges.tolist(), "counts": {
        "source": np.histogram(ev_s["u_scores"], bins=u_edges)[0].tolist(),
        "target": np.histogram(ev_t["u_scores"], bins=u_edges)[0].tolist(),
        "background": np.histogram(ev_b["u_scores"], bins=u_edges)[0].tolist(),
    }}
    return doc
