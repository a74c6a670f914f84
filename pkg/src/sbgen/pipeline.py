"""End-to-end building blocks shared by the CLI and the acceptance tests."""

import logging
import math

import numpy as np

from . import targets
from .errors import InputError
from .flow import FlowModel, FlowProposal, Standardization, StandardizedTarget, centroid
from .mcmc import ChainConfig, run_chain, split_biased
from .metrics import MetricsReport, energy_w1, extract_angles, histogram, torus_w2
from .reweight import WeightedSamples, gamma_threshold, log_mean_exp, log_z_hat
from .smc import apply_prefilters, ess, sbg_run
from .train import TrainConfig, Trainer, energy_w1_hook
from .transport import AnnealSchedule, draw_ensemble, jarzynski_log_z_ratio, stream

log = logging.getLogger(__name__)

TRAIN_KEYS = ("learning_rate", "weight_decay", "adam_betas", "adam_eps", "epochs", "batch_size",
              "warmup_fraction", "lr_floor_ratio", "ema_decay", "eval_every", "augment_rotations")


def _seed(cfg, name):
    return int(stream(cfg["seed"], name).integers(2 ** 63))


def build_target(cfg):
    return targets.from_config(cfg["target"])


def is_particle(target):
    return target.kind == "many_body_pairwise"


# -- data -------------------------------------------------------------------


def generate_data(cfg, target=None):
    """MALA/ULA chain split into contiguous train/val blocks and a test subsample."""
    target = target or build_target(cfg)
    d = cfg["data"]
    ch = d["chain"]
    split = d["split"]
    x0 = np.zeros(target.dim) if d["x0"] is None else np.asarray(d["x0"], dtype=np.float64)
    if d["x0"] is None and is_particle(target):
        x0 = _particle_start(target)
    base = cfg["seed"] if d["seed"] is None else d["seed"]
    data_seed = int(stream(base, "data").integers(2 ** 63))
    cc = ChainConfig(int(ch["steps"]), float(ch["step_size"]), int(ch["burn_in"]), ch["kind"],
                     data_seed, int(ch["thin"]))
    chain, stats = run_chain(target, x0, cc, return_stats=True)
    train, val, test, idx = split_biased(chain, split["train"], split["val"], split["test"],
                                         data_seed + 1)
    prov = {"chain_rows": len(chain), "chain_steps": cc.steps, "thin": cc.thin, "seed": cc.seed,
            "acceptance_rate": stats.acceptance_rate, "kind": cc.kind,
            "train": len(train), "val": len(val), "test": len(test)}
    return {"train": train, "val": val, "test": test}, prov


def _particle_start(target):
    """Regular-simplex-like start: particles on a small lattice, mean-free."""
    n, s = target.params["n_particles"], target.params["spatial_dim"]
    d0 = math.sqrt(target.params["d0"])
    pts = np.zeros((n, s))
    for i in range(n):
        pts[i, i % s] = d0 * (1 + i // s)
    pts -= pts.mean(axis=0)
    return pts.ravel()


# -- model ------------------------------------------------------------------


def build_model(cfg, target, train_data):
    f = cfg["flow"]
    particle = is_particle(target)
    center = f["center"]
    if center == "auto":
        center = "com" if particle else "mean"
    sd = target.params["spatial_dim"] if particle else None
    stats = Standardization.fit(train_data, center=center, spatial_dim=sd)
    sigma = float(f["com_sigma"]) if particle else 0.0
    return FlowModel.create(target.dim, int(f["n_layers"]), tuple(f["hidden"]), f["activation"],
                            float(f["scale_clamp"]), seed=_seed(cfg, "train"), standardization=stats,
                            com_sigma=sigma, spatial_dim=sd)


def train_config(cfg):
    t = cfg["train"]
    return TrainConfig(**{k: t[k] for k in TRAIN_KEYS}, seed=_seed(cfg, "train") + 1)


def train_model(cfg, model, target, train_data, val_data, trainer=None, epochs=None):
    """Fit ``model`` on physical-unit data; returns ``(best_model, trainer)``."""
    tc = train_config(cfg)
    stats = model.standardization
    tr = stats.standardize(train_data)
    va = stats.standardize(val_data)
    mt = StandardizedTarget(target, stats)
    hook = energy_w1_hook(mt, va, cfg["train"]["val_samples"], cfg["train"]["crop_quantile"],
                          seed=_seed(cfg, "metrics"))
    trainer = trainer or Trainer(model, tc)
    n_epochs = tc.epochs if epochs is None else epochs
    if n_epochs == 0:
        return model, trainer
    best = trainer.run(tr, n_epochs, hook)
    return best, trainer


# -- evaluation -------------------------------------------------------------


def schedule(cfg):
    s = cfg["schedule"]
    return AnnealSchedule(int(s["n_steps"]), s["epsilon"], float(s["ess_threshold"]),
                          s["resample_scheme"], s["drift_clip"])


def _filters(cfg, samples, K):
    f = dict(cfg["filters"])
    auto = f.pop("gamma_auto", None)
    if auto:
        f["energy_gamma"] = gamma_threshold(K, auto["b"], auto["rho"], auto["lambda"], samples)
    return f


def _report(name, energies, log_weights, test_energies, angles, angle_lw, test_angles, seed, **extra):
    K = len(energies)
    if log_weights is None:
        e, en = float(K), 1.0
    else:
        e = ess(log_weights)
        en = e / K
    w1 = energy_w1(energies, test_energies, log_weights)
    tw2 = None
    if angles is not None:
        tw2 = torus_w2(angles, test_angles, angle_lw, seed=seed)
    return MetricsReport(name, e, en, w1, tw2, extra.get("log_z_hat"), extra.get("log_z_jarzynski"),
                         K, seed)


def _subsample(X, n, rng):
    if X is None or len(X) <= n:
        return X
    return X[np.sort(rng.choice(len(X), n, replace=False))]


def evaluate(cfg, model, target, test_data, seed=None, K=None):
    """Proposal, BG (one-shot IS) and SBG on one shared proposal draw.

    Returns ``(reports, histograms, extras)`` where ``reports`` maps estimator
    name to ``MetricsReport``.  The SBG lower bound is the banked resampling
    log-means plus the mean final log-weight (-inf if any particle was
    quarantined).  Energies are reduced target energies and log Z
    estimates refer to physical coordinates; weights stay in model coordinates.
    """
    seed = cfg["seed"] if seed is None else seed
    K = int(cfg["metrics"]["K"] if K is None else K)
    stats = model.standardization
    mt = StandardizedTarget(target, stats)
    prop = FlowProposal(model)
    sched = schedule(cfg)

    ens0 = draw_ensemble(prop, K, seed)
    lp = prop.log_prob(ens0.positions)
    bg = WeightedSamples.from_target(mt, ens0.positions, lp)
    filters = _filters(cfg, bg, K)
    filtered, freports = apply_prefilters(ens0, prop, mt, filters)
    keep_bg = WeightedSamples.from_target(mt, filtered.positions, prop.log_prob(filtered.positions))

    sbg, diag = sbg_run(prop, mt, sched, K, seed, filters=filters)

    test_e = target.energy(test_data)
    n_t = int(cfg["metrics"]["torus_n"])
    rng = stream(seed, "metrics")
    test_ang = extract_angles(target, _subsample(test_data, n_t, rng))

    def phys(Y):
        return stats.destandardize(Y)

    def angles(Y, lw=None):
        if test_ang is None:
            return None, lw
        if len(Y) > n_t:
            # weighted sets are resampled inside torus_w2; thin them first to bound cost
            sel = np.sort(rng.choice(len(Y), n_t, replace=False))
            Y = Y[sel]
            lw = None if lw is None else lw[sel]
        return extract_angles(target, phys(Y)), lw

    reports = {}
    ang, _ = angles(ens0.positions)
    reports["proposal"] = _report("proposal", -bg.log_target, None, test_e, ang, None, test_ang, seed)
    ang, lw = angles(keep_bg.positions, keep_bg.log_weight)
    reports["bg"] = _report("bg", -keep_bg.log_target, keep_bg.log_weight, test_e, ang, lw, test_ang, seed,
                            log_z_hat=log_z_hat(keep_bg) + mt.log_jacobian,
                            log_z_jarzynski=log_mean_exp(keep_bg.log_weight) + mt.log_jacobian)
    sbg_e = mt.energy(sbg.positions)
    ang, lw = angles(sbg.positions, sbg.log_weights)
    reports["sbg"] = _report("sbg", sbg_e, sbg.log_weights, test_e, ang, lw, test_ang, seed,
                             log_z_hat=sbg.log_z_accum + float(np.mean(sbg.log_weights)) + mt.log_jacobian,
                             log_z_jarzynski=jarzynski_log_z_ratio(sbg) + mt.log_jacobian)

    rng_hist = cfg["metrics"]["hist_range"]
    if rng_hist is None:
        lo, hi = np.quantile(test_e, [0.0, 0.999])
        pad = 0.05 * (hi - lo)
        rng_hist = (lo - pad, hi + pad)
    bins = int(cfg["metrics"]["hist_bins"])
    hists = {
        "data": histogram(test_e, bins, rng_hist),
        "proposal": histogram(-bg.log_target, bins, rng_hist),
        "transported": histogram(sbg_e, bins, rng_hist),
        "reweighted": histogram(sbg_e, bins, rng_hist, sbg.log_weights),
    }
    extras = {"diagnostics": diag, "filter_reports": freports, "sbg": sbg, "bg": keep_bg,
              "proposal_draw": ens0}
    return reports, hists, extras


def centroid_norm_ablation(cfg, model, target, seed=None, K=None, bins=40):
    """Centroid-norm histograms before/after reweighting, with and without the adjustment.

    Returns a dict of four histogram tables plus the raw norms and both sets of
    log-weights (model coordinates).
    """
    if not model.com_sigma > 0:
        raise InputError("the centroid-norm ablation needs a model with com_sigma > 0")
    seed = cfg["seed"] if seed is None else seed
    K = int(cfg["metrics"]["K"] if K is None else K)
    mt = StandardizedTarget(target, model.standardization)
    x, lp = model.sample(stream(seed, "draw"), K)
    e = mt.energy(x)
    lw_raw = -e - lp
    lw_adj = lw_raw + model.com_log_density(x)
    r = np.linalg.norm(centroid(x, model.spatial_dim), axis=1)
    hi = float(np.quantile(r, 0.999)) * 1.2
    out = {
        "proposal_unadjusted": histogram(r, bins, (0.0, hi)),
        "reweighted_unadjusted": histogram(r, bins, (0.0, hi), lw_raw),
        "proposal_adjusted": histogram(r, bins, (0.0, hi)),
        "reweighted_adjusted": histogram(r, bins, (0.0, hi), lw_adj),
    }
    return {"histograms": out, "norms": r, "log_w_unadjusted": lw_raw, "log_w_adjusted": lw_adj}
