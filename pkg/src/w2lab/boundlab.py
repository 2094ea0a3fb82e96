"""Wasserstein upper bounds from training loss, and their report plumbing.

Core quantities on the discrete timeline t = 1..T (unit-step Riemann sums):

    I(t) = exp( sum_{r<=t} ( beta_r / 2 + L_s(r) beta_r ) ),   I(0) = 1

with L_s(r) the one-sided Lipschitz constant of the score field at r.  Two
upper bounds on W2(p_0, q_0) follow:

    per-timestep form:  sum_t beta_t I(t) sqrt(b_t)  +  I(T) W2(p_T, q_T)
    aggregate form:     sqrt( 2 (sum_t beta_t I(t)^2) J )  +  I(T) W2(p_T, q_T)

where b_t is the mean squared score error at t and J is the weighted
score-matching loss (the aggregate form follows from Cauchy-Schwarz, and J
may be replaced by the denoising loss, which dominates it).  On log axes
the aggregate form with zero terminal term is a slope-1/2 line in J:

    log W2  <=  1/2 log J  +  1/2 log( 2 sum_t beta_t I(t)^2 )

The second summand is the ``intercept`` reported here.  The factor 2 inside
the log keeps exponentiating the line exactly equal to the aggregate bound.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import json
import math

import numpy as np

from . import estimators, ot, sampler
from .errors import ConfigError
from .schedule import NoiseSchedule, build_sigmoid_schedule, lipschitz_Lf
from .training import TrainConfig, TrainHistory, draw_initial_points, run_training

I_FLOOR = 1e-300  # keep I(t) positive even when the exponent underflows


def integrating_factor_series(sch: NoiseSchedule, ls: np.ndarray) -> np.ndarray:
    """I(0..T) as defined above; entries are floored at I_FLOOR."""
    ls = np.asarray(ls, dtype=np.float64)
    if ls.shape != (sch.T,):
        raise ConfigError(f"need one L_s value per timestep, got shape {ls.shape}")
    exponent = np.concatenate([[0.0], np.cumsum(sch.beta / 2.0 + ls * sch.beta)])
    with np.errstate(over="ignore"):
        series = np.exp(exponent)  # +inf on overflow keeps the bound vacuous, not wrong
    return np.maximum(series, I_FLOOR)


def weighted_i2_sum(sch: NoiseSchedule, i_series: np.ndarray) -> float:
    """sum_t beta_t I(t)^2 over t = 1..T."""
    i_series = np.asarray(i_series, dtype=np.float64)
    if i_series.shape != (sch.T + 1,):
        raise ConfigError(f"i_series must have length T+1, got {i_series.shape}")
    return float((sch.beta * i_series[1:] ** 2).sum())


def bound_rhs_theorem(sch: NoiseSchedule, i_series: np.ndarray, b_series: np.ndarray,
                      w2_terminal: float = 0.0) -> float:
    """Per-timestep bound: sum_t beta_t I(t) sqrt(b_t) + I(T) * terminal W2."""
    b = np.asarray(b_series, dtype=np.float64)
    if b.shape != (sch.T,):
        raise ConfigError(f"need one b value per timestep, got shape {b.shape}")
    if np.any(b < 0):
        raise ConfigError("b_series entries must be >= 0")
    i_series = np.asarray(i_series, dtype=np.float64)
    return float((sch.beta * i_series[1:] * np.sqrt(b)).sum()
                 + i_series[-1] * w2_terminal)


def bound_rhs_corollary(sch: NoiseSchedule, i_series: np.ndarray, j: float,
                        offset: float = 0.0) -> float:
    """Aggregate bound: sqrt(2 (sum_t beta_t I(t)^2) j) + offset."""
    if j < 0:
        raise ConfigError(f"loss value must be >= 0, got {j}")
    return math.sqrt(2.0 * weighted_i2_sum(sch, i_series) * j) + offset


def intercept_value(sch: NoiseSchedule, i_series: np.ndarray) -> float:
    """1/2 log(2 sum_t beta_t I(t)^2), the slope-1/2 line's intercept."""
    return 0.5 * math.log(2.0 * weighted_i2_sum(sch, i_series))


def loglog_point(j_dsm: float, i_series: np.ndarray, sch: NoiseSchedule,
                 w2: float) -> tuple[float, float, float]:
    """(x, y, intercept) with x = 1/2 log j, y = log w2; bound: y <= x + intercept."""
    if j_dsm <= 0 or w2 <= 0:
        raise ConfigError("log-log point needs positive loss and W2")
    return 0.5 * math.log(j_dsm), math.log(w2), intercept_value(sch, i_series)


def bound_violations(j_series: np.ndarray, w2_series: np.ndarray,
                     sch: NoiseSchedule, i_series: np.ndarray,
                     offset: float = 0.0) -> list:
    """Indices where measured W2 exceeds the aggregate bound at that loss."""
    bad = []
    for k, (j, w2) in enumerate(zip(np.asarray(j_series), np.asarray(w2_series))):
        if w2 > bound_rhs_corollary(sch, i_series, float(j), offset):
            bad.append(k)
    return bad


def contraction_offset(sch: NoiseSchedule, p0_samples, n: int,
                       rng: np.random.Generator) -> tuple[float, float]:
    """Forward-contraction view of the terminal mismatch.

    Returns (exp(-1/2 sum_t beta_t) * W2(p_0 sample, N(0, I) sample),
    direct empirical W2(p_T sample, N(0, I) sample)); the first is the
    contraction prediction of the second.
    """
    p0 = np.atleast_2d(np.asarray(getattr(p0_samples, "points", p0_samples),
                                  dtype=np.float64))
    if p0.shape[0] < n:
        raise ConfigError(f"need at least n={n} points, got {p0.shape[0]}")
    p0 = p0[:n]
    d = p0.shape[1]
    w2_start, _ = ot.w2_empirical(p0, rng.standard_normal((n, d)))
    predicted = math.exp(-0.5 * float(sch.beta.sum())) * w2_start
    pT = sampler.forward_diffuse(sch, p0, sch.T, rng)
    direct, _ = ot.w2_empirical(pT, rng.standard_normal((n, d)))
    return predicted, direct


@dataclasses.dataclass
class BoundReport:
    """Everything needed to restate the bounds for one trained model."""

    j_dsm: float                 # final logged denoising loss (Riemann scale)
    j_sm_est: float              # KDE estimate of the marginal-score loss
    beta: np.ndarray
    ls_series: np.ndarray
    lf_series: np.ndarray
    i_series: np.ndarray         # length T+1, I(0) = 1
    intercept: float
    slope_point: tuple           # (1/2 log j_dsm, log measured_w2)
    w2_terminal: float
    offset: float                # I(T) * w2_terminal
    rhs_corollary: float
    measured_w2: float
    b_series: np.ndarray         # per-t mean squared score error estimates
    i_underflow: bool = False

    def to_json(self, path: str) -> None:
        payload = dataclasses.asdict(self)
        payload["slope_point"] = list(self.slope_point)
        for key in ("beta", "ls_series", "lf_series", "i_series", "b_series"):
            payload[key] = [float(v) for v in payload[key]]
        with open(path, "w", newline="\n") as f:
            json.dump(payload, f, indent=2)
            f.write("\n")


def build_report(net, cfg: TrainConfig, history: TrainHistory) -> BoundReport:
    """Assemble the bound report for a finished (shared-terminal) run.

    L_s is re-estimated on the converged network by grid search; the
    score-error series comes from a fresh KDE estimate with the config's
    estimator settings.
    """
    sch = build_sigmoid_schedule(cfg.T, cfg.beta1, cfg.betaT)
    data = draw_initial_points(cfg, cfg.dataset.n, cfg.dataset.seed)
    ls = estimators.ls_series(net, sch, data)
    lf = np.array([lipschitz_Lf(sch, t) for t in range(1, sch.T + 1)])
    i_series = integrating_factor_series(sch, ls)
    j_dsm = float(history.records[-1].j_dsm)
    measured_w2 = float(history.records[-1].w2)

    s_rep = np.random.SeedSequence([cfg.seed, 104729]).generate_state(2)
    rep_rng = np.random.default_rng(s_rep[0])
    p0_jsm = draw_initial_points(cfg, cfg.jsm_samples, int(s_rep[1]))
    j_sm_est, b_series = estimators.estimate_jsm_terms(
        net, sch, p0_jsm, cfg.jsm_samples, cfg.kde_bandwidth, cfg.fd_step, rep_rng)

    intercept = intercept_value(sch, i_series)
    return BoundReport(
        j_dsm=j_dsm,
        j_sm_est=j_sm_est,
        beta=sch.beta.copy(),
        ls_series=ls,
        lf_series=lf,
        i_series=i_series,
        intercept=intercept,
        slope_point=(0.5 * math.log(j_dsm), math.log(measured_w2)),
        w2_terminal=0.0,
        offset=0.0,
        rhs_corollary=bound_rhs_corollary(sch, i_series, j_dsm, 0.0),
        measured_w2=measured_w2,
        b_series=b_series,
        i_underflow=bool(np.any(i_series <= I_FLOOR)),
    )


def perturbation_bound(run: BoundReport, run_tilde: BoundReport,
                       w2_p0_p0tilde: float) -> float:
    """Five-term upper bound on W2 between the two models' generated laws.

    W2(p0, p0~) plus each run's aggregate loss term, plus both terminal
    mismatches carried through the perturbed run's integrating factor.
    """
    def loss_term(rep: BoundReport) -> float:
        g2i2 = float((rep.beta * rep.i_series[1:] ** 2).sum())
        return math.sqrt(2.0 * g2i2 * rep.j_dsm)

    i_tilde_T = float(run_tilde.i_series[-1])
    return (w2_p0_p0tilde
            + loss_term(run)
            + loss_term(run_tilde)
            + i_tilde_T * run.w2_terminal
            + i_tilde_T * run_tilde.w2_terminal)


def perturbation_check(base_cfg: TrainConfig, eps: float, seed: int,
                       n_eval: int | None = None) -> dict:
    """Train on clean vs eps-perturbed data and evaluate the five-term bound.

    Both runs share the mixture seed (the perturbed training set is the
    clean one plus noise), both sample with a shared terminal, and the bound
    is compared against the empirical W2 between the two generated batches.
    """
    ds = dataclasses.replace(base_cfg.dataset, seed=seed)
    cfg0 = dataclasses.replace(base_cfg, dataset=ds, seed=seed, perturb_eps=0.0)
    cfg1 = dataclasses.replace(base_cfg, dataset=ds, seed=seed, perturb_eps=eps)
    net0, hist0 = run_training(cfg0)
    net1, hist1 = run_training(cfg1)
    rep0 = build_report(net0, cfg0, hist0)
    rep1 = build_report(net1, cfg1, hist1)

    sch = build_sigmoid_schedule(base_cfg.T, base_cfg.beta1, base_cfg.betaT)
    n = base_cfg.eval_points if n_eval is None else n_eval
    seeds = np.random.SeedSequence([seed, 8888]).generate_state(4)
    p0 = draw_initial_points(cfg0, n, int(seeds[0]))
    p0_tilde = draw_initial_points(cfg1, n, int(seeds[1]))
    q0, _ = sampler.generate(net0, sch, sampler.ReverseMode.SHARED_TERMINAL,
                             p0, np.random.default_rng(seeds[2]))
    q0_tilde, _ = sampler.generate(net1, sch, sampler.ReverseMode.SHARED_TERMINAL,
                                   p0_tilde, np.random.default_rng(seeds[3]))
    w2_p, _ = ot.w2_empirical(p0, p0_tilde)
    w2_q, _ = ot.w2_empirical(q0.points, q0_tilde.points)
    return {
        "w2_generated": w2_q,
        "bound": perturbation_bound(rep0, rep1, w2_p),
        "w2_p0_p0tilde": w2_p,
        "j_dsm": rep0.j_dsm,
        "j_dsm_tilde": rep1.j_dsm,
    }


@dataclasses.dataclass
class SweepResult:
    t_values: list
    offsets: list        # I(T) * fresh-terminal W2(p_T, q_T) per T
    w2_p0q0: list        # shared-terminal W2 at convergence per T
    ls_terminal: list    # grid L_s(T) of the converged net per T

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="\n") as f:
            f.write("T,offset,w2_p0q0,ls_T\n")
            for T, off, w2, ls in zip(self.t_values, self.offsets,
                                      self.w2_p0q0, self.ls_terminal):
                f.write(f"{int(T)},{float(off)!r},{float(w2)!r},{float(ls)!r}\n")


def _sweep_one(args: tuple) -> tuple:
    cfg, T = args
    cfg_t = dataclasses.replace(cfg, T=T)
    net, history = run_training(cfg_t)
    sch = build_sigmoid_schedule(T, cfg.beta1, cfg.betaT)
    data = draw_initial_points(cfg_t, cfg_t.dataset.n, cfg_t.dataset.seed)
    ls = estimators.ls_series(net, sch, data)
    i_series = integrating_factor_series(sch, ls)

    seeds = np.random.SeedSequence([cfg.seed, T, 31337]).generate_state(2)
    rng = np.random.default_rng(seeds[0])
    p0_eval = draw_initial_points(cfg_t, cfg.eval_points, int(seeds[1]))
    _, w2_terminal = sampler.generate(net, sch, sampler.ReverseMode.FRESH_TERMINAL,
                                      p0_eval, rng)
    offset = float(i_series[-1] * w2_terminal)
    return T, offset, float(history.records[-1].w2), float(ls[-1])


def sweep_T(base_cfg: TrainConfig, t_values, workers: int = 1) -> SweepResult:
    """Retrain at each T (same beta endpoints) and collect offset diagnostics."""
    jobs = [(base_cfg, int(T)) for T in t_values]
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_one, jobs))
    else:
        rows = [_sweep_one(job) for job in jobs]
    return SweepResult(t_values=[r[0] for r in rows],
                       offsets=[r[1] for r in rows],
                       w2_p0q0=[r[2] for r in rows],
                       ls_terminal=[r[3] for r in rows])


def write_loglog_csv(path: str, history: TrainHistory, intercept: float) -> None:
    """Per-epoch log-log trace: epoch, 1/2 log j_dsm, log w2, bound line."""
    with open(path, "w", newline="\n") as f:
        f.write("epoch,log_jdsm,log_w2,bound_line\n")
        for r in history.records:
            x = 0.5 * math.log(r.j_dsm)
            y = math.log(r.w2) if r.w2 > 0 else float("-inf")
            f.write(f"{r.epoch},{x!r},{y!r},{x + intercept!r}\n")
