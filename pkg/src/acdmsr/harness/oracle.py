"""Analytic-oracle validation suite.

Everything here runs against closed forms: a Gaussian data law
``N(mu, s2)`` whose Bayes denoiser is exact, so sampler errors come only from
time discretisation.  Each sample path is one scalar chain; a batch of chains
is a flat vector.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .. import numerics as nx
from ..denoiser import AnalyticGaussianDenoiser, CondUNet, UNetConfig
from ..forward import q_sample, rng_for
from ..metrics import psnr, ssim
from ..samplers import KINDS, SamplerSpec, run_chain
from ..schedule import NoiseSchedule, lambda_of, make_linear_schedule, posterior_coeffs, t_of_lambda
from ..trainer import compute_loss

MU, S2 = 0.0, 0.25
CONV_STEPS = (10, 20, 40, 80)
REF_STEPS = 10_000


@dataclass(frozen=True)
class GaussianProblem:
    schedule: NoiseSchedule
    denoiser: AnalyticGaussianDenoiser
    x0: np.ndarray  # ground-truth draws
    x_T: np.ndarray  # their forward marginal at t = T

    @property
    def chains(self) -> int:
        return self.x0.size


def gaussian_problem(chains: int = 1000, seed: int = 0, mu: float = MU, s2: float = S2,
                     schedule: NoiseSchedule | None = None) -> GaussianProblem:
    s = schedule or make_linear_schedule()
    rng = rng_for(seed, 0x47415553)
    x0 = mu + math.sqrt(s2) * rng.standard_normal(chains)
    eps = rng.standard_normal(chains)
    x_T = q_sample(s, x0, s.T, eps).x_t.astype(np.float64)
    return GaussianProblem(s, AnalyticGaussianDenoiser(s, mu, s2), x0, x_T)


def exact_flow(p: GaussianProblem) -> np.ndarray:
    """Closed-form end point of the deterministic flow from ``x_T`` for Gaussian data."""
    d, ab = p.denoiser, float(p.schedule.alpha_bar[p.schedule.T])
    return d.mu + math.sqrt(d.s2) * (p.x_T - math.sqrt(ab) * d.mu) / math.sqrt(ab * d.s2 + 1.0 - ab)


def run(p: GaussianProblem, kind: str, steps: int, spacing: str = "lambda", seed: int = 0) -> np.ndarray:
    spec = SamplerSpec(kind, steps, spacing=spacing, clip_x0=False, seed=seed)
    return run_chain(p.schedule, p.denoiser, spec, p.x_T)


def rms(a, b) -> float:
    return float(np.sqrt(np.mean((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2)))


def psnr_db(a, b) -> float:
    """PSNR in the diffusion domain (peak-to-peak 2), i.e. the [0, 1]-image PSNR."""
    m = float(np.mean((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2))
    return math.inf if m == 0 else 10.0 * math.log10(4.0 / m)


def reference(p: GaussianProblem, steps: int = REF_STEPS) -> np.ndarray:
    return run(p, "second_order", steps)


def fit_slope(ns, errs) -> float:
    """Least-squares order of convergence: minus the slope of log(err) against log(N)."""
    x, y = np.log(np.asarray(ns, float)), np.log(np.asarray(errs, float))
    return float(-np.polyfit(x, y, 1)[0])


def convergence_study(p: GaussianProblem, kinds=("first_order", "second_order"), ns=CONV_STEPS,
                      ref: np.ndarray | None = None) -> dict[str, dict]:
    ref = reference(p) if ref is None else ref
    out = {}
    for kind in kinds:
        errs = [rms(run(p, kind, n), ref) for n in ns]
        out[kind] = {"errors": errs, "slope": fit_slope(ns, errs)}
    return out


# --- checks ---------------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0
    values: dict = field(default_factory=dict)


def _timed(name, fn) -> CheckResult:
    t0 = time.perf_counter()
    try:
        passed, detail, values = fn()
    except Exception as exc:  # a crashing check is a failing check
        passed, detail, values = False, f"{type(exc).__name__}: {exc}", {}
    return CheckResult(name, bool(passed), detail, time.perf_counter() - t0, values)


def check_schedule(s: NoiseSchedule | None = None):
    s = s or make_linear_schedule()
    ab, lam = s.alpha_bar, s.lam
    dec_ab = bool(np.all(np.diff(ab) < 0))
    dec_lam = bool(np.all(np.diff(lam[1:]) < 0))
    rng = rng_for(0, 0x524F554E)
    ts = np.concatenate([np.arange(1, s.T + 1, dtype=float), rng.uniform(1.0, s.T, 1000)])
    rt = max(abs(t_of_lambda(s, lambda_of(s, t)) - t) for t in ts)
    var1 = posterior_coeffs(s, 1).variance
    ok = dec_ab and dec_lam and rt < 1e-9 and var1 == 0.0
    return ok, f"alpha_bar decreasing={dec_ab} lambda decreasing={dec_lam} round-trip={rt:.2e} var[1]={var1}", {
        "roundtrip": rt}


def check_forward_marginal(draws: int = 10_000, ts=(10, 500, 1000), x0: float = 0.7):
    s = make_linear_schedule()
    worst = []
    ok = True
    for t in ts:
        eps = rng_for(1, 0x464D, t).standard_normal(draws)
        xt = q_sample(s, np.full(draws, x0), t, eps).x_t.astype(np.float64)
        ab = float(s.alpha_bar[t])
        dm = abs(xt.mean() - math.sqrt(ab) * x0)
        dv = abs(xt.var() / (1.0 - ab) - 1.0)
        ok &= dm <= 0.02 and dv <= 0.05
        worst.append(f"t={t}: |dmean|={dm:.4f} rel dvar={dv:.3f}")
    return ok, "; ".join(worst), {}


def check_posterior(trials: int = 200):
    rng = rng_for(2, 0x504F5354)
    worst = 0.0
    for _ in range(trials):
        T = int(rng.integers(2, 50))
        b0 = float(rng.uniform(1e-4, 0.05))
        s = make_linear_schedule(T, b0, float(rng.uniform(b0, 0.5)))
        t = int(rng.integers(1, T + 1))
        x0 = float(rng.normal())
        c = posterior_coeffs(s, t)
        mean = c.coef_x0 * x0 + c.coef_xt * math.sqrt(s.alpha_bar[t]) * x0
        worst = max(worst, abs(mean - math.sqrt(s.alpha_bar[t - 1]) * x0))
    return worst < 1e-12, f"max |posterior mean - sqrt(ab[t-1]) x0| = {worst:.2e}", {}


def check_convergence(schedule: NoiseSchedule | None = None, chains: int = 1000):
    p = gaussian_problem(chains, schedule=schedule)
    res = convergence_study(p)
    s1, s2 = res["first_order"]["slope"], res["second_order"]["slope"]
    ok = 0.7 <= s1 <= 1.3 and 1.6 <= s2 <= 2.4
    return ok, f"fitted slopes: first_order={s1:.3f} second_order={s2:.3f}", {"slopes": {"first_order": s1,
                                                                                         "second_order": s2}}


def sampler_ordering(chains: int = 1000, n: int = 40, n_plateau: int = 1000) -> dict:
    """Terminal errors at ``n`` steps vs the dense deterministic reference, plus the plateau gap."""
    p = gaussian_problem(chains, seed=3)
    ref = reference(p)
    errs = {k: rms(run(p, k, n), ref) for k in KINDS}
    gt40 = psnr_db(run(p, "second_order", n), p.x0)
    gt_dense = psnr_db(run(p, "second_order", n_plateau), p.x0)
    return {"errors": errs, "psnr_gt": gt40, "psnr_gt_dense": gt_dense, "gap_db": abs(gt40 - gt_dense)}


def check_ordering():
    r = sampler_ordering()
    e = r["errors"]
    ok = e["ancestral"] > e["first_order"] > e["second_order"] and r["gap_db"] <= 0.1
    return ok, (f"N=40 rms error: ancestral={e['ancestral']:.4g} first_order={e['first_order']:.4g} "
                f"second_order={e['second_order']:.4g}; second_order plateau gap={r['gap_db']:.4f} dB"), r


def check_recovery(chains: int = 10_000):
    p = gaussian_problem(chains, seed=4)
    x = run(p, "ancestral", p.schedule.T, spacing="t", seed=5)
    d = p.denoiser
    dm, dv = abs(x.mean() - d.mu), abs(x.var() / d.s2 - 1.0)
    return dm <= 0.03 and dv <= 0.06, f"mean error={dm:.4f} relative variance error={dv:.4f}", {}


def tiny_unet(seed: int = 0) -> tuple[CondUNet, dict]:
    cfg = UNetConfig(in_channels=1, cond_channels=1, base_width=2, time_dim=4, seed=seed)
    return CondUNet(cfg, make_linear_schedule(), dtype=np.float64), {}


def gradient_check(model: CondUNet, size: int = 16, batch: int = 2, h: float = 1e-4, floor: float = 1e-6,
                   seed: int = 0) -> dict:
    """Autodiff vs central differences for every parameter component (float64)."""
    rng = rng_for(seed, 0x47524144)
    c = model.cfg
    x0 = rng.uniform(-1, 1, (batch, c.in_channels, size, size))
    cond = rng.uniform(-1, 1, (batch, c.cond_channels, size, size))
    t = rng.integers(1, model.schedule.T + 1, size=batch)
    eps = rng.standard_normal(x0.shape)

    def loss_at(params):
        return compute_loss(model, model.schedule, x0, cond, t, eps, c.objective, "l2", params)

    params = {k: nx.Tensor(v.data, requires_grad=True, name=k, dtype=np.float64) for k, v in model.params.items()}
    with nx.Graph() as g:
        loss = loss_at(params)
    grads = nx.reverse_gradients(g, loss)
    worst, worst_name, count = 0.0, "", 0
    for name, p in params.items():
        ad = grads[p].data.reshape(-1) if p in grads else np.zeros(p.size)
        base = p.data.reshape(-1)
        for i in range(base.size):
            plus, minus = base.copy(), base.copy()
            plus[i] += h
            minus[i] -= h
            fp = loss_at({**params, name: nx.Tensor(plus.reshape(p.shape), dtype=np.float64)}).item()
            fm = loss_at({**params, name: nx.Tensor(minus.reshape(p.shape), dtype=np.float64)}).item()
            fd = (fp - fm) / (2 * h)
            rel = abs(fd - ad[i]) / max(abs(fd), abs(ad[i]), floor)
            count += 1
            if rel > worst:
                worst, worst_name = rel, f"{name}[{i}]"
    return {"max_rel_error": worst, "where": worst_name, "components": count}


def check_gradients():
    model, _ = tiny_unet()
    r = gradient_check(model)
    return r["max_rel_error"] < 1e-3, (f"{r['components']} parameter components, max relative error "
                                       f"{r['max_rel_error']:.2e} at {r['where']}"), r


def check_metrics():
    z, h = np.zeros((3, 16, 16)), np.full((3, 16, 16), 0.5)
    p = psnr(z, h)
    x = rng_for(0, 0x4D455452).uniform(0, 1, (3, 16, 16))
    s = ssim(x, x)
    return abs(p - 6.0206) <= 1e-3 and abs(s - 1.0) <= 1e-9, f"psnr(0, 0.5)={p:.5f} dB ssim(x, x)={s:.12f}", {}


def flipped_lambda(s: NoiseSchedule) -> NoiseSchedule:
    """Sensitivity canary: the schedule with the sign of lambda inverted."""
    lam = -np.array(s.lam)
    lam.flags.writeable = False
    return replace(s, lam=lam)


SUITE = (
    ("schedule", check_schedule),
    ("forward-marginal", check_forward_marginal),
    ("posterior", check_posterior),
    ("convergence-order", check_convergence),
    ("sampler-ordering", check_ordering),
    ("distribution-recovery", check_recovery),
    ("gradients", check_gradients),
    ("metrics", check_metrics),
)


def run_suite(only=None, flip_lambda: bool = False) -> list[CheckResult]:
    known = {name for name, _ in SUITE}
    unknown = sorted(set(only or ()) - known)
    if unknown:
        raise ValueError(f"unknown check(s) {unknown}; choose from {sorted(known)}")
    results = []
    for name, fn in SUITE:
        if only and name not in only:
            continue
        if flip_lambda and name == "convergence-order":
            results.append(_timed(name, lambda: check_convergence(flipped_lambda(make_linear_schedule()))))
        else:
            results.append(_timed(name, fn))
    return results
