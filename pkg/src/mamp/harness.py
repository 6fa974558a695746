"""Seeded Monte-Carlo experiment runner, CSV emission and diagnostics."""
from __future__ import annotations

import csv
import dataclasses
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .algorithms import amp_state_evolution, run_amp, run_mamp, run_oamp_vamp
from .operators import build_operator, compute_spectral_table
from .prior import BernoulliGaussianPrior, complex_normal, sample_signal
from .state_evolution import mamp_state_evolution, oamp_se_trajectory

ALGOS = ("amp", "oamp", "mamp")
MODES = ("sim", "se", "both")
T_MAX_CAP = 128

CSV_HEADER = (
    "t", "mse_sim_median_db", "mse_sim_q1_db", "mse_sim_q3_db", "mse_se_db",
    "v_gamma_tt", "v_phibar_tt", "theta_t", "xi_t", "diverged_trials",
)
SE_CSV_HEADER = ("t", "v_gamma_tt", "v_phibar_tt", "mmse_pred")


class ConfigError(ValueError):
    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass
class ExperimentConfig:
    m: int
    n: int
    algo: str = "mamp"
    kappa: float = 1.0
    mu: float = 0.1
    snr_db: float = 30.0
    t_max: int = 50
    trials: int = 10
    base_seed: int = 0
    damping_length: int = 3
    variance_mode: str = "analytic_se"
    mode: str = "sim"
    output_path: Optional[str] = None
    amp_damping: float = 1.0
    se_samples: int = 2**16
    workers: int = 1

    @property
    def sigma2(self) -> float:
        return 10.0 ** (-self.snr_db / 10.0)

    @property
    def prior(self) -> BernoulliGaussianPrior:
        return BernoulliGaussianPrior(self.mu)


# key spellings accepted in files and on the command line -> field name
_ALIASES = {
    "m": "m", "n": "n", "iters": "t_max", "seed": "base_seed", "out": "output_path",
}
# names used in error messages (the flag spelling)
_DISPLAY = {"m": "M", "n": "N", "t_max": "iters", "base_seed": "seed", "output_path": "out"}
_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
_INT_KEYS = {"m", "n", "t_max", "trials", "base_seed", "damping_length", "se_samples", "workers"}
_FLOAT_KEYS = {"kappa", "mu", "snr_db", "amp_damping"}


def _canonical(key):
    k = key.strip().replace("-", "_")
    if k in ("M", "N"):
        return k.lower()
    k = k.lower()
    return _ALIASES.get(k, k)


def _coerce(name, value):
    shown = _DISPLAY.get(name, name)
    if value is None:
        return None
    try:
        if name in _INT_KEYS:
            f = float(value)
            if not f.is_integer():
                raise ValueError
            return int(f)
        if name in _FLOAT_KEYS:
            return float(value)
    except (TypeError, ValueError):
        raise ConfigError(shown, f"cannot parse {value!r}") from None
    return str(value)


def parse_config_file(path):
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}", f"expected key=value, got {raw.strip()!r}")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def load_config(path=None, overrides=None) -> ExperimentConfig:
    """Merge a config file with CLI overrides (overrides win) and validate.

    Defaults: L = 3, trials = 10, variance_mode = analytic_se, t_max = 50,
    mode = sim, mu = 0.1, snr_db = 30, kappa = 1.
    """
    raw = {}
    if path is not None:
        raw.update(parse_config_file(path))
    merged = {}
    for src in (raw, overrides or {}):
        for key, value in src.items():
            if value is None:
                continue
            name = _canonical(key)
            if name not in _FIELDS:
                raise ConfigError(key, "unknown key")
            merged[name] = _coerce(name, value)
    for req in ("m", "n"):
        if req not in merged:
            raise ConfigError(_DISPLAY[req], "missing required value")
    cfg = ExperimentConfig(**merged)
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig):
    checks = [
        ("algo", cfg.algo in ALGOS, f"must be one of {ALGOS}"),
        ("M", cfg.m >= 1, "must be >= 1"),
        ("N", cfg.n >= 1, "must be >= 1"),
        ("kappa", math.isfinite(cfg.kappa) and cfg.kappa >= 1, "must be >= 1"),
        ("mu", 0 < cfg.mu <= 1, "must lie in (0, 1]"),
        ("snr_db", math.isfinite(cfg.snr_db), "must be finite"),
        ("iters", 1 <= cfg.t_max <= T_MAX_CAP, f"must lie in [1, {T_MAX_CAP}]"),
        ("trials", cfg.trials >= 1, "must be >= 1"),
        ("damping_length", cfg.damping_length >= 1, "must be >= 1"),
        ("variance_mode", cfg.variance_mode in ("analytic_se", "empirical_residual"),
         "must be analytic_se or empirical_residual"),
        ("mode", cfg.mode in MODES, f"must be one of {MODES}"),
        ("amp_damping", 0 < cfg.amp_damping <= 1, "must lie in (0, 1]"),
        ("se_samples", cfg.se_samples >= 16, "must be >= 16"),
        ("workers", cfg.workers >= 1, "must be >= 1"),
    ]
    for key, ok, msg in checks:
        if not ok:
            raise ConfigError(key, msg)


@dataclass
class TrialRecord:
    trial: int
    seed: int
    mse: np.ndarray
    status: str
    wall_time: float


@dataclass
class SETrajectory:
    mse: np.ndarray
    v_gamma_tt: np.ndarray
    v_phibar_tt: np.ndarray
    theta: Optional[np.ndarray] = None
    xi: Optional[np.ndarray] = None


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    trials: List[TrialRecord] = field(default_factory=list)
    se: Optional[SETrajectory] = None
    se_time: float = 0.0

    @property
    def t_max(self):
        return self.config.t_max

    def diverged_by(self):
        """Number of trials that diverged at or before each iteration."""
        out = np.zeros(self.t_max, dtype=int)
        for tr in self.trials:
            if tr.status == "diverged":
                out[max(len(tr.mse) - 1, 0):] += 1
        return out

    def sim_db(self):
        """Per-iteration dB MSE of the non-diverged trials, shape (trials, t_max)."""
        rows = [10.0 * np.log10(tr.mse) for tr in self.trials
                if tr.status != "diverged" and len(tr.mse) == self.t_max]
        return np.array(rows).reshape(len(rows), self.t_max)

    def sim_quantiles(self):
        db = self.sim_db()
        if db.shape[0] == 0:
            nan = np.full(self.t_max, np.nan)
            return nan, nan, nan
        q1, med, q3 = np.percentile(db, [25, 50, 75], axis=0)
        return med, q1, q3


def instance(cfg: ExperimentConfig, trial: int):
    """Operator, signal and observation of one trial (seed = base_seed + trial)."""
    seed = cfg.base_seed + trial
    op = build_operator(cfg.m, cfg.n, cfg.kappa, seed)
    rng = np.random.default_rng([seed, 1])
    x = sample_signal(cfg.prior, cfg.n, rng)
    y = op.forward(x) + complex_normal(rng, cfg.m, cfg.sigma2)
    return op, x, y


def _table(cfg):
    # the spectrum is fixed per config, only the permutation varies
    return compute_spectral_table(build_operator(cfg.m, cfg.n, cfg.kappa, cfg.base_seed), cfg.t_max)


def _mamp_plan(cfg, table):
    return mamp_state_evolution(table, cfg.prior, cfg.sigma2, cfg.t_max, cfg.damping_length,
                                cfg.se_samples, seed=cfg.base_seed)


def run_single(cfg: ExperimentConfig, trial: int, table=None, plan=None, oamp_traj=None, **kw):
    """One seeded trial; returns the algorithm's RunReport."""
    op, x, y = instance(cfg, trial)
    table = table if table is not None else _table(cfg)
    if cfg.algo == "mamp":
        return run_mamp(op, table, cfg.prior, y, cfg.sigma2, cfg.t_max, L=cfg.damping_length,
                        variance_mode=cfg.variance_mode, x_true=x,
                        plan=plan if cfg.variance_mode == "analytic_se" else None,
                        se_samples=cfg.se_samples, se_seed=cfg.base_seed, **kw)
    if cfg.algo == "oamp":
        return run_oamp_vamp(op, table, cfg.prior, y, cfg.sigma2, cfg.t_max, x_true=x, trajectory=oamp_traj)
    return run_amp(op, cfg.prior, y, cfg.sigma2, cfg.t_max, damping=cfg.amp_damping, x_true=x)


def _trial_job(args):
    cfg, trial, table, plan, oamp_traj = args
    start = time.perf_counter()
    rep = run_single(cfg, trial, table, plan, oamp_traj)
    return TrialRecord(trial, cfg.base_seed + trial, rep.mse(), rep.status, time.perf_counter() - start)


def se_trajectory(cfg: ExperimentConfig, table=None, plan=None) -> SETrajectory:
    table = table if table is not None else _table(cfg)
    if cfg.algo == "mamp":
        plan = plan if plan is not None else _mamp_plan(cfg, table)
        recs = plan.records[: cfg.t_max]
        return SETrajectory(
            mse=np.array([r.mmse for r in recs]),
            v_gamma_tt=np.array([r.v_gamma_tt for r in recs]),
            v_phibar_tt=np.array([r.v_phibar_tt for r in recs]),
            theta=np.array([r.theta for r in recs]),
            xi=np.array([r.xi for r in recs]),
        )
    if cfg.algo == "oamp":
        traj = oamp_se_trajectory(table, cfg.prior, cfg.sigma2, cfg.t_max)
        return SETrajectory(
            mse=np.array([r.mmse for r in traj]),
            v_gamma_tt=np.array([r.v_gamma for r in traj]),
            v_phibar_tt=np.array([r.v_phi for r in traj]),
        )
    taus, mses = amp_state_evolution(cfg.prior, cfg.m / cfg.n, cfg.sigma2, cfg.t_max)
    v_in = np.concatenate([[1.0], mses[:-1]])
    return SETrajectory(mse=mses, v_gamma_tt=taus, v_phibar_tt=v_in)


def run_experiment(cfg: ExperimentConfig, workers=None) -> ExperimentResult:
    """Run ``cfg.trials`` seeded trials and/or the SE.

    Trials are reduced in index order, so the result does not depend on the
    worker count.
    """
    validate(cfg)
    workers = cfg.workers if workers is None else workers
    result = ExperimentResult(cfg)
    table = _table(cfg)
    plan = None
    start = time.perf_counter()
    if cfg.algo == "mamp" and (cfg.mode != "sim" or cfg.variance_mode == "analytic_se"):
        plan = _mamp_plan(cfg, table)
    oamp_traj = oamp_se_trajectory(table, cfg.prior, cfg.sigma2, cfg.t_max) if cfg.algo == "oamp" else None
    if cfg.mode in ("se", "both"):
        result.se = se_trajectory(cfg, table, plan)
    result.se_time = time.perf_counter() - start
    if cfg.mode == "se":
        return result
    jobs = [(cfg, k, table, plan, oamp_traj) for k in range(cfg.trials)]
    if workers > 1 and cfg.trials > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            result.trials = list(pool.map(_trial_job, jobs))
    else:
        result.trials = [_trial_job(j) for j in jobs]
    return result


def _fmt(v):
    if v is None:
        return ""
    v = float(v)
    if not math.isfinite(v):
        return ""
    return f"{v:.12g}"


def csv_rows(result: ExperimentResult):
    T = result.t_max
    if result.trials:
        med, q1, q3 = result.sim_quantiles()
        div = result.diverged_by()
    else:
        med = q1 = q3 = np.full(T, np.nan)
        div = None
    se = result.se

    def col(arr, k):
        return arr[k] if arr is not None and k < len(arr) else None

    for k in range(T):
        yield [
            str(k + 1), _fmt(med[k]), _fmt(q1[k]), _fmt(q3[k]),
            _fmt(10.0 * np.log10(se.mse[k]) if se is not None and k < len(se.mse) else None),
            _fmt(col(se.v_gamma_tt if se else None, k)),
            _fmt(col(se.v_phibar_tt if se else None, k)),
            _fmt(col(se.theta if se else None, k)),
            _fmt(col(se.xi if se else None, k)),
            "" if div is None else str(int(div[k])),
        ]


def write_csv(result: ExperimentResult, path=None) -> str:
    """Write the per-iteration summary; returns the CSV text."""
    if not result.trials and result.se is None:
        raise ValueError("empty result: no trials and no SE")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    w.writerows(csv_rows(result))
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def write_se_csv(se: SETrajectory, path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SE_CSV_HEADER)
    for k in range(len(se.mse)):
        w.writerow([k + 1, _fmt(se.v_gamma_tt[k]), _fmt(se.v_phibar_tt[k]), _fmt(se.mse[k])])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def write_spectrum_csv(cfg: ExperimentConfig, path=None) -> str:
    op = build_operator(cfg.m, cfg.n, cfg.kappa, cfg.base_seed)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("index", "d_i"))
    for i, d in enumerate(op.singular_values, 1):
        w.writerow([i, _fmt(d)])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def read_csv(path):
    """Parse a summary CSV back into a dict of float arrays (empty -> nan)."""
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    return {name: np.array([float(r[i]) if r[i] != "" else np.nan for r in body])
            for i, name in enumerate(header)}


# ----------------------------------------------------------------- diagnostics


@dataclass
class OrthogonalityReport:
    corr: np.ndarray  # seed-averaged complex correlations, [t-1, t'-1] for t' <= t
    corr_abs: np.ndarray  # seed-averaged |correlation|, SE-normalized
    corr_self_abs: np.ndarray  # seed-averaged |g^H f| / (|g| |f|), pre-divergence iterates of every seed
    kurtosis: np.ndarray  # seed-averaged excess kurtosis of g_t entries, every seed
    seeds_used: int
    diverged: int
    t_max: int


def _excess_kurtosis(z):
    # align the mean phase, then pool real and imaginary parts
    a = np.sum(z * z)
    if abs(a) > 0:
        z = z * np.exp(-0.5j * np.angle(a))
    u = np.concatenate([z.real, z.imag])
    u = u - u.mean()
    m2 = np.mean(u * u)
    return float(np.mean(u**4) / (m2 * m2) - 3.0)


def _masked_mean(sums, counts):
    with np.errstate(invalid="ignore"):
        return np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)


def diagnose_orthogonality(cfg: ExperimentConfig, t_cap=20) -> OrthogonalityReport:
    """Normalized correlations between ``g_t = r_t - x`` and ``f_t' = x_t' - x``.

    For ``t' <= t <= min(t_max, t_cap)`` over ``cfg.trials`` seeds. ``corr``
    normalizes by the SE variances ``sqrt(v^gamma_tt v^phibar_t't')`` and uses
    only seeds that did not diverge. ``corr_self_abs`` and ``kurtosis`` use the
    realized norms and every iterate computed before a divergence, so no seed
    is dropped from them.
    """
    if cfg.algo != "mamp":
        raise ConfigError("algo", "orthogonality diagnostics need algo=mamp")
    T = min(cfg.t_max, t_cap)
    sub = dataclasses.replace(cfg, t_max=T)
    table = _table(sub)
    plan = _mamp_plan(sub, table)
    vg = np.array([r.v_gamma_tt for r in plan.records])
    vf = np.array([r.v_phibar_tt for r in plan.records])
    corr, corr_abs = [], []
    self_sum, self_cnt = np.zeros((T, T)), np.zeros((T, T))
    kurt_sum, kurt_cnt = np.zeros(T), np.zeros(T)
    diverged = 0
    for k in range(cfg.trials):
        rep = run_single(sub, k, table, plan, keep_vectors=True)
        _, x, _ = instance(sub, k)
        bad = rep.status == "diverged" or len(rep.records) < T
        n_ok = len(rep.records) - 1 if rep.status == "diverged" else len(rep.records)
        G = np.array(rep.extras["r"][:n_ok]).reshape(n_ok, -1) - x
        F = rep.extras["x"][:n_ok] - x
        if n_ok:
            ng = np.linalg.norm(G, axis=1)
            nf = np.linalg.norm(F, axis=1)
            Cs = np.abs(np.tril(G.conj() @ F.T)) / np.outer(ng, nf)
            self_sum[:n_ok, :n_ok] += Cs
            self_cnt[:n_ok, :n_ok] += np.tril(np.ones((n_ok, n_ok)))
            kurt_sum[:n_ok] += [_excess_kurtosis(g) for g in G]
            kurt_cnt[:n_ok] += 1
        if bad:
            diverged += 1
            continue
        C = np.tril((G.conj() @ F.T) / cfg.n / np.sqrt(np.outer(vg, vf)))
        corr.append(C)
        corr_abs.append(np.abs(C))
    self_abs = _masked_mean(self_sum, self_cnt)
    kurt = _masked_mean(kurt_sum, kurt_cnt)
    if not corr:
        nan = np.full((T, T), np.nan)
        return OrthogonalityReport(nan, nan, self_abs, kurt, 0, diverged, T)
    return OrthogonalityReport(
        np.mean(corr, axis=0), np.mean(corr_abs, axis=0), self_abs, kurt, len(corr), diverged, T,
    )


def write_orthogonality_csv(rep: OrthogonalityReport, path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("t", "t_prime", "corr_re", "corr_im", "corr_abs_mean", "corr_self_abs_mean", "excess_kurtosis_g_t"))
    for t in range(rep.t_max):
        for tp in range(t + 1):
            c = rep.corr[t, tp]
            w.writerow([t + 1, tp + 1, _fmt(c.real), _fmt(c.imag), _fmt(rep.corr_abs[t, tp]),
                        _fmt(rep.corr_self_abs[t, tp]), _fmt(rep.kurtosis[t])])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


# ------------------------------------------------------------------------ plot


def plot_csv(csv_paths, out_path, labels=None):
    """MSE (dB) vs iteration: simulation markers with quartile bars, SE as a line."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    for i, p in enumerate(csv_paths):
        d = read_csv(p)
        name = labels[i] if labels else str(p)
        t = d["t"]
        if np.any(np.isfinite(d["mse_sim_median_db"])):
            err = np.vstack([d["mse_sim_median_db"] - d["mse_sim_q1_db"],
                             d["mse_sim_q3_db"] - d["mse_sim_median_db"]])
            ax.errorbar(t, d["mse_sim_median_db"], yerr=err, fmt="o", ms=3, label=f"{name} sim")
        if np.any(np.isfinite(d["mse_se_db"])):
            ax.plot(t, d["mse_se_db"], "-", lw=1.2, label=f"{name} SE")
    ax.set_xlabel("iteration")
    ax.set_ylabel("MSE (dB)")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
    return out_path
