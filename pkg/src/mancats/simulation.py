"""Monte Carlo size and power experiments.

A scenario fixes the design (group sizes and covariates), the group error
covariance matrices, the error distribution and the regression slopes.
Every simulated dataset ``s`` draws from ``SeedSequence(seed, spawn_key=(s, k))``
with ``k = 0`` for the data, ``1`` for the wild and ``2`` for the
parametric bootstrap, so a run is reproducible from the master seed alone
and independent of the number of worker processes.
"""

import enum
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .bootstrap import BootstrapConfig, Scheme, bootstrap_replicates, default_workers
from .covariance import HcFlavor, diagonal_d_hat, sandwich_sigma
from .errors import MancovaError, UnknownScenarioPreset
from .hypothesis import one_way_projector
from .linalg import psd_sqrt
from .model import Dataset, build_design, fit_ols
from .statistics import (
    diagonal_limit,
    limit_weights,
    mancats_statistic,
    mean_covariance_limit,
    wald_statistic,
    wilks_lambda,
)

METHODS = ("WI", "WT", "MW", "MP")

PROFILES = {
    "smoke": {"n_sim": 20, "n_boot": 100},
    "desk": {"n_sim": 2000, "n_boot": 1000},
    "full": {"n_sim": 10000, "n_boot": 5000},
}


class ErrorDistribution(str, enum.Enum):
    NORMAL = "normal"
    CHISQ5 = "chisq5"
    LOGNORMAL = "lognormal"
    DOUBLE_EXPONENTIAL = "dexp"

    @classmethod
    def _missing_(cls, value):
        aliases = {
            "chi-squared-5": cls.CHISQ5,
            "chisq": cls.CHISQ5,
            "chi2": cls.CHISQ5,
            "double-exponential": cls.DOUBLE_EXPONENTIAL,
            "laplace": cls.DOUBLE_EXPONENTIAL,
        }
        return aliases.get(str(value).lower())


def standardized_noise(kind, size, rng):
    """I.i.d. draws with mean 0 and variance 1 from the given family."""
    kind = ErrorDistribution(kind)
    if kind is ErrorDistribution.NORMAL:
        return rng.standard_normal(size)
    if kind is ErrorDistribution.CHISQ5:
        return (rng.chisquare(5, size) - 5.0) / math.sqrt(10.0)
    if kind is ErrorDistribution.LOGNORMAL:
        e = math.e
        return (rng.lognormal(0.0, 1.0, size) - math.sqrt(e)) / math.sqrt((e - 1.0) * e)
    return rng.laplace(0.0, 1.0, size) / math.sqrt(2.0)


def correlated_errors(sigma, noise):
    """``Sigma^(1/2) xi`` for each row ``xi`` of ``noise`` (shape ``(..., p)``)."""
    root = psd_sqrt(sigma)
    return np.asarray(noise) @ root


# --- scenario building blocks ----------------------------------------------


def _exchangeable(p, diag):
    return diag * np.eye(p) + 0.5 * (np.ones((p, p)) - np.eye(p))


def _singular_sigma(p):
    if p == 2:
        return np.diag([1.0, 0.25]) + 0.5 * (np.ones((2, 2)) - np.eye(2))
    if p == 4:
        s = np.full((4, 4), 0.5)
        s[:3, :3] = 1.0
        s[3, 3] = 1.0
        return s
    if p == 8:
        s = np.full((8, 8), 0.5)
        s[:5, :5] = 1.0
        s[np.arange(5, 8), np.arange(5, 8)] = 1.0
        return s
    raise ValueError(f"no singular scenario defined for p={p}")


def scenario_sigmas(label, a, p):
    """Group covariance matrices for scenario ``I``, ``II`` or ``III``."""
    if label == "I":
        return [_exchangeable(p, 1.0) for _ in range(a)]
    if label == "II":
        return [_exchangeable(p, float(i)) for i in range(1, a + 1)]
    if label == "III":
        return [_singular_sigma(p) for _ in range(a)]
    raise ValueError(f"unknown covariance scenario {label!r}")


def default_nu(p, singular=False):
    if p == 2:
        return [-0.5, -1.0, 1.5, 3.0] if singular else [-0.5, -1.0, 1.5, 1.0]
    if p == 4:
        if singular:
            return [-0.5, -1.0, -1.5, -0.02, 1.5, 3.0, 4.5, 0.2]
        return [-0.5, -1.0, -2.0, -0.02, 1.5, 1.0, 1.0, 0.2]
    if p == 8:
        first = [-0.5, -1.0, -1.5, -2.0, -2.5, -0.02, -0.02, -0.02]
        second = [1.5, 3.0, 4.5, 6.0, 7.5, 0.2, 0.2, 0.2]
        return first + second
    return [-0.5] * p + [1.5] * p


@dataclass(frozen=True)
class CovariateRule:
    """How the fixed covariates are laid out.

    ``second`` is ``"grid"`` (halves equally spaced in ``[0, 5]`` and
    ``[-2, -1]``, each in descending order), ``"normal"``, ``"lognormal"``
    (a random sample drawn once per scenario) or ``"none"`` (only the first,
    equally spaced covariate). ``halves`` selects whether the two halves of
    the grid split the pooled sample or each group.
    """

    second: str = "grid"
    halves: str = "pooled"

    @property
    def c(self):
        return 1 if self.second == "none" else 2


def _descending_halves(n):
    h = (n + 1) // 2
    return np.concatenate([np.linspace(5.0, 0.0, h), np.linspace(-1.0, -2.0, n - h)])


def build_covariates(group_sizes, rule=CovariateRule(), rng=None):
    """Covariate matrix ``Z`` of shape ``(N, c)`` for the given rule."""
    sizes = [int(n) for n in np.atleast_1d(group_sizes)]
    n_total = sum(sizes)
    first = np.linspace(-10.0, 10.0, n_total)
    if rule.second == "none":
        return first[:, None]
    if rule.second == "grid":
        if rule.halves == "pooled":
            second = _descending_halves(n_total)
        elif rule.halves == "per-group":
            second = np.concatenate([_descending_halves(n) for n in sizes])
        else:
            raise ValueError(f"unknown halves option {rule.halves!r}")
    elif rule.second in ("normal", "lognormal"):
        if rng is None:
            raise ValueError("random covariate rules need an rng")
        if rule.second == "normal":
            second = rng.standard_normal(n_total)
        else:
            second = rng.lognormal(0.0, 1.0, n_total)
    else:
        raise ValueError(f"unknown covariate rule {rule.second!r}")
    return np.column_stack([first, second])


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    group_sizes: tuple
    sigmas: tuple
    distribution: ErrorDistribution = ErrorDistribution.NORMAL
    nu: tuple = None
    mu: tuple = None
    covariates: CovariateRule = CovariateRule()
    n_sim: int = 2000
    n_boot: int = 1000
    alpha: float = 0.05
    seed: int = 20190501
    methods: tuple = METHODS
    flavor: HcFlavor = HcFlavor.HC4
    shift: tuple = None
    profile: str = "custom"

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.group_sizes)
        sigmas = tuple(np.asarray(s, dtype=float) for s in self.sigmas)
        if len(sigmas) != len(sizes):
            raise ValueError(f"{len(sigmas)} covariance matrices for {len(sizes)} groups")
        p = sigmas[0].shape[0]
        for s in sigmas:
            if s.shape != (p, p) or not np.allclose(s, s.T):
                raise ValueError("covariance matrices must be symmetric and all p x p")
            psd_sqrt(s)
        c = self.covariates.c
        nu = tuple(float(v) for v in (self.nu if self.nu is not None else default_nu(p)))
        if len(nu) != c * p:
            raise ValueError(f"nu must have length c*p = {c * p}, got {len(nu)}")
        mu = tuple(float(v) for v in (self.mu if self.mu is not None else [0.0] * (len(sizes) * p)))
        if len(mu) != len(sizes) * p:
            raise ValueError(f"mu must have length a*p = {len(sizes) * p}")
        shift = tuple(float(v) for v in (self.shift if self.shift is not None else [1.0] + [0.0] * (p - 1)))
        if len(shift) != p:
            raise ValueError(f"shift direction must have length p = {p}")
        methods = tuple(self.methods)
        unknown = set(methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}")
        if not 0.0 < float(self.alpha) <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if int(self.n_sim) < 1 or int(self.n_boot) < 1:
            raise ValueError("n_sim and n_boot must be positive")
        object.__setattr__(self, "group_sizes", sizes)
        object.__setattr__(self, "sigmas", sigmas)
        object.__setattr__(self, "distribution", ErrorDistribution(self.distribution))
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "shift", shift)
        object.__setattr__(self, "methods", methods)
        object.__setattr__(self, "flavor", HcFlavor(self.flavor))
        object.__setattr__(self, "n_sim", int(self.n_sim))
        object.__setattr__(self, "n_boot", int(self.n_boot))
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def a(self):
        return len(self.group_sizes)

    @property
    def p(self):
        return self.sigmas[0].shape[0]

    def with_shift(self, delta):
        """Copy whose last group mean is moved by ``delta * shift``."""
        mu = np.array(self.mu).reshape(self.a, self.p)
        mu[-1] = mu[-1] + delta * np.array(self.shift)
        return replace(self, mu=tuple(mu.reshape(-1)))

    def to_dict(self):
        d = asdict(self)
        d["sigmas"] = [s.tolist() for s in self.sigmas]
        d["distribution"] = self.distribution.value
        d["flavor"] = self.flavor.value
        d["covariates"] = {"second": self.covariates.second, "halves": self.covariates.halves}
        for key in ("group_sizes", "nu", "mu", "methods", "shift"):
            d[key] = list(d[key])
        return d


@dataclass
class SimulationReport:
    """Rejection counts for each method of one scenario (and one shift ``delta``)."""

    scenario: str
    n_sim: int
    n_boot: int
    alpha: float
    seed: int
    profile: str
    delta: float = 0.0
    rejections: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)
    runtime: float = 0.0

    def proportion(self, method):
        valid = self.n_sim - self.failures.get(method, 0)
        if valid <= 0:
            return None
        return self.rejections[method] / valid

    def standard_error(self, method):
        prop = self.proportion(method)
        if prop is None:
            return None
        valid = self.n_sim - self.failures.get(method, 0)
        return math.sqrt(prop * (1.0 - prop) / valid)

    def rows(self):
        out = []
        for m in self.rejections:
            out.append(
                {
                    "scenario": self.scenario,
                    "delta": self.delta,
                    "method": m,
                    "rejections": self.rejections[m],
                    "failures": self.failures.get(m, 0),
                    "n_sim": self.n_sim,
                    "proportion": self.proportion(m),
                    "mc_se": self.standard_error(m),
                    "n_boot": self.n_boot,
                    "alpha": self.alpha,
                    "seed": self.seed,
                    "profile": self.profile,
                    "runtime_s": self.runtime,
                }
            )
        return out


# --- the experiment loop ----------------------------------------------------


class _Scenario:
    """Quantities shared by every simulated dataset of one configuration."""

    def __init__(self, config):
        self.config = config
        cov_rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(2**31 - 1,)))
        z = build_covariates(config.group_sizes, config.covariates, cov_rng)
        template = Dataset(np.zeros((z.shape[0], config.p)), z, config.group_sizes)
        self.template = template
        self.design = build_design(template)
        self.projector = one_way_projector(config.a, config.p)
        self.roots = [psd_sqrt(s) for s in config.sigmas]
        p, c = config.p, z.shape[1]
        mean = np.repeat(np.array(config.mu).reshape(config.a, p), config.group_sizes, axis=0)
        self.mean = mean + z @ np.array(config.nu).reshape(c, p)

    def dataset(self, rng):
        cfg = self.config
        noise = standardized_noise(cfg.distribution, (self.template.n_total, cfg.p), rng)
        eps = np.vstack(
            [noise[sl] @ r for sl, r in zip(_slices(cfg.group_sizes), self.roots)]
        )
        return self.template.with_outcomes(self.mean + eps)


def _slices(sizes):
    off = np.concatenate([[0], np.cumsum(sizes)])
    return [slice(int(lo), int(hi)) for lo, hi in zip(off[:-1], off[1:])]


def _sim_seed(seed, s, k):
    return np.random.SeedSequence(seed, spawn_key=(s, k))


def _evaluate(scn, s):
    """Reject/fail flags of every configured method for simulated dataset ``s``."""
    cfg = scn.config
    ds = scn.dataset(np.random.default_rng(_sim_seed(cfg.seed, s, 0)))
    out = {}
    try:
        fit = fit_ols(ds, scn.design)
    except MancovaError:
        return {m: None for m in cfg.methods}
    for m in cfg.methods:
        try:
            if m == "WI":
                p = wilks_lambda(ds, fit).p_value
            elif m == "WT":
                p = wald_statistic(fit.mu_hat, sandwich_sigma(fit, flavor=cfg.flavor), scn.projector).p_value
            else:
                observed = mancats_statistic(fit.mu_hat, diagonal_d_hat(fit, cfg.flavor), scn.projector).statistic
                scheme, k = (Scheme.WILD, 1) if m == "MW" else (Scheme.PARAMETRIC, 2)
                bcfg = BootstrapConfig(scheme=scheme, n_boot=cfg.n_boot, flavor=cfg.flavor)
                reps, _ = bootstrap_replicates(fit, scn.projector, bcfg, seed=_sim_seed(cfg.seed, s, k), workers=1)
                p = (1.0 + np.count_nonzero(reps >= observed)) / (reps.size + 1.0)
            out[m] = bool(p <= cfg.alpha)
        except MancovaError:
            out[m] = None
    return out


def _run_chunk(config, start, stop):
    scn = _Scenario(config)
    rej = {m: 0 for m in config.methods}
    fail = {m: 0 for m in config.methods}
    for s in range(start, stop):
        for m, flag in _evaluate(scn, s).items():
            if flag is None:
                fail[m] += 1
            elif flag:
                rej[m] += 1
    return rej, fail


def _chunks(n, size):
    return [(lo, min(lo + size, n)) for lo in range(0, n, size)]


def run_size_experiment(config, workers=None, progress=None):
    """Rejection proportions of each method over ``config.n_sim`` datasets.

    Per-dataset failures (for instance Wilks' Lambda on singular data) are
    counted, not raised.
    """
    t0 = time.perf_counter()
    workers = default_workers() if workers is None else workers
    chunks = _chunks(config.n_sim, 100)
    rej = {m: 0 for m in config.methods}
    fail = {m: 0 for m in config.methods}
    if workers > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = pool.map(_run_chunk, [config] * len(chunks), *zip(*chunks))
            parts = list(results)
    else:
        parts = []
        for lo, hi in chunks:
            parts.append(_run_chunk(config, lo, hi))
            if progress is not None:
                progress(hi, config.n_sim)
    for r, f in parts:
        for m in config.methods:
            rej[m] += r[m]
            fail[m] += f[m]
    mu = np.array(config.mu).reshape(config.a, config.p)
    delta = float(np.abs(mu - mu[0]).max())
    return SimulationReport(
        scenario=config.name,
        n_sim=config.n_sim,
        n_boot=config.n_boot,
        alpha=config.alpha,
        seed=config.seed,
        profile=config.profile,
        delta=delta,
        rejections=rej,
        failures=fail,
        runtime=time.perf_counter() - t0,
    )


def run_power_experiment(config, deltas, workers=None):
    """One report per shift ``delta``; ``delta = 0`` is the size experiment."""
    reports = []
    for delta in deltas:
        rep = run_size_experiment(config.with_shift(float(delta)), workers=workers)
        rep.delta = float(delta)
        reports.append(rep)
    return reports


def achieved_power(power_reports, size_report):
    """Power minus the empirical size, per method and shift."""
    out = []
    for rep in power_reports:
        row = {"delta": rep.delta}
        for m in rep.rejections:
            pw, sz = rep.proportion(m), size_report.proportion(m)
            row[m] = None if pw is None or sz is None else pw - sz
        out.append(row)
    return out


def null_statistic_draws(config, n_draws, statistic="mancats"):
    """Values of MANCATS (or WTS) on ``n_draws`` datasets simulated from ``config``."""
    scn = _Scenario(config)
    out = np.empty(n_draws)
    for s in range(n_draws):
        fit = fit_ols(scn.dataset(np.random.default_rng(_sim_seed(config.seed, s, 0))), scn.design)
        if statistic == "mancats":
            out[s] = mancats_statistic(fit.mu_hat, diagonal_d_hat(fit, config.flavor), scn.projector).statistic
        else:
            out[s] = wald_statistic(fit.mu_hat, sandwich_sigma(fit, flavor=config.flavor), scn.projector).statistic
    return out


def scenario_limit_weights(config):
    """Chi-square mixture weights of MANCATS under the true scenario covariances."""
    scn = _Scenario(config)
    lam = mean_covariance_limit(scn.design, config.sigmas)
    d = diagonal_limit(config.group_sizes, config.sigmas)
    return limit_weights(scn.projector, d, lam)


# --- named presets ------------------------------------------------------------

_DISTS = ("normal", "chisq5", "lognormal", "dexp")
_TWO_GROUP_SIZES = ((20, 20), (10, 10), (10, 20), (20, 10))
_FOUR_GROUP_SIZES = {
    "n1": (30, 30, 30, 30),
    "n2": (15, 15, 15, 15),
    "n3": (5, 10, 20, 25),
    "n4": (25, 20, 10, 5),
}
_LARGE_SIZES = ((200, 200), (100, 100), (150, 50), (50, 150))
_ROHWER_SIZES = ((32, 37), (23, 46), (46, 23))
_POWER_DELTAS = (0.5, 1.0, 1.5, 2.0, 2.5, 3.0)

ROHWER_SIGMA_REGULAR = (
    [[145.88, 113.18], [113.18, 1073.21]],
    [[99.07, 60.85], [60.85, 458.41]],
)
# third outcome is the sum of the first two; built from the regular matrices so
# that it is exactly singular (matrices rounded to two decimals are not)
_SUM_MAP = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
ROHWER_SIGMA_SINGULAR = tuple((_SUM_MAP @ np.array(s) @ _SUM_MAP.T).tolist() for s in ROHWER_SIGMA_REGULAR)


def _profile_kwargs(profile):
    if profile not in PROFILES:
        raise UnknownScenarioPreset(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    return dict(PROFILES[profile], profile=profile)


def _standard(name, label, dist, sizes, p, profile, **extra):
    sizes = tuple(sizes)
    kw = dict(
        name=name,
        group_sizes=sizes,
        sigmas=scenario_sigmas(label, len(sizes), p),
        distribution=dist,
        nu=default_nu(p, singular=label == "III"),
        shift=[1.0] * p if label == "III" else None,
        **_profile_kwargs(profile),
    )
    kw.update(extra)
    return ScenarioConfig(**kw)


def _symmetrize(m):
    m = np.asarray(m, dtype=float)
    return (m + m.T) / 2


def _build_presets():
    table = {}
    for label in ("I", "II", "III"):
        for dist in _DISTS:
            for n1, n2 in _TWO_GROUP_SIZES:
                table[f"table1-{label}-{dist}-{n1}-{n2}"] = (_standard, (label, dist, (n1, n2), 2), {})
                table[f"table3-{label}-{dist}-{n1}-{n2}"] = (_standard, (label, dist, (n1, n2), 4), {})
            for key, sizes in _FOUR_GROUP_SIZES.items():
                table[f"table2-{label}-{dist}-{key}"] = (_standard, (label, dist, sizes, 2), {})
    for dist in _DISTS:
        for n1, n2 in _TWO_GROUP_SIZES:
            table[f"tableS1-III-{dist}-{n1}-{n2}"] = (
                _standard,
                ("III", dist, (n1, n2), 8),
                {"methods": ("WT", "MW", "MP")},
            )
            for cov in ("normal", "lognormal"):
                table[f"tableS2-{cov}cov-{dist}-{n1}-{n2}"] = (
                    _standard,
                    ("III", dist, (n1, n2), 2),
                    {"covariates": CovariateRule(second=cov), "methods": ("WT", "MW", "MP")},
                )
        for n1, n2 in _LARGE_SIZES:
            table[f"tableS3-II-{dist}-{n1}-{n2}"] = (_standard, ("II", dist, (n1, n2), 2), {"_large": True})
        for n1, n2 in _ROHWER_SIZES:
            for key, sig in (("R", ROHWER_SIGMA_REGULAR), ("S", ROHWER_SIGMA_SINGULAR)):
                p = len(sig[0])
                table[f"table5-{key}-{dist}-{n1}-{n2}"] = (
                    None,
                    ((n1, n2), [_symmetrize(s) for s in sig], dist),
                    {"_rohwer": p},
                )
    for label in ("I", "II"):
        for dist in ("normal", "lognormal"):
            table[f"figure1-{label}-{dist}"] = (_standard, (label, dist, (20, 20), 2), {"methods": ("WT", "MW", "MP")})
    for dist in _DISTS:
        table[f"figure2-III-{dist}"] = (_standard, ("III", dist, (10, 10), 2), {"methods": ("WT", "MW", "MP")})
    return table


_PRESETS = _build_presets()


def preset_names():
    return sorted(_PRESETS)


def power_deltas(name):
    """Shift grid of the power figures."""
    return _POWER_DELTAS


def get_preset(name, profile="desk"):
    """Scenario configuration for a named table or figure cell."""
    try:
        builder, args, extra = _PRESETS[name]
    except KeyError:
        raise UnknownScenarioPreset(f"unknown scenario preset {name!r}") from None
    extra = dict(extra)
    if extra.pop("_large", False) and profile == "full":
        extra.update(n_sim=1000, n_boot=500)
    rohwer_p = extra.pop("_rohwer", None)
    if rohwer_p is not None:
        sizes, sigmas, dist = args
        nu = [-0.5, -1.0] if rohwer_p == 2 else [-0.5, -1.0, -1.5]
        return ScenarioConfig(
            name=name,
            group_sizes=sizes,
            sigmas=sigmas,
            distribution=dist,
            nu=nu,
            covariates=CovariateRule(second="none"),
            **_profile_kwargs(profile),
        )
    return builder(name, *args, profile, **extra)
