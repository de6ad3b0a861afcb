"""Wild and parametric bootstrap calibration of MANCATS (and, experimentally, WTS).

Replicates are generated in fixed blocks of :data:`BLOCK_SIZE`. Block ``b``
draws from its own stream seeded by ``SeedSequence(seed, spawn_key=(b,))``,
so the replicate array depends only on the seed and never on how many
workers evaluate the blocks.
"""

import enum
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .covariance import (
    HcFlavor,
    _coordinate_scale2,
    _degenerate,
    _sandwich_batch,
    _variances_batch,
    diagonal_d_hat,
    group_sigmas,
    hc_scales,
    sandwich_sigma,
    LEVERAGE_LIMIT,
)
from .errors import DegenerateVariance, LeverageAtOne
from .linalg import psd_sqrt
from .model import fit_ols
from .statistics import (
    TestResult,
    _as_matrix,
    mancats_statistic,
    projected_quadratic,
    range_basis,
    wald_statistic,
)

BLOCK_SIZE = 250
THREADS_ENV = "MANCATS_THREADS"


class Scheme(str, enum.Enum):
    WILD = "wild-rademacher"
    PARAMETRIC = "parametric-gaussian"


class Statistic(str, enum.Enum):
    MANCATS = "mancats"
    WALD = "wald"


def default_workers():
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class BootstrapConfig:
    scheme: Scheme = Scheme.PARAMETRIC
    n_boot: int = 1000
    seed: int = 0
    statistic: Statistic = Statistic.MANCATS
    flavor: HcFlavor = HcFlavor.HC4

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        object.__setattr__(self, "statistic", Statistic(self.statistic))
        object.__setattr__(self, "flavor", HcFlavor(self.flavor))
        if int(self.n_boot) < 1:
            raise ValueError("n_boot must be at least 1")
        object.__setattr__(self, "n_boot", int(self.n_boot))


@dataclass
class BootstrapResult:
    observed: float
    replicates: np.ndarray
    p_value: float
    seed: int
    config: BootstrapConfig = None
    diagnostics: dict = field(default_factory=dict)


def bootstrap_p_value(observed, replicates):
    """``(1 + #{replicates >= observed}) / (B + 1)``."""
    replicates = np.asarray(replicates)
    return (1.0 + np.count_nonzero(replicates >= observed)) / (replicates.size + 1.0)


def _rademacher(rng, shape):
    return rng.integers(0, 2, size=shape, dtype=np.int8).astype(float) * 2.0 - 1.0


def wild_bootstrap_sample(fit, rng):
    """One wild-bootstrap outcome set ``Y*_ij = u_ij T_ij / sqrt(1 - h_ij)``.

    A single Rademacher sign per subject multiplies the whole residual vector,
    which keeps the dependence between outcome coordinates intact.
    """
    h = fit.hat_diagonals
    if np.any(h >= LEVERAGE_LIMIT):
        raise LeverageAtOne("wild bootstrap needs all leverages below one")
    signs = _rademacher(rng, h.shape)
    return fit.residuals * (signs / np.sqrt(1.0 - h))[:, None]


def parametric_bootstrap_sample(sigmas, group_sizes, rng):
    """Draw ``Y_ij ~ N(0, Sigma_i)`` for every subject; singular ``Sigma_i`` allowed."""
    roots = [psd_sqrt(s) for s in sigmas]
    p = roots[0].shape[0]
    parts = [rng.standard_normal((n, p)) @ r for r, n in zip(roots, group_sizes)]
    return np.vstack(parts)


class _Replicator:
    """Evaluates bootstrap statistics for whole blocks of synthetic datasets."""

    def __init__(self, fit, projector, config):
        self.design = fit.design
        self.config = config
        self.t = _as_matrix(projector)
        self.basis = range_basis(self.t)
        self.scales = hc_scales(self.design.leverages, config.flavor)
        self.solver_mu = self.design.solver[: self.design.a]
        self.sizes = np.asarray(self.design.group_sizes, dtype=float)
        if config.scheme is Scheme.WILD:
            h = self.design.leverages
            if np.any(h >= LEVERAGE_LIMIT):
                raise LeverageAtOne("wild bootstrap needs all leverages below one")
            self.base = fit.residuals / np.sqrt(1.0 - h)[:, None]
        else:
            sig = group_sigmas(fit, config.flavor)
            self.roots = [psd_sqrt(s) for s in sig]
            off = self.design.offsets
            self.slices = [slice(int(lo), int(hi)) for lo, hi in zip(off[:-1], off[1:])]
        # degeneracy is judged against the spread of the original residuals
        self.scale2 = _coordinate_scale2(fit.residuals)

    def draw(self, rng, m):
        n, p = self.design.n_total, self.design.p
        if self.config.scheme is Scheme.WILD:
            signs = _rademacher(rng, (m, n))
            return signs[:, :, None] * self.base
        z = rng.standard_normal((m, n, p))
        for sl, root in zip(self.slices, self.roots):
            z[:, sl] = z[:, sl] @ root
        return z

    def statistics(self, ystar):
        d = self.design
        coef = d.solver @ ystar
        resid = ystar - d.x @ coef
        scaled = resid * self.scales[:, None]
        mu = coef[:, : d.a].reshape(ystar.shape[0], -1)
        if self.config.statistic is Statistic.MANCATS:
            var = _variances_batch(scaled, d.group_sizes, d.c)
            bad = _degenerate(var, self.scale2).any(axis=(-2, -1))
            diag = (var / self.sizes[:, None]).reshape(ystar.shape[0], -1)
            diag = np.where(bad[:, None], 1.0, diag)
            cov = diag[:, :, None] * np.eye(diag.shape[1])
        else:
            cov = _sandwich_batch(self.solver_mu, scaled)
            bad = np.zeros(ystar.shape[0], dtype=bool)
        stat, _ = projected_quadratic(mu, self.t, cov, basis=self.basis)
        return stat, bad

    def block(self, seed_seq, count):
        rng = np.random.Generator(np.random.PCG64(seed_seq))
        out = np.empty(count)
        todo = np.arange(count)
        redraws = 0
        while todo.size:
            stat, bad = self.statistics(self.draw(rng, todo.size))
            out[todo[~bad]] = stat[~bad]
            todo = todo[bad]
            redraws += todo.size
            if redraws > 10 * count:
                raise DegenerateVariance("too many bootstrap replicates with degenerate variance estimates")
        return out, redraws


def _block_seeds(seed, n_boot):
    if isinstance(seed, np.random.SeedSequence):
        entropy, prefix = seed.entropy, tuple(seed.spawn_key)
    else:
        entropy, prefix = int(seed), ()
    n_blocks = -(-n_boot // BLOCK_SIZE)
    for b in range(n_blocks):
        count = min(BLOCK_SIZE, n_boot - b * BLOCK_SIZE)
        yield np.random.SeedSequence(entropy, spawn_key=prefix + (b,)), count


def bootstrap_replicates(fit, projector, config, seed=None, workers=None):
    """Bootstrap statistics for ``fit``; returns ``(replicates, redraw_count)``.

    ``seed`` overrides ``config.seed`` and may be a ``SeedSequence``; the
    simulation engine passes one per simulated dataset.
    """
    rep = _Replicator(fit, projector, config)
    seeds = list(_block_seeds(config.seed if seed is None else seed, config.n_boot))
    workers = default_workers() if workers is None else workers
    if workers > 1 and len(seeds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda s: rep.block(*s), seeds))
    else:
        parts = [rep.block(*s) for s in seeds]
    return np.concatenate([p[0] for p in parts]), sum(p[1] for p in parts)


def observed_statistic(fit, projector, statistic=Statistic.MANCATS, flavor=HcFlavor.HC4):
    statistic = Statistic(statistic)
    if statistic is Statistic.MANCATS:
        return mancats_statistic(fit.mu_hat, diagonal_d_hat(fit, flavor), projector)
    return wald_statistic(fit.mu_hat, sandwich_sigma(fit, flavor=flavor), projector)


def bootstrap_test(dataset, design, projector, config, workers=None):
    """Bootstrap p-value for MANCATS (or WTS) on ``dataset``.

    Each replicate refits the full model to synthetic null data, recomputes
    the variance estimate with the configured HC flavor and evaluates the
    statistic with the same projector.
    """
    fit = fit_ols(dataset, design)
    observed = observed_statistic(fit, projector, config.statistic, config.flavor).statistic
    replicates, redraws = bootstrap_replicates(fit, projector, config, workers=workers)
    return BootstrapResult(
        observed=observed,
        replicates=replicates,
        p_value=bootstrap_p_value(observed, replicates),
        seed=config.seed,
        config=config,
        diagnostics={"redrawn_replicates": int(redraws)},
    )


def bootstrap_test_result(result):
    """Express a :class:`BootstrapResult` as a :class:`TestResult`."""
    cfg = result.config
    method = f"{cfg.statistic.value}-{'wild' if cfg.scheme is Scheme.WILD else 'parametric'}"
    return TestResult(
        method=method,
        statistic=result.observed,
        reference="bootstrap-empirical",
        p_value=result.p_value,
        diagnostics={
            "n_boot": cfg.n_boot,
            "seed": result.seed,
            "scheme": cfg.scheme.value,
            "flavor": cfg.flavor.value,
            **result.diagnostics,
        },
    )
