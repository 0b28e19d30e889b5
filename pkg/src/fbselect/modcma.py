"""Modular CMA-ES with eleven switchable modules and a fixed-budget runner.

Module semantics (slot order = canonical code order):

 0. active_update        negative recombination weights for the worst offspring
                          in the rank-mu covariance update (active CMA)
 1. elitism               (mu + lambda) selection: parents compete with offspring
 2. mirrored_sampling     offspring drawn in pairs z, -z
 3. orthogonal_sampling   blocks of d sampled vectors are Gram-Schmidt
                          orthonormalised, keeping their chi-distributed norms
 4. sequential_selection  evaluation stops early once an offspring beats the
                          incumbent (after at least mu evaluations)
 5. threshold_convergence steps shorter than a decaying length threshold are
                          stretched: t = 0.1 * diam * (remaining/budget)^0.995
 6. two_point_step_size   two-point step-size adaptation (TPA) replaces CSA;
                          m +- last mean shift are evaluated each generation
 7. pairwise_selection    only the better of each consecutive offspring pair
                          enters selection (pairs are the mirrored pairs)
 8. equal_recombination_weights  w_i = 1/mu instead of log-decreasing weights
 9. base_sampler          0 gaussian, 1 scrambled Sobol, 2 scrambled Halton;
                          low-discrepancy points map through the normal
                          inverse CDF
10. restart_strategy      0 none, 1 IPOP (doubling population), 2 BIPOP

Out-of-box offspring are resampled once, then clamped to the box.
"""

import itertools
import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

from .bench import LOWER, UPPER, PerformanceRecord, make_problem
from .errors import ValidationError
from .parallel import map_tasks
from .seeding import derive_seed

log = logging.getLogger(__name__)

BINARY_SLOTS = (
    "active_update",
    "elitism",
    "mirrored_sampling",
    "orthogonal_sampling",
    "sequential_selection",
    "threshold_convergence",
    "two_point_step_size",
    "pairwise_selection",
    "equal_recombination_weights",
)
TERNARY_SLOTS = ("base_sampler", "restart_strategy")
SLOTS = BINARY_SLOTS + TERNARY_SLOTS
SAMPLERS = ("gaussian", "sobol", "halton")
RESTARTS = ("none", "IPOP", "BIPOP")


@dataclass(frozen=True, order=True)
class ModuleConfig:
    active_update: int = 0
    elitism: int = 0
    mirrored_sampling: int = 0
    orthogonal_sampling: int = 0
    sequential_selection: int = 0
    threshold_convergence: int = 0
    two_point_step_size: int = 0
    pairwise_selection: int = 0
    equal_recombination_weights: int = 0
    base_sampler: int = 0
    restart_strategy: int = 0

    def __post_init__(self):
        for name in BINARY_SLOTS:
            v = getattr(self, name)
            if v not in (0, 1):
                raise ValueError(f"{name} must be 0 or 1, got {v!r}")
            object.__setattr__(self, name, int(v))
        for name in TERNARY_SLOTS:
            v = getattr(self, name)
            if v not in (0, 1, 2):
                raise ValueError(f"{name} must be 0, 1 or 2, got {v!r}")
            object.__setattr__(self, name, int(v))

    @property
    def code(self):
        return "".join(str(getattr(self, s)) for s in SLOTS)

    @classmethod
    def from_code(cls, code):
        code = code.strip()
        if len(code) != len(SLOTS) or not code.isdigit():
            raise ValueError(f"config code must be {len(SLOTS)} digits, got {code!r}")
        return cls(*(int(c) for c in code))

    def describe(self):
        on = [s for s in BINARY_SLOTS if getattr(self, s)]
        on.append(f"sampler={SAMPLERS[self.base_sampler]}")
        on.append(f"restart={RESTARTS[self.restart_strategy]}")
        return ", ".join(on)

    def __str__(self):
        return self.code


def enumerate_variants(filter=None):
    """All module configurations in canonical (lexicographic code) order.

    ``filter`` maps slot name to an allowed value or iterable of values.
    """
    filter = dict(filter or {})
    unknown = set(filter) - set(SLOTS)
    if unknown:
        raise ValueError(f"unknown module slots {sorted(unknown)}")
    choices = []
    for name in SLOTS:
        full = (0, 1) if name in BINARY_SLOTS else (0, 1, 2)
        allowed = filter.get(name, full)
        if isinstance(allowed, int):
            allowed = (allowed,)
        choices.append(tuple(v for v in full if v in set(allowed)))
    return [ModuleConfig(*vals) for vals in itertools.product(*choices)]


DEFAULT_PORTFOLIO = (
    "00000000000",  # plain CMA-ES
    "10000000000",  # active update
    "01000000000",  # elitist
    "00110001000",  # mirrored + orthogonal + pairwise
    "00001010010",  # sequential + TPA + Sobol
    "10000100101",  # active + threshold convergence + equal weights + IPOP
    "00000000022",  # Halton + BIPOP
    "11100000010",  # active + elitist + mirrored + Sobol
)


def read_portfolio(path):
    """Parse a portfolio file: one config code per line, ``#`` comments."""
    configs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            try:
                configs.append(ModuleConfig.from_code(text))
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from None
    if not configs:
        raise ValidationError(f"{path}: portfolio file lists no configurations")
    return configs


def write_portfolio(path, codes, header=None):
    with open(path, "w", encoding="utf-8") as fh:
        for line in header or ():
            fh.write(f"# {line}\n")
        for code in codes:
            fh.write(f"{code}\n")


@dataclass
class CmaParams:
    lambda_: int = None
    mu: int = None
    sigma0: float = 2.0
    x0: np.ndarray = None

    def resolve(self, dim):
        lam = self.lambda_ if self.lambda_ is not None else 4 + int(math.floor(3 * math.log(dim)))
        mu = self.mu if self.mu is not None else lam // 2
        if not 1 <= mu <= lam:
            raise ValueError(f"need 1 <= mu <= lambda, got mu={mu}, lambda={lam}")
        if not self.sigma0 > 0:
            raise ValueError(f"sigma0 must be positive, got {self.sigma0}")
        return lam, mu


@dataclass
class RunResult:
    best_precision: float
    evals_used: int
    best_x: np.ndarray
    best_fitness: float
    generations: int
    restarts: int
    history: tuple  # best-so-far precision after each generation


def _weights(lam, mu, d, equal, active):
    """Recombination weights and learning rates for one (lambda, mu) setting."""
    ranks = np.arange(1, lam + 1)
    raw = np.full(lam, 1.0) if equal else math.log((lam + 1) / 2) - np.log(ranks)
    if equal:
        raw[mu:] = -1.0
    pos = raw[:mu] / raw[:mu].sum()
    mueff = 1.0 / np.sum(pos**2)

    c1 = 2.0 / ((d + 1.3) ** 2 + mueff)
    cmu = min(1.0 - c1, 2.0 * (mueff - 2.0 + 1.0 / mueff) / ((d + 2) ** 2 + mueff))
    neg = np.zeros(0)
    if active and lam > mu:
        rneg = raw[mu:]
        if not equal:
            rneg = np.minimum(rneg, -1e-12)  # log weights at rank (lam+1)/2 are zero
        mueff_neg = rneg.sum() ** 2 / np.sum(rneg**2)
        alpha = min(
            1.0 + c1 / cmu if cmu > 0 else np.inf,
            1.0 + 2.0 * mueff_neg / (mueff + 2.0),
            (1.0 - c1 - cmu) / (d * cmu) if cmu > 0 else np.inf,
        )
        neg = rneg * alpha / np.abs(rneg).sum()
    return pos, neg, mueff, c1, cmu


class _Sampler:
    """Standard-normal (or quasi-normal) vectors with mirroring/orthogonalisation."""

    def __init__(self, d, kind, mirrored, orthogonal, rng):
        self.d = d
        self.kind = kind
        self.mirrored = mirrored
        self.orthogonal = orthogonal
        self.rng = rng
        self.engine = None
        if kind == 1:
            self.engine = qmc.Sobol(d, scramble=True, seed=rng)
        elif kind == 2:
            self.engine = qmc.Halton(d, scramble=True, seed=rng)

    def base(self, k):
        if self.engine is None:
            return self.rng.standard_normal((k, self.d))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            u = self.engine.random(k)
        return ndtri(np.clip(u, 1e-12, 1.0 - 1e-12))

    def _orthogonalise(self, z):
        out = np.empty_like(z)
        for start in range(0, len(z), self.d):
            block = z[start : start + self.d]
            norms = np.linalg.norm(block, axis=1)
            q, _ = np.linalg.qr(block.T)
            out[start : start + self.d] = q.T * norms[:, None]
        return out

    def sample(self, n):
        k = (n + 1) // 2 if self.mirrored else n
        z = self.base(k)
        if self.orthogonal:
            z = self._orthogonalise(z)
        if self.mirrored:
            z = np.stack([z, -z], axis=1).reshape(-1, self.d)[:n]
        return z


class _Strategy:
    """State of one CMA-ES run between restarts."""

    def __init__(self, d, lam, mu, sigma, mean, config, rng):
        self.d, self.lam, self.mu = d, lam, mu
        self.cfg = config
        self.sigma = sigma
        self.sigma0 = sigma
        self.mean = mean.astype(float)
        self.C = np.eye(d)
        self.B = np.eye(d)
        self.D = np.ones(d)
        self.ps = np.zeros(d)
        self.pc = np.zeros(d)
        self.gen = 0
        self.parents_x = None
        self.parents_f = None
        self.incumbent = np.inf
        self.prev_shift = None
        self.tpa_s = 0.0
        self.best_history = []

        mu_sel = min(mu, (lam + 1) // 2) if config.pairwise_selection else mu
        self.mu_sel = mu_sel
        self.w_pos, self.w_neg, self.mueff, self.c1, self.cmu = _weights(
            lam, mu_sel, d, config.equal_recombination_weights, config.active_update
        )
        self.cs = (self.mueff + 2) / (d + self.mueff + 5)
        self.ds = 1 + 2 * max(0.0, math.sqrt((self.mueff - 1) / (d + 1)) - 1) + self.cs
        self.cc = (4 + self.mueff / d) / (d + 4 + 2 * self.mueff / d)
        self.chi_n = math.sqrt(d) * (1 - 1 / (4 * d) + 1 / (21 * d * d))
        self.sampler = _Sampler(d, config.base_sampler, config.mirrored_sampling, config.orthogonal_sampling, rng)
        self.rng = rng

    def _decompose(self):
        C = (self.C + self.C.T) / 2
        try:
            if not np.all(np.isfinite(C)):
                raise np.linalg.LinAlgError("non-finite covariance")
            evals, B = np.linalg.eigh(C)
            if evals.min() <= 0:
                raise np.linalg.LinAlgError("covariance not positive definite")
        except np.linalg.LinAlgError as exc:
            log.debug("resetting covariance: %s", exc)
            C, B, evals = np.eye(self.d), np.eye(self.d), np.ones(self.d)
            self.pc = np.zeros(self.d)
        self.C, self.B, self.D = C, B, np.sqrt(evals)

    def _threshold(self, used, budget):
        diameter = math.sqrt(self.d) * (UPPER - LOWER)
        return 0.1 * diameter * ((budget - used) / budget) ** 0.995

    def _steps(self, z, threshold):
        y = z @ (self.B * self.D).T
        if threshold is not None:
            length = np.linalg.norm(self.sigma * y, axis=1)
            short = (length < threshold) & (length > 0)
            y[short] *= ((2 * threshold - length[short]) / length[short])[:, None]
        return y

    def propose(self, used, budget):
        """Sample one generation; returns (raw z, y, x)."""
        z = self.sampler.sample(self.lam)
        threshold = self._threshold(used, budget) if self.cfg.threshold_convergence else None
        y = self._steps(z, threshold)
        tpa = (
            self.cfg.two_point_step_size
            and self.prev_shift is not None
            and self.lam >= 2
            and np.any(self.prev_shift != 0)
        )
        if tpa:
            y[0] = self.prev_shift / self.sigma
            y[1] = -self.prev_shift / self.sigma
        x = self.mean + self.sigma * y

        out = np.any((x < LOWER) | (x > UPPER), axis=1)
        if tpa:
            out[:2] = False
        if out.any():
            y[out] = self._steps(self.sampler.base(int(out.sum())), threshold)
            x[out] = self.mean + self.sigma * y[out]
        x = np.clip(x, LOWER, UPPER)
        y = (x - self.mean) / self.sigma
        return z, y, x, tpa

    def update(self, y, x, f, tpa):
        """Selection and adaptation from ``len(f)`` evaluated offspring."""
        d = self.d
        n = len(f)
        idx = np.arange(n)
        if self.cfg.pairwise_selection:
            keep = []
            for i in range(0, n, 2):
                if i + 1 < n and f[i + 1] < f[i]:
                    keep.append(i + 1)
                else:
                    keep.append(i)
            idx = np.array(keep)
        pool_y, pool_x, pool_f = y[idx], x[idx], f[idx]
        if self.cfg.elitism and self.parents_x is not None:
            pool_x = np.vstack([pool_x, self.parents_x])
            pool_y = np.vstack([pool_y, (self.parents_x - self.mean) / self.sigma])
            pool_f = np.concatenate([pool_f, self.parents_f])
        order = np.argsort(pool_f, kind="stable")
        mu = min(self.mu_sel, len(order))
        sel = order[:mu]
        w_pos = self.w_pos[:mu] / self.w_pos[:mu].sum()
        n_neg = min(len(order) - mu, len(self.w_neg))
        worst = order[len(order) - n_neg :] if n_neg else order[:0]
        w_neg = self.w_neg[len(self.w_neg) - n_neg :]

        self.parents_x = pool_x[sel].copy()
        self.parents_f = pool_f[sel].copy()
        self.incumbent = float(pool_f[sel[0]])

        y_sel = pool_y[sel]
        y_w = w_pos @ y_sel
        old_mean = self.mean
        self.mean = self.mean + self.sigma * y_w

        inv_sqrt = (self.B / self.D) @ self.B.T
        self.ps = (1 - self.cs) * self.ps + math.sqrt(self.cs * (2 - self.cs) * self.mueff) * (inv_sqrt @ y_w)
        ps_norm = np.linalg.norm(self.ps)
        hsig = ps_norm / math.sqrt(1 - (1 - self.cs) ** (2 * (self.gen + 1))) < (1.4 + 2 / (d + 1)) * self.chi_n
        self.pc = (1 - self.cc) * self.pc + hsig * math.sqrt(self.cc * (2 - self.cc) * self.mueff) * y_w

        delta = (1 - hsig) * self.cc * (2 - self.cc)
        rank_mu = (w_pos[:, None] * y_sel).T @ y_sel
        w_sum = w_pos.sum()
        if n_neg:
            y_neg = pool_y[worst]
            mnorm = np.sum((y_neg @ inv_sqrt.T) ** 2, axis=1)
            w_circ = w_neg * d / np.maximum(mnorm, 1e-300)
            rank_mu += (w_circ[:, None] * y_neg).T @ y_neg
            w_sum += w_neg.sum()
        self.C = (
            (1 + self.c1 * delta - self.c1 - self.cmu * w_sum) * self.C
            + self.c1 * np.outer(self.pc, self.pc)
            + self.cmu * rank_mu
        )

        if tpa and n >= 2:
            ranks = np.empty(n)
            ranks[np.argsort(f, kind="stable")] = np.arange(n)
            z_tpa = 0.0 if f[0] == f[1] else (ranks[1] - ranks[0]) / max(n - 1, 1)
            self.tpa_s = 0.7 * self.tpa_s + 0.3 * z_tpa
            self.sigma *= math.exp(self.tpa_s / math.sqrt(d))
        else:
            self.sigma *= math.exp((self.cs / self.ds) * (ps_norm / self.chi_n - 1))
        self.sigma = float(np.clip(self.sigma, 1e-20, 1e10))
        self.prev_shift = self.mean - old_mean
        self.gen += 1
        self.best_history.append(float(f.min()))
        self._decompose()

    def should_restart(self):
        d = self.d
        if self.sigma * self.D.max() < 1e-11:
            return True
        if self.sigma * self.D.max() > 1e4 * self.sigma0:
            return True
        if (self.D.max() / self.D.min()) ** 2 > 1e14:
            return True
        hist = 10 + int(math.ceil(30 * d / self.lam))
        recent = self.best_history[-hist:]
        if len(self.best_history) >= hist and max(recent) - min(recent) < 1e-12:
            return True
        return False


def run(problem, config, params=None, budget=500, seed=0, trace=None):
    """Run one CMA-ES variant on ``problem`` for at most ``budget`` evaluations.

    ``trace``, if given, is called once per generation with a dict holding the
    raw sampled ``z`` vectors, offspring fitness, the selected-parent
    ``incumbent``, ``best_so_far`` and the ``restart`` index.
    """
    params = params or CmaParams()
    d = problem.dim
    lam0, mu0 = params.resolve(d)
    if budget < lam0:
        raise ValueError(f"budget {budget} is smaller than the population size {lam0}")
    rng = np.random.default_rng(seed)
    start_evals = problem.eval_count

    def used():
        return problem.eval_count - start_evals

    x0 = params.x0
    mean = np.asarray(x0, dtype=float) if x0 is not None else rng.uniform(LOWER, UPPER, d)
    if mean.shape != (d,):
        raise ValueError(f"x0 must have length {d}")

    best_f, best_x = np.inf, mean.copy()
    history = []
    lam, mu, sigma = lam0, mu0, params.sigma0
    large_lam = lam0
    budget_large = budget_small = 0
    restart = 0
    generations = 0
    while True:
        es = _Strategy(d, lam, mu, sigma, mean, config, rng)
        run_start = used()
        while used() < budget:
            z, y, x, tpa = es.propose(used(), budget)
            remaining = budget - used()
            if config.sequential_selection and np.isfinite(es.incumbent):
                f_list = []
                for i in range(min(lam, remaining)):
                    f_list.append(problem.evaluate(x[i]))
                    if len(f_list) >= es.mu and f_list[-1] < es.incumbent:
                        break
                f = np.array(f_list)
            else:
                f = problem.evaluate_many(x[: min(lam, remaining)])
            n = len(f)
            i_best = int(np.argmin(f))
            if f[i_best] < best_f:
                best_f, best_x = float(f[i_best]), x[i_best].copy()
            generations += 1
            history.append(max(best_f - problem.f_opt, 1e-12))
            if n < lam and not config.sequential_selection:
                break  # budget exhausted mid-generation
            if n >= 1:
                es.update(y[:n], x[:n], f, tpa)
            if trace is not None:
                trace(
                    {
                        "generation": generations,
                        "restart": restart,
                        "z": z,
                        "fitness": f,
                        "incumbent": es.incumbent,
                        "best_so_far": best_f,
                        "sigma": es.sigma,
                        "evals": used(),
                    }
                )
            if config.restart_strategy and es.should_restart():
                break
        if used() >= budget or not config.restart_strategy:
            break
        if config.restart_strategy == 2:
            # BIPOP: spend comparable budgets in the large- and small-population regimes
            if restart == 0 or lam == large_lam:
                budget_large += used() - run_start
            else:
                budget_small += used() - run_start
            if budget_small < budget_large:
                u = rng.uniform()
                lam = max(2, int(math.floor(lam0 * (0.5 * large_lam / lam0) ** (u * u))))
                sigma = params.sigma0 * 10.0 ** (-2 * u)
            else:
                large_lam *= 2
                lam, sigma = large_lam, params.sigma0
        else:
            lam, sigma = lam * 2, params.sigma0
        mu = max(1, lam // 2) if params.mu is None else min(params.mu, lam)
        mean = rng.uniform(LOWER, UPPER, d)
        restart += 1

    return RunResult(
        best_precision=max(best_f - problem.f_opt, 1e-12),
        evals_used=used(),
        best_x=best_x,
        best_fitness=best_f,
        generations=generations,
        restarts=restart,
        history=tuple(history),
    )


def _run_task(task):
    pid, code, run_index, budget, seed, params = task
    problem = make_problem(pid.fid, pid.iid, pid.dim)
    result = run(problem, ModuleConfig.from_code(code), params, budget, seed)
    return result.best_precision


def run_seed(master, pid, code, run_index):
    return derive_seed(master, "modcma", pid.fid, pid.iid, pid.dim, code, run_index)


def run_portfolio(problems, portfolio, budget=500, runs=5, seed=0, params=None, jobs=1):
    """Median fixed-budget precision of every config on every problem.

    Returns one record per (problem, config), ordered problem-major.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    pids = [getattr(p, "id", p) for p in problems]
    codes = [c.code if isinstance(c, ModuleConfig) else ModuleConfig.from_code(c).code for c in portfolio]
    tasks = [
        (pid, code, r, budget, run_seed(seed, pid, code, r), params)
        for pid in pids
        for code in codes
        for r in range(runs)
    ]
    values = map_tasks(_run_task, tasks, jobs, chunksize=max(1, len(tasks) // (8 * max(jobs or 1, 1))))
    records = []
    for i, (pid, code) in enumerate((p, c) for p in pids for c in codes):
        precs = tuple(values[i * runs : (i + 1) * runs])
        records.append(PerformanceRecord(pid, code, precs, budget))
    return records


def select_portfolio(records, k=None):
    """Per function, the algorithm with the lowest median-over-instances precision.

    Returns the de-duplicated winners in function order (at most one per
    function, truncated to ``k`` if given).
    """
    algos = list(dict.fromkeys(r.algo_id for r in records))
    table = {}
    for r in records:
        table.setdefault(r.problem.fid, {}).setdefault(r.algo_id, {})[(r.problem.iid, r.problem.dim)] = r.median_precision
    winners = []
    for fid in sorted(table):
        per_algo = table[fid]
        instances = sorted(set().union(*(v.keys() for v in per_algo.values())))
        for algo in algos:
            missing = [i for i in instances if i not in per_algo.get(algo, {})]
            if missing:
                gaps = ", ".join(f"(fid={fid}, iid={i[0]}, dim={i[1]})" for i in missing)
                raise ValidationError(f"no record for algo {algo} on {gaps}")
        medians = [np.median([per_algo[a][i] for i in instances]) for a in algos]
        winner = algos[int(np.argmin(medians))]
        if winner not in winners:
            winners.append(winner)
    if k is not None:
        winners = winners[:k]
    return winners


__all__ = [
    "CmaParams",
    "DEFAULT_PORTFOLIO",
    "ModuleConfig",
    "PerformanceRecord",
    "RunResult",
    "SLOTS",
    "enumerate_variants",
    "read_portfolio",
    "run",
    "run_portfolio",
    "select_portfolio",
    "write_portfolio",
]
