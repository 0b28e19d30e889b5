"""Pipeline configuration: one declarative YAML/JSON file, CLI overrides on top."""

import copy
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import yaml

from .bench import CATALOG
from .ela import resolve_subset
from .errors import ValidationError
from .forest import ForestParams
from .modcma import DEFAULT_PORTFOLIO, ModuleConfig, enumerate_variants, read_portfolio
from .seeding import derive_seed
from .selector import CvConfig, default_threshold_grid

AUTO_SELECT = "auto-select"


@dataclass
class SuiteConfig:
    functions: list = field(default_factory=lambda: list(CATALOG))
    instances: list = field(default_factory=lambda: [1, 2, 3, 4])
    dim: int = 5


@dataclass
class PortfolioConfig:
    # path to a code file, "default" for the built-in 8 codes, or "auto-select"
    file: str = "default"
    budget: int = 500
    runs: int = 5
    # auto-select only: candidate code file, or "random" to sample variants
    candidates: str = "random"
    n_candidates: int = 48
    k: int = None


@dataclass
class FeatureConfig:
    n_samples: int = 2000
    reps: int = 50
    feature_subset: object = "selected-9"


@dataclass
class SelectionConfig:
    # "default" or an explicit list of positive thresholds
    threshold_grid: object = "default"
    metric: str = "log_rmse"


@dataclass
class PipelineConfig:
    suite: SuiteConfig = field(default_factory=SuiteConfig)
    portfolio: PortfolioConfig = field(default_factory=PortfolioConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    forest: ForestParams = field(default_factory=ForestParams)
    cv: CvConfig = field(default_factory=CvConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    seed: int = 0
    # directory relative paths are resolved against; not part of the hash
    base_dir: str = field(default=".", compare=False, repr=False)

    def to_dict(self):
        d = asdict(self)
        d.pop("base_dir")
        return d

    def resolve_path(self, path):
        return path if os.path.isabs(path) else os.path.normpath(os.path.join(self.base_dir, path))

    # ---------------------------------------------------------------- derived

    def threshold_grid(self):
        g = self.selection.threshold_grid
        return default_threshold_grid() if g == "default" else [float(x) for x in g]

    def feature_names(self):
        return resolve_subset(self.features.feature_subset)

    def portfolio_codes(self):
        """Codes from the portfolio file (None when auto-selecting)."""
        if self.portfolio.file == AUTO_SELECT:
            return None
        if self.portfolio.file == "default":
            return list(DEFAULT_PORTFOLIO)
        return [c.code for c in read_portfolio(self.resolve_path(self.portfolio.file))]

    def candidate_codes(self):
        """Codes that run-portfolio executes."""
        codes = self.portfolio_codes()
        if codes is not None:
            return codes
        if self.portfolio.candidates != "random":
            return [c.code for c in read_portfolio(self.resolve_path(self.portfolio.candidates))]
        variants = enumerate_variants()
        rng = np.random.default_rng(derive_seed(self.seed, "candidates"))
        idx = sorted(rng.choice(len(variants), size=self.portfolio.n_candidates, replace=False))
        return [variants[i].code for i in idx]

    def hash(self):
        """Stable digest of the effective config, including portfolio contents."""
        d = self.to_dict()
        try:
            d["portfolio_codes"] = self.candidate_codes()
        except (OSError, ValidationError):
            d["portfolio_codes"] = None
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    # ------------------------------------------------------------- validation

    def validate(self):
        s = self.suite
        if not s.functions or not s.instances:
            raise ValidationError("suite needs at least one function and one instance")
        unknown = [f for f in s.functions if f not in CATALOG]
        if unknown:
            raise ValidationError(f"unknown function ids {unknown}; known: {list(CATALOG)}")
        if len(set(s.functions)) != len(s.functions) or len(set(s.instances)) != len(s.instances):
            raise ValidationError("duplicate function or instance ids")
        if any(int(i) < 1 for i in s.instances) or int(s.dim) < 2:
            raise ValidationError("instances must be >= 1 and dim >= 2")
        p = self.portfolio
        if p.budget < 1 or p.runs < 1:
            raise ValidationError("portfolio budget and runs must be positive")
        if p.file not in (AUTO_SELECT, "default") and not os.path.isfile(self.resolve_path(p.file)):
            raise ValidationError(f"portfolio file not found: {p.file}")
        if p.file == AUTO_SELECT and p.candidates != "random":
            if not os.path.isfile(self.resolve_path(p.candidates)):
                raise ValidationError(f"candidate file not found: {p.candidates}")
        if p.file == AUTO_SELECT and p.candidates == "random" and not 1 <= p.n_candidates <= 4608:
            raise ValidationError("n_candidates must lie in [1, 4608]")
        for code in self.candidate_codes():
            ModuleConfig.from_code(code)
        f = self.features
        if f.reps < 1 or f.n_samples < 10 * s.dim:
            raise ValidationError(f"features need reps >= 1 and n_samples >= {10 * s.dim}")
        self.feature_names()
        if self.cv.k > len(s.instances):
            raise ValidationError(f"cv.k={self.cv.k} exceeds the {len(s.instances)} instances per function")
        grid = self.threshold_grid()
        if not grid or any(not t > 0 for t in grid):
            raise ValidationError("threshold grid must be non-empty and positive")
        if self.selection.metric not in ("rmse", "log_rmse"):
            raise ValidationError("selection.metric must be rmse or log_rmse")
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError("seed must be an unsigned 64-bit integer")
        return self


_SECTIONS = {
    "suite": SuiteConfig,
    "portfolio": PortfolioConfig,
    "features": FeatureConfig,
    "forest": ForestParams,
    "cv": CvConfig,
    "selection": SelectionConfig,
}


def from_dict(data, base_dir="."):
    data = copy.deepcopy(data or {})
    if not isinstance(data, dict):
        raise ValidationError("config must be a mapping")
    unknown = set(data) - set(_SECTIONS) - {"seed"}
    if unknown:
        raise ValidationError(f"unknown config sections {sorted(unknown)}")
    kwargs = {}
    for name, cls in _SECTIONS.items():
        section = data.get(name) or {}
        allowed = {f.name for f in fields(cls)}
        bad = set(section) - allowed
        if bad:
            raise ValidationError(f"unknown keys in [{name}]: {sorted(bad)}")
        try:
            kwargs[name] = cls(**section)
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"[{name}]: {exc}") from None
    return PipelineConfig(**kwargs, seed=int(data.get("seed", 0)), base_dir=base_dir)


def load(path=None, overrides=None):
    """Read a config file (YAML or JSON) and apply dotted-key overrides."""
    data, base = {}, "."
    if path is not None:
        if not os.path.isfile(path):
            raise ValidationError(f"config file not found: {path}")
        with open(path, encoding="utf-8") as fh:
            try:
                data = yaml.safe_load(fh) or {}
            except yaml.YAMLError as exc:
                raise ValidationError(f"cannot parse {path}: {exc}") from None
        base = os.path.dirname(os.path.abspath(path))
    for key, value in (overrides or {}).items():
        node = data
        *parents, leaf = key.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    return from_dict(data, base_dir=base)
