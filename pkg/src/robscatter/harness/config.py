"""Experiment configuration and defaults."""

from dataclasses import asdict, dataclass, field

from ..errors import ScatterError

FIG1 = "fig1"
FIG2A = "fig2a"
FIG2B = "fig2b"
FIG3 = "fig3"
FIG4 = "fig4"
COEFFS = "coeffs"
ESTIMATE = "estimate"
SAMPLE = "sample"

FIGURES = (FIG1, FIG2A, FIG2B, FIG3, FIG4)
EXPERIMENTS = FIGURES + (COEFFS, ESTIMATE, SAMPLE)

FIG1_K_GRID = (10, 12, 14, 17, 20, 24, 29, 35, 41, 49, 59, 70, 84, 100, 119, 143, 170, 203,
               242, 289, 346, 412, 492, 588, 702, 838, 1000, 1194, 1425, 1701, 2031, 2424,
               2894, 3455, 4125, 4924)
FIG2_M_GRID = (3, 5, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100)
FIG3_K_GRID = (20, 53, 141, 376, 1000)

DEFAULT_RUNS = 10_000
MIN_RUNS = 100

_DEFAULTS = {
    FIG1: dict(m=(5,), K=FIG1_K_GRID),
    FIG2A: dict(m=FIG2_M_GRID, K=(1000,)),
    FIG2B: dict(m=FIG2_M_GRID, K=(1000,)),
    FIG3: dict(m=(10,), K=FIG3_K_GRID),
    FIG4: dict(m=(10,), K=(100,)),
}


class ConfigError(ScatterError, ValueError):
    """An experiment configuration violates its invariants."""


@dataclass
class ExperimentConfig:
    """Parameters of one harness run.

    ``m`` and ``K`` are tuples so grid experiments share one type; figure
    experiments sweep the grid of their swept axis. ``runs=None`` means
    ``10 * K`` for fig1 and 10^4 otherwise.
    """

    experiment: str
    m: tuple = ()
    K: tuple = ()
    nu: float = 2.0
    rho: float = 0.0
    q: float = 0.95
    contamination: float = 0.05
    runs: int | None = None
    seed: int = 0
    output_path: str | None = None
    output_format: str = "csv"
    panel: str = "both"
    test_point: str = "core"
    bins: int = 60
    coeff_draws: int = 10**6
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        defaults = _DEFAULTS.get(self.experiment, {})
        self.m = tuple(int(v) for v in (self.m or defaults.get("m", ())))
        self.K = tuple(int(v) for v in (self.K or defaults.get("K", ())))
        self.validate()

    def validate(self):
        for m in self.m:
            if m < 2:
                raise ConfigError(f"m must be >= 2, got {m}")
        for K in self.K:
            for m in self.m:
                if K <= m:
                    raise ConfigError(f"K must exceed m (K={K}, m={m})")
        if self.experiment in FIGURES:
            if not self.m or not self.K:
                raise ConfigError("figure experiments need m and K")
            if self.runs is not None and self.runs < MIN_RUNS:
                raise ConfigError(f"runs must be >= {MIN_RUNS} for figure experiments")
        if not 0.0 <= self.rho < 1.0:
            raise ConfigError(f"rho must lie in [0, 1), got {self.rho}")
        if not self.nu > 0:
            raise ConfigError(f"nu must be > 0, got {self.nu}")
        if not 0.0 < self.q < 1.0:
            raise ConfigError(f"q must lie in (0, 1), got {self.q}")
        if not 0.0 < self.contamination < 1.0:
            raise ConfigError("contamination must lie in (0, 1)")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.output_format not in ("csv", "json"):
            raise ConfigError(f"unknown output format {self.output_format!r}")
        if self.panel not in ("tyler", "huber", "both"):
            raise ConfigError(f"unknown panel {self.panel!r}")
        if self.test_point not in ("core", "observed"):
            raise ConfigError(f"unknown test point {self.test_point!r}")
        if self.bins < 1:
            raise ConfigError("bins must be >= 1")

    def runs_for(self, K):
        if self.runs is not None:
            return int(self.runs)
        return 10 * int(K) if self.experiment == FIG1 else DEFAULT_RUNS

    def echo(self):
        d = asdict(self)
        # the destination is not part of the result; leaving it out keeps output path-independent
        d.pop("output_path")
        d["m"] = list(self.m)
        d["K"] = list(self.K)
        d["runs_rule"] = "10*K" if self.experiment == FIG1 and self.runs is None else (
            "default 10000" if self.runs is None else "explicit")
        return d
