from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Tuple
import hashlib
import json

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from src.utility.config import DATASET_DIR
from src.utility.errors import ConfigError


class Architecture(str, Enum):
    BCDN = "BCdn"
    CONVENTIONAL_OWN_HISTORY = "ConventionalOwnHistory"
    CONVENTIONAL_RANDOM = "ConventionalRandom"


class Deployment(str, Enum):
    """Which world is simulated: every CP reads the shared ledger, or each CP stands alone."""

    BCDN = "bcdn"
    CONVENTIONAL = "conventional"


def _split_list(value):
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


class ScenarioConfig(BaseModel):
    # Trace source
    synthetic: bool = False
    dataset_dir: Optional[str] = None
    movies_path: Optional[str] = None
    ratings_path: Optional[str] = None
    window_start: Optional[int] = None
    window_end: Optional[int] = None
    ignored_genres: List[str] = Field(default_factory=lambda: ["IMAX"])
    n_contents: int = Field(1000, ge=1)
    n_requests: int = Field(20000, ge=0)
    n_users: int = Field(200, ge=1)
    zipf_s: float = Field(0.8, ge=0.0)

    # Experiment
    cp_count: int = Field(3, ge=1)
    per_cp: int = Field(200, ge=0)
    z_sweep: List[int] = Field(default_factory=lambda: [0, 25, 50, 100, 200])
    tau_ratio: float = 4.0
    seed: int = 0
    warmup_fraction: float = 0.5
    established_cps: List[str] = Field(default_factory=lambda: ["CP1"])
    deployments: List[Deployment] = Field(default_factory=lambda: [Deployment.BCDN, Deployment.CONVENTIONAL])
    conventional_overrides: Dict[str, Architecture] = Field(default_factory=dict)
    refresh_every: Optional[int] = Field(None, ge=1)

    # Protocol and ledger
    fast: bool = False
    fee: int = Field(1, ge=0)
    initial_balance: int = Field(10 ** 6, ge=0)
    n_validators: int = 4
    consensus_timeout: int = Field(50, ge=1)
    block_interval: int = Field(10, ge=1)
    crypto_scheme: Optional[str] = None

    @field_validator("z_sweep", "established_cps", "ignored_genres", "deployments", mode="before")
    @classmethod
    def split_comma_lists(cls, value):
        return _split_list(value)

    @field_validator("conventional_overrides", mode="before")
    @classmethod
    def parse_overrides(cls, value):
        # "CP2:ConventionalOwnHistory,CP3:ConventionalRandom"
        if isinstance(value, str):
            pairs = [item.split(":", 1) for item in _split_list(value)]
            if any(len(pair) != 2 for pair in pairs):
                raise ValueError(f"Expected CP:Architecture pairs, got '{value}'")
            return {cp.strip(): arch.strip() for cp, arch in pairs}
        return value

    @field_validator("tau_ratio")
    @classmethod
    def positive_tau(cls, value):
        if value <= 0:
            raise ValueError("tau_ratio must be > 0")
        return value

    @field_validator("warmup_fraction")
    @classmethod
    def open_unit_interval(cls, value):
        if not 0.0 < value < 1.0:
            raise ValueError("warmup_fraction must lie in (0, 1)")
        return value

    @field_validator("n_validators")
    @classmethod
    def three_f_plus_one(cls, value):
        if value < 1 or value % 3 != 1:
            raise ValueError(f"n_validators must be 3f+1, got {value}")
        return value

    @field_validator("crypto_scheme")
    @classmethod
    def known_scheme(cls, value):
        if value is not None and value not in ("sim", "standard"):
            raise ValueError(f"crypto_scheme must be 'sim' or 'standard', got '{value}'")
        return value

    @model_validator(mode="after")
    def check_consistency(self):
        bad = [z for z in self.z_sweep if z < 0 or z > self.per_cp]
        if bad:
            raise ValueError(f"Z values {bad} outside [0, per_cp={self.per_cp}]")
        known = set(self.cp_ids)
        strangers = sorted((set(self.established_cps) | set(self.conventional_overrides)) - known)
        if strangers:
            raise ValueError(f"Unknown CP id(s) {strangers}; CPs are {self.cp_ids}")
        if (self.window_start is None) != (self.window_end is None):
            raise ValueError("window_start and window_end must be given together")
        if self.window_start is not None and self.window_start >= self.window_end:
            raise ValueError("window_start must precede window_end")
        if self.synthetic and self.n_contents < self.cp_count * self.per_cp:
            raise ValueError(f"{self.n_contents} synthetic contents cannot fill {self.cp_count} x {self.per_cp}")
        if not self.synthetic and self.dataset_paths() is None:
            raise ValueError("No dataset: set movies_path/ratings_path, dataset_dir or BCDN_DATASET_DIR, or use synthetic")
        return self

    @property
    def cp_ids(self) -> List[str]:
        return [f"CP{m}" for m in range(1, self.cp_count + 1)]

    def dataset_paths(self) -> Optional[Tuple[Path, Path]]:
        if self.movies_path and self.ratings_path:
            return Path(self.movies_path), Path(self.ratings_path)
        directory = self.dataset_dir or DATASET_DIR
        if not directory:
            return None
        directory = Path(directory)
        ratings = next((directory / name for name in ("ratings.csv", "rating.csv") if (directory / name).exists()), None)
        return directory / "movies.csv", ratings or directory / "ratings.csv"

    def architecture_of(self, cp_id: str, deployment: Deployment) -> Architecture:
        if deployment == Deployment.BCDN:
            return Architecture.BCDN
        if cp_id in self.conventional_overrides:
            return self.conventional_overrides[cp_id]
        if cp_id in self.established_cps:
            return Architecture.CONVENTIONAL_OWN_HISTORY
        return Architecture.CONVENTIONAL_RANDOM

    def architectures_of(self, cp_id: str) -> List[Architecture]:
        seen = []
        for deployment in self.deployments:
            architecture = self.architecture_of(cp_id, deployment)
            if architecture not in seen:
                seen.append(architecture)
        return seen

    def run_id(self) -> str:
        """Digest of every field, stable across processes."""
        payload = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def load_scenario_config(values: dict) -> ScenarioConfig:
    """
    Builds a ScenarioConfig, turning validation failures into ConfigError.

    Raises:
        ConfigError: Listing every violated field.
    """
    try:
        return ScenarioConfig(**values)
    except ValidationError as e:
        problems = "; ".join(f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}" for err in e.errors())
        raise ConfigError(f"Invalid scenario config: {problems}") from e


class MetricsRow(BaseModel):
    cp: str
    architecture: Architecture
    z: int = Field(alias="Z")
    chr: float
    norm_delivery_time: float
    requests: int
    hits: int

    model_config = {"populate_by_name": True}


class FeatureShare(BaseModel):
    rank: int
    feature: str
    share: float


class MetricsReport(BaseModel):
    run_id: str
    tau_ratio: float
    rows: List[MetricsRow] = Field(default_factory=list)
    feature_ranking: List[FeatureShare] = Field(default_factory=list)
    blocks: int = 0
    contracts_committed: int = 0
    ledger_verified: bool = False
    ledger_reconciled: bool = False


class ConsensusDemoRequest(BaseModel):
    n_validators: int = 4
    silent: List[int] = Field(default_factory=list)
    equivocating: List[int] = Field(default_factory=list)
    blocks: int = Field(3, ge=1)
    timeout: int = Field(50, ge=1)
    drop_probability: float = Field(0.0, ge=0.0, lt=1.0)
    seed: int = 0


class ConsensusDemoResult(BaseModel):
    n_validators: int
    faulty: List[int]
    committed: int
    proposed: int
    max_commit_ticks: Optional[int]
    liveness_bound: int
    final_view: int
    safety_holds: bool
    dropped_messages: int
