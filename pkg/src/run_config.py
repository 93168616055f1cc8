"""
Run Config Models - Pydantic models validating one CLI run.

Values are merged from three layers, highest first:
- explicit command-line flags
- a JSON run document (``--config``), keys spelled with dashes or underscores
- process Settings (``KVW_*`` environment / ``.env``)
"""
import json
from pathlib import Path
from typing import Any, ClassVar, Dict, List, Literal, Optional, Tuple, Type, TypeVar

from pydantic import BaseModel, ConfigDict, DirectoryPath, Field, FilePath, ValidationError, field_validator, model_validator

from config.settings import Settings
from src.coefficients.extract import CoefficientMode
from src.errors import ConfigurationError
from src.kvw.unlearn import KvwConfig
from src.model.config import ModelConfig

DEFAULT_METHODS = [
    "kvw", "ga", "gd", "kl", "npo", "lora_variant",
    "ga_full", "gd_full", "kl_full", "npo_full", "mmu", "oracle_retrain",
]

R = TypeVar("R", bound="RunConfig")


def _split_list(value: Any) -> Any:
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


class RunConfig(BaseModel):
    """Fields shared by every subcommand."""
    model_config = ConfigDict(extra="forbid")

    seed: int = Field(default=0, description="Seed recorded in every artifact")
    workers: int = Field(default=1, ge=1, description="Worker threads")

    # Paths whose parent directory is created before work starts
    output_files: ClassVar[Tuple[str, ...]] = ()
    # Paths created as directories before work starts
    output_dirs: ClassVar[Tuple[str, ...]] = ()

    def prepare_outputs(self) -> None:
        for name in self.output_files:
            path = getattr(self, name)
            if path is not None:
                Path(path).parent.mkdir(parents=True, exist_ok=True)
        for name in self.output_dirs:
            path = getattr(self, name)
            if path is not None:
                Path(path).mkdir(parents=True, exist_ok=True)


class KvwRunMixin(BaseModel):
    """Flags that map one-to-one onto KvwConfig."""
    gamma: float = Field(default=0.5, ge=0, description="Weakening strength")
    start_layer: int = Field(default=0, ge=0)
    end_layer: Optional[int] = Field(default=None, ge=0, description="Last edited layer (default: last)")
    eps: float = Field(default=1e-8, gt=0)
    batch_size: int = Field(default=1, ge=1)
    all_positions: bool = Field(default=False, description="Extract over every position, not only answers")
    mode: Literal["abs", "clamp"] = "abs"
    no_retain: bool = Field(default=False, description="Use the forget layer mean instead of retain coefficients")

    def kvw_config(self, **changes) -> KvwConfig:
        cfg = KvwConfig(
            gamma=self.gamma,
            start_layer=self.start_layer,
            end_layer=self.end_layer,
            eps=self.eps,
            ans_only=not self.all_positions,
            use_retain=not self.no_retain,
            batch_size=self.batch_size,
            mode=CoefficientMode(self.mode),
        )
        return cfg.replace(**changes) if changes else cfg


# ==================== Suite Models ====================

class BuildSynthConfig(RunConfig):
    """Arguments of ``build-synth``."""
    out: Path = Field(default=Path("data/suite"), description="Suite directory")
    n_forget: int = Field(default=5, ge=1)
    n_retain: int = Field(default=20, ge=1)
    n_neighbors: Optional[int] = Field(default=None, ge=0)
    n_relations: int = Field(default=4, ge=1)
    planted_layer: Optional[int] = Field(default=None, ge=0)
    num_layers: int = Field(default=4, ge=1)
    d_model: int = Field(default=64, ge=1)
    ffn_dim: int = Field(default=256, ge=1)
    num_heads: int = Field(default=4, ge=1)
    vocab_size: int = Field(default=512, ge=2)
    max_seq_len: int = Field(default=16, ge=3)

    output_dirs: ClassVar[Tuple[str, ...]] = ("out",)

    def suite_model_config(self) -> ModelConfig:
        return ModelConfig(
            num_layers=self.num_layers,
            d_model=self.d_model,
            ffn_dim=self.ffn_dim,
            num_heads=self.num_heads,
            vocab_size=self.vocab_size,
            max_seq_len=self.max_seq_len,
        )


class PrecomputeRetainConfig(RunConfig):
    """Arguments of ``precompute-retain``."""
    model: FilePath
    retain: FilePath
    out: Path
    all_positions: bool = False
    mode: Literal["abs", "clamp"] = "abs"

    output_files: ClassVar[Tuple[str, ...]] = ("out",)


class UnlearnConfig(KvwRunMixin, RunConfig):
    """Arguments of ``unlearn``."""
    model: FilePath
    forget: FilePath
    retain_cache: Optional[FilePath] = None
    out: Path

    output_files: ClassVar[Tuple[str, ...]] = ("out",)

    @model_validator(mode="after")
    def _retain_is_explicit(self) -> "UnlearnConfig":
        if self.retain_cache is None and not self.no_retain:
            raise ValueError("--retain-cache is required unless --no-retain is given")
        return self

    @property
    def report_path(self) -> Path:
        return self.out.with_name(self.out.name + ".report.json")


# ==================== Evaluation Models ====================

class EvalConfig(RunConfig):
    """Arguments of ``eval``."""
    suite: FilePath
    model: Optional[FilePath] = Field(default=None, description="Edited model (default: the suite model)")
    out: Optional[Path] = Field(default=None, description="JSON recall report")

    output_files: ClassVar[Tuple[str, ...]] = ("out",)


class SweepConfig(KvwRunMixin, RunConfig):
    """Arguments of ``sweep``."""
    suite: FilePath
    kind: Literal["gamma", "layer", "ablation", "two-fold"] = "gamma"
    gamma_list: List[float] = Field(default_factory=lambda: [0.0, 0.03, 0.1, 0.2, 0.3, 0.5, 0.7, 1.5, 3.0, 5.0])
    floor: float = Field(default=0.95, gt=0, le=1, description="Retain floor relative to vanilla")
    bucket_count: int = Field(default=8, ge=1)
    report_dir: Path = Path("data/reports")
    name: Optional[str] = Field(default=None, description="Report file stem (default: the sweep kind)")

    output_dirs: ClassVar[Tuple[str, ...]] = ("report_dir",)

    @field_validator("gamma_list", mode="before")
    @classmethod
    def _parse_gamma_list(cls, value: Any) -> Any:
        return _split_list(value)

    @property
    def report_name(self) -> str:
        return self.name or self.kind.replace("-", "_")


class ReportConfig(RunConfig):
    """Arguments of ``report``."""
    sweep_dir: DirectoryPath


class CostConfig(RunConfig):
    """Arguments of ``cost``."""
    suite: Optional[FilePath] = Field(default=None, description="Take the model shape and set sizes from a suite")
    num_layers: int = Field(default=4, ge=1)
    d_model: int = Field(default=64, ge=1)
    ffn_dim: int = Field(default=256, ge=1)
    num_heads: int = Field(default=4, ge=1)
    vocab_size: int = Field(default=512, ge=1)
    max_seq_len: int = Field(default=16, ge=1)
    ffn_variant: Literal["plain", "gated"] = "plain"
    forget_size: int = Field(default=5, ge=1)
    retain_size: int = Field(default=20, ge=1)
    seq_len: int = Field(default=3, ge=1)
    batch_size: int = Field(default=1, ge=1)
    epochs: int = Field(default=1, ge=1)
    rank: int = Field(default=8, ge=1)
    methods: List[str] = Field(default_factory=lambda: list(DEFAULT_METHODS))
    report_dir: Path = Path("data/reports")
    name: str = "cost"

    output_dirs: ClassVar[Tuple[str, ...]] = ("report_dir",)

    @field_validator("methods", mode="before")
    @classmethod
    def _parse_methods(cls, value: Any) -> Any:
        return _split_list(value)


# ==================== Loading ====================

def settings_defaults(settings: Settings) -> Dict[str, Any]:
    """Run-config defaults taken from process settings."""
    return {
        "seed": settings.default_seed,
        "workers": settings.workers,
        "eps": settings.eps,
        "batch_size": settings.batch_size,
        "floor": settings.retain_floor,
        "bucket_count": settings.bucket_count,
        "gamma_list": list(settings.gamma_grid),
        "report_dir": settings.report_dir,
        "sweep_dir": settings.report_dir,
    }


def read_document(path: Optional[Path]) -> Dict[str, Any]:
    """Load a JSON run document; dashed keys are normalized to underscores."""
    if path is None:
        return {}
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"run config not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            document = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"run config {path} is not valid JSON: {e}")
    if not isinstance(document, dict):
        raise ConfigurationError(f"run config {path} must hold a JSON object")
    return {str(key).replace("-", "_"): value for key, value in document.items()}


def load_run_config(
    model_cls: Type[R],
    explicit: Dict[str, Any],
    document: Optional[Path] = None,
    settings: Optional[Settings] = None,
) -> R:
    """
    Merge flags, the run document and settings into a validated model.

    Args:
        model_cls: RunConfig subclass of the subcommand
        explicit: Flags the user actually passed
        document: Optional JSON run document
        settings: Process settings (fresh instance when omitted)

    Returns:
        Validated run configuration with output directories created

    Raises:
        ConfigurationError: Unknown keys, missing inputs or invalid values.
    """
    settings = settings or Settings()
    fields = model_cls.model_fields
    merged = {k: v for k, v in settings_defaults(settings).items() if k in fields}
    merged.update(read_document(document))
    merged.update(explicit)
    try:
        run = model_cls(**merged)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}" for err in e.errors()
        )
        raise ConfigurationError(f"invalid {model_cls.__name__}: {problems}")
    run.prepare_outputs()
    return run
