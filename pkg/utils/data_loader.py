"""
Document loading utilities
pydantic-validated run configuration, viewing, curve, profile and cost documents
"""

import json
import os
from dataclasses import dataclass
from typing import Any, List, Literal, Optional, Sequence, Tuple, Union

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from config import AppConfig, ContrastConfig, SpectralConfig, get_data_path
from modules.csf import CsfModel, build_csf
from modules.errors import ConfigurationError, FormatError
from modules.scheduler import ProfileSet, QualityMap, band_frequencies, default_patch_size
from modules.spectral import AttenuationCurve
from modules.viewing import ViewingConditions
from utils.image_io import atomic_write


# ---------------------------------------------------------------------------
# Document models
# ---------------------------------------------------------------------------

class ViewingDocument(BaseModel):
    """Display and observer setup"""

    model_config = ConfigDict(extra="forbid")

    diagonal_in: Optional[float] = Field(default=None, gt=0)
    diagonal_m: Optional[float] = Field(default=None, gt=0)
    res_w: int = Field(gt=0)
    res_h: int = Field(gt=0)
    peak_nits: float = Field(gt=0)
    black_nits: float = Field(ge=0)
    gamma: float = Field(default=2.2, gt=0)
    distance_cm: float = Field(gt=0)
    fps: float = Field(default=0.0, ge=0)

    @model_validator(mode="after")
    def check_diagonal(self) -> "ViewingDocument":
        if (self.diagonal_in is None) == (self.diagonal_m is None):
            raise ValueError("Give exactly one of diagonal_in or diagonal_m")
        return self

    def to_conditions(self) -> ViewingConditions:
        return ViewingConditions.from_dict(self.model_dump(exclude_none=True))


class CsfSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["default_analytic", "lookup_table"] = "default_analytic"
    table: Optional[str] = None
    overrides: dict[str, float] = Field(default_factory=dict)


class FitDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")

    a: float = Field(gt=0)
    b: float
    c: float
    rms: float = Field(default=0.0, ge=0)
    coarse: bool = False


class CurveDocument(BaseModel):
    """Attenuation curve file written by estimate-attenuation"""

    model_config = ConfigDict(extra="forbid")

    k: int = Field(ge=1)
    bin_freqs: List[float]
    samples: List[float]
    valid: Optional[List[bool]] = None
    aggregate: str = "mean"
    n_images: int = Field(default=0, ge=0)
    fit: Optional[FitDocument] = None

    @model_validator(mode="after")
    def check_lengths(self) -> "CurveDocument":
        n = len(self.bin_freqs)
        if n == 0 or len(self.samples) != n or (self.valid is not None and len(self.valid) != n):
            raise ValueError("bin_freqs, samples and valid must be nonempty and of equal length")
        return self


class SampledCurve(BaseModel):
    model_config = ConfigDict(extra="forbid")

    freqs: List[float]
    values: List[float]


class VariantEntry(BaseModel):
    """One entry of a profile set"""

    model_config = ConfigDict(extra="forbid")

    id: int = Field(ge=0)
    name: str
    cost_flops: float = Field(gt=0)
    atten: Optional[FitDocument] = None
    samples: Optional[SampledCurve] = None
    t_hat: Optional[List[float]] = None
    baseline_full: bool = False

    @field_validator("t_hat")
    @classmethod
    def check_t_hat(cls, v: Optional[List[float]]) -> Optional[List[float]]:
        if v is not None and len(v) != ContrastConfig.T_BANDS:
            raise ValueError(f"t_hat needs {ContrastConfig.T_BANDS} values, got {len(v)}")
        return v

    @model_validator(mode="after")
    def check_source(self) -> "VariantEntry":
        if self.atten is None and self.samples is None and self.t_hat is None:
            raise ValueError(f"Variant {self.id} needs atten, samples or t_hat")
        return self


class CostEntry(BaseModel):
    """Cost of one curve, given in --curves order to make-profiles"""

    model_config = ConfigDict(extra="forbid")

    id: int = Field(ge=0)
    name: str
    cost_flops: float = Field(gt=0)
    baseline_full: bool = False


class RunConfig(BaseModel):
    """Scheduling run: viewing setup, CSF, variants, patch size and pyramid depth"""

    model_config = ConfigDict(extra="forbid")

    viewing: Union[ViewingDocument, str]
    csf: CsfSettings = Field(default_factory=CsfSettings)
    variants: Union[List[VariantEntry], str]
    patch_size: Union[int, Literal["auto"]]
    receptive_field: Optional[int] = Field(default=None, gt=0)
    lowres_patch: Optional[int] = Field(default=None, gt=0)
    scale: int = 1
    levels: int = Field(default=ContrastConfig.DEFAULT_LEVELS, ge=ContrastConfig.T_BANDS)
    bands: Optional[List[float]] = None
    alpha: float = Field(default=ContrastConfig.ALPHA, gt=0)
    beta: float = Field(default=ContrastConfig.BETA, gt=0)
    threads: Optional[int] = Field(default=None, ge=0)

    @field_validator("scale")
    @classmethod
    def check_scale(cls, v: int) -> int:
        if v != 1 and v not in SpectralConfig.VALID_SCALES:
            raise ValueError(f"scale must be 1 or one of {SpectralConfig.VALID_SCALES}, got {v}")
        return v

    @field_validator("bands")
    @classmethod
    def check_bands(cls, v: Optional[List[float]]) -> Optional[List[float]]:
        if v is None:
            return v
        if len(v) != ContrastConfig.T_BANDS or any(f <= 0 for f in v) or sorted(v) != v:
            raise ValueError(f"bands must be {ContrastConfig.T_BANDS} ascending positive frequencies")
        return v

    @model_validator(mode="after")
    def check_patch_size(self) -> "RunConfig":
        if self.patch_size == "auto":
            if (self.receptive_field is None) == (self.lowres_patch is None):
                raise ValueError("patch_size 'auto' needs exactly one of receptive_field or lowres_patch")
            if self.scale not in SpectralConfig.VALID_SCALES:
                raise ValueError("patch_size 'auto' needs scale in (2, 4, 8)")
        elif self.patch_size < 1:
            raise ValueError(f"patch_size must be positive, got {self.patch_size}")
        return self


class HistogramEntry(BaseModel):
    id: int
    name: str
    cost_flops: float
    count: int
    fraction: float


class ReportDocument(BaseModel):
    """Per-image cost report"""

    image_width: int
    image_height: int
    patch_size: int
    grid_rows: int
    grid_cols: int
    n_patches: int
    cost_total: float
    cost_baseline: float
    ratio: float = Field(gt=0, le=1)
    baseline_id: int
    histogram: List[HistogramEntry]
    overhead_flops_per_patch: float
    overhead_flops: float
    ratio_with_overhead: float


class FrameSummary(BaseModel):
    frame: int
    cost_total: float
    cost_baseline: float
    ratio: float


class VideoReportDocument(BaseModel):
    """Aggregate report over a clip"""

    n_frames: int = Field(ge=2)
    fps: float = Field(gt=0)
    frames: List[FrameSummary]
    cost_total: float
    cost_baseline: float
    ratio: float = Field(gt=0, le=1)


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

@dataclass
class RunSetup:
    """Everything schedule_image needs, resolved from a RunConfig"""

    vc: ViewingConditions
    csf: CsfModel
    profiles: ProfileSet
    patch_size: int
    levels: int
    scale: int
    bands: List[float]
    alpha: float
    beta: float
    threads: Optional[int]


def _validation_message(e: ValidationError) -> str:
    parts = []
    for err in e.errors():
        location = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append(f"{location}: {err['msg']}")
    return "; ".join(parts)


class DataManager:
    """
    Document source management
    Reads and writes the JSON/CSV documents the commands exchange
    """

    @staticmethod
    def load_json(path: str) -> Any:
        if not os.path.exists(path):
            raise FileNotFoundError(f"File not found: {path}")
        try:
            with open(path, encoding="utf-8") as f:
                return json.load(f)
        except json.JSONDecodeError as e:
            raise FormatError(f"{path}: invalid JSON ({e.msg})", line=e.lineno) from e

    @staticmethod
    def save_json(path: str, payload: Any):
        with atomic_write(path, "w") as f:
            json.dump(payload, f, indent=2)
            f.write("\n")

    @staticmethod
    def validate(model, payload: Any, source: str = "document"):
        """Validate with a pydantic model, reporting failures as ConfigurationError"""
        try:
            return model.model_validate(payload)
        except ValidationError as e:
            raise ConfigurationError(f"{source}: {_validation_message(e)}") from e

    @staticmethod
    def load_viewing(source: Union[str, dict, ViewingDocument], base_dir: str = ".") -> ViewingConditions:
        """Viewing conditions from an inline object or a JSON file path"""
        if isinstance(source, ViewingDocument):
            return source.to_conditions()
        if isinstance(source, str):
            path = resolve_path(source, base_dir)
            source = DataManager.load_json(path)
        return DataManager.validate(ViewingDocument, source, "viewing").to_conditions()

    @staticmethod
    def load_curve(path: str) -> AttenuationCurve:
        doc = DataManager.validate(CurveDocument, DataManager.load_json(path), path)
        return AttenuationCurve.from_dict(doc.model_dump())

    @staticmethod
    def save_curve(path: str, curve: AttenuationCurve):
        payload = curve.to_dict()
        DataManager.validate(CurveDocument, payload, "curve")
        DataManager.save_json(path, payload)

    @staticmethod
    def load_profiles(source: Union[str, list], bands: Sequence[float], base_dir: str = ".") -> ProfileSet:
        """Profile set from a JSON list or a path to one"""
        if isinstance(source, str):
            source = DataManager.load_json(resolve_path(source, base_dir))
        if not isinstance(source, list):
            raise ConfigurationError("Variant profiles must be a JSON list")
        entries = [DataManager.validate(VariantEntry, e, f"variant[{i}]") for i, e in enumerate(source)]
        return ProfileSet.from_list([e.model_dump(exclude_none=True) for e in entries], bands)

    @staticmethod
    def load_costs(path: str) -> List[CostEntry]:
        payload = DataManager.load_json(path)
        if not isinstance(payload, list):
            raise ConfigurationError(f"{path}: costs must be a JSON list")
        return [DataManager.validate(CostEntry, e, f"{path}[{i}]") for i, e in enumerate(payload)]

    @staticmethod
    def load_run_config(path: str) -> RunSetup:
        """
        Resolve a run configuration file.

        Relative paths inside the file resolve against the file's directory.

        Args:
            path: Config JSON path

        Returns:
            RunSetup with viewing conditions, CSF, profiles and resolved patch size
        """
        cfg = DataManager.validate(RunConfig, DataManager.load_json(path), path)
        base_dir = os.path.dirname(os.path.abspath(path))

        vc = DataManager.load_viewing(cfg.viewing, base_dir)
        table = resolve_path(cfg.csf.table, base_dir) if cfg.csf.table else None
        csf = build_csf(cfg.csf.kind, table, cfg.csf.overrides)

        bands = cfg.bands or band_frequencies(ContrastConfig.T_BANDS, cfg.scale)
        profiles = DataManager.load_profiles(cfg.variants, bands, base_dir)

        if cfg.patch_size == "auto":
            patch_size = default_patch_size(cfg.scale, cfg.receptive_field, cfg.lowres_patch)
        else:
            patch_size = cfg.patch_size

        return RunSetup(
            vc=vc,
            csf=csf,
            profiles=profiles,
            patch_size=patch_size,
            levels=cfg.levels,
            scale=cfg.scale,
            bands=list(bands),
            alpha=cfg.alpha,
            beta=cfg.beta,
            threads=cfg.threads,
        )

    @staticmethod
    def read_pairs(listfile: str) -> List[Tuple[str, str]]:
        """(reference, reconstruction) paths, one whitespace-separated pair per line; '#' comments"""
        if not os.path.exists(listfile):
            raise FileNotFoundError(f"Pairs list not found: {listfile}")
        base_dir = os.path.dirname(os.path.abspath(listfile))
        pairs = []
        with open(listfile, encoding="utf-8") as f:
            for number, line in enumerate(f, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                parts = line.split()
                if len(parts) != 2:
                    raise FormatError(f"{listfile}: expected 'reference reconstruction'", line=number)
                pairs.append((resolve_path(parts[0], base_dir), resolve_path(parts[1], base_dir)))
        if not pairs:
            raise FormatError(f"{listfile}: no image pairs listed")
        return pairs

    @staticmethod
    def write_map_csv(path: str, qmap: QualityMap):
        with atomic_write(path, "w") as f:
            qmap.to_frame().to_csv(f, header=False, index=False)

    @staticmethod
    def read_map_csv(path: str) -> pd.DataFrame:
        return pd.read_csv(path, header=None)


def resolve_path(path: str, base_dir: str) -> str:
    """Absolute paths pass through; relative ones resolve against base_dir"""
    if os.path.isabs(path):
        return path
    return os.path.normpath(os.path.join(base_dir, path))


def load_default_viewing() -> ViewingConditions:
    """Bundled 27-inch 4K desktop setup"""
    return DataManager.load_viewing(get_data_path(AppConfig.DEFAULT_VIEWING_FILE))


def load_default_profiles(k: int = 4) -> ProfileSet:
    """Bundled five-variant ladder evaluated at the x`k` analysis bands"""
    return DataManager.load_profiles(get_data_path(AppConfig.DEFAULT_PROFILES_FILE), band_frequencies(k=k))
