"""Pydantic request/response models for the assessment service.

These schemas double as the experiment-configuration format: the CLI loads
a config file, validates it against these models, and dispatches the
resulting requests to the service handlers.
"""

from __future__ import annotations

from typing import Literal, Optional, Union

from pydantic import BaseModel, Field, field_validator, model_validator


class ModelSpecModel(BaseModel):
    kind: Literal["logistic", "mlp"] = "logistic"
    hidden: list[int] = []

    @model_validator(mode="after")
    def check_hidden(self):
        if self.kind == "logistic" and self.hidden:
            raise ValueError("logistic models take no hidden widths")
        if self.kind == "mlp" and not self.hidden:
            raise ValueError("mlp needs at least one hidden width")
        return self


class TrainConfigModel(BaseModel):
    local_epochs: int = Field(3, ge=0)
    batch_size: int = Field(16, ge=1)
    learning_rate: float = Field(0.4, ge=0.0)


class SyntheticSource(BaseModel):
    kind: Literal["synthetic"] = "synthetic"
    classes: int = Field(2, ge=2)
    rows: int = Field(320, ge=4)
    features: int = Field(2, ge=1)
    separation: float = Field(4.0, gt=0.0)


class CsvSource(BaseModel):
    kind: Literal["csv"]
    path: str
    label_column: str


DataSource = Union[SyntheticSource, CsvSource]


class DishonestClientModel(BaseModel):
    client_id: int = Field(ge=0)
    window: tuple[int, int]
    flip_probability: float = Field(0.5, ge=0.0, le=1.0)

    @field_validator("window")
    @classmethod
    def check_window(cls, window):
        if window[0] < 1 or window[0] > window[1]:
            raise ValueError(f"bad poison window {window}")
        return window


class ScenarioModel(BaseModel):
    num_clients: int = Field(ge=1)
    epochs: int = Field(ge=1)
    fraction: float = Field(0.5, gt=0.0, le=1.0)
    beta: Optional[float] = Field(None, gt=0.0,
                                  description="Dirichlet concentration; None = equal split")
    validation_fraction: float = Field(0.25, gt=0.0, lt=1.0)
    data: DataSource = Field(default_factory=SyntheticSource, discriminator="kind")
    model: ModelSpecModel = ModelSpecModel()
    train: TrainConfigModel = TrainConfigModel()
    dishonest: list[DishonestClientModel] = []

    @model_validator(mode="after")
    def check_dishonest(self):
        for client in self.dishonest:
            if client.client_id >= self.num_clients:
                raise ValueError(f"dishonest client {client.client_id} out of range")
            if client.window[1] > self.epochs:
                raise ValueError(f"poison window {client.window} exceeds run length")
        return self


class MethodModel(BaseModel):
    kind: Literal["exact", "monte_carlo", "plugin"] = "exact"
    samples: int = Field(500, ge=1)
    seed: int = 0
    rescale: bool = True
    name: str = "complementary"


class ScheduleOptionsModel(BaseModel):
    solver: Literal["one_sided", "two_sided_exact", "two_sided_lb",
                    "exhaustive"] = "one_sided"
    k: Optional[int] = Field(None, ge=0)
    k_ratio: Optional[float] = Field(None, gt=0.0, le=1.0)
    gamma: float = Field(0.5, ge=0.0)
    normalize_terms: bool = True
    exhaustive_kind: Literal["one_sided", "two_sided", "two_sided_lb"] = "two_sided"

    @model_validator(mode="after")
    def check_budget(self):
        if (self.k is None) == (self.k_ratio is None):
            raise ValueError("give exactly one of k and k_ratio")
        return self

    def budget(self, num_epochs: int) -> int:
        if self.k is not None:
            return min(self.k, num_epochs)
        return max(1, min(num_epochs, round(self.k_ratio * num_epochs)))


class AssessmentModel(BaseModel):
    utility: Literal["neg_loss", "accuracy"] = "neg_loss"
    method: MethodModel = MethodModel()
    schedule: Optional[ScheduleOptionsModel] = None


class DetectionModel(BaseModel):
    window: tuple[int, int]
    hazard: float = Field(0.1, gt=0.0, lt=1.0)
    noise_scale: Optional[float] = Field(None, gt=0.0)
    mean_scale: Optional[float] = Field(None, gt=0.0)
    k_clusters: int = Field(2, ge=2)
    seed: int = 0


class CompareGridModel(BaseModel):
    num_clients: list[int] = [4]
    epochs: list[int] = [12]
    seeds: list[int] = [0, 1, 2]
    fraction: float = Field(0.5, gt=0.0, le=1.0)
    data: SyntheticSource = SyntheticSource()
    train: TrainConfigModel = TrainConfigModel()
    utility: Literal["neg_loss", "accuracy"] = "neg_loss"
    mc_samples: list[int] = [200]
    k_ratios: list[float] = [0.5]
    solver: Literal["one_sided", "two_sided_exact", "two_sided_lb"] = "one_sided"
    gamma: float = Field(0.5, ge=0.0)
    parallelism: int = Field(1, ge=1)


class ExperimentConfig(BaseModel):
    """One experiment file: scenario plus optional assessment/detection/compare."""

    scenario: Optional[ScenarioModel] = None
    assessment: AssessmentModel = AssessmentModel()
    detection: Optional[DetectionModel] = None
    compare: Optional[CompareGridModel] = None
    seeds: list[int] = Field([0], min_length=1)
    cutoff_seconds: Optional[float] = Field(None, gt=0.0)


# --- requests/responses -----------------------------------------------------


class SimulateRequest(BaseModel):
    scenario: ScenarioModel
    seed: int = 0
    meta: dict = {}


class SimulateResponse(BaseModel):
    log_document: str
    manifest: dict


class AssessRequest(BaseModel):
    log_document: str
    assessment: AssessmentModel = AssessmentModel()
    cutoff_seconds: Optional[float] = Field(None, gt=0.0)
    meta: dict = {}


class AssessResponse(BaseModel):
    status: Literal["ok", "partial"]
    timeline_csv: str
    summary: str
    timing: dict


class ScheduleRequest(BaseModel):
    log_document: str
    utility: Literal["neg_loss", "accuracy"] = "neg_loss"
    options: ScheduleOptionsModel
    meta: dict = {}


class ScheduleResponse(BaseModel):
    schedule_document: str


class DetectRequest(BaseModel):
    timeline_csv: str
    detection: DetectionModel
    dishonest_truth: Optional[list[int]] = None
    meta: dict = {}


class DetectResponse(BaseModel):
    report: str


class CompareRequest(BaseModel):
    grid: CompareGridModel
    cutoff_seconds: Optional[float] = Field(None, gt=0.0)
    meta: dict = {}


class CompareResponse(BaseModel):
    status: Literal["ok", "partial"]
    tables: dict[str, str]
    timing_tables: dict[str, str]
