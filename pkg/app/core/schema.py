from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from typing import List, Dict, Literal, Optional, Any

from app.core.errors import ConfigError


RewardVariant = Literal["full", "simplified"]


class SynthConfig(BaseModel):
    """Configuration for the synthetic stage process and the simulated base predictor."""
    model_config = ConfigDict(extra="forbid")

    rules: str = Field("sleep", description="Builtin rule set name or path to a rules file")
    M: int = Field(32, description="Feature dimension of the simulated predictor", ge=1)
    T: int = Field(100, description="Trajectory length", ge=1)
    n_train: int = Field(200, description="Number of training trajectories", ge=1)
    n_test: int = Field(50, description="Number of test trajectories", ge=0)
    stay_prob: float = Field(0.85, description="Probability of persisting in the current stage", ge=0.0, le=1.0)
    predictor_error: float = Field(0.2, description="Per-step mislabel probability of the predictor", ge=0.0, le=1.0)
    violation_bias: float = Field(
        0.8, description="Fraction of predictor errors forced to create a rule violation", ge=0.0, le=1.0
    )
    feature_noise: float = Field(0.3, description="Std of the class-conditioned feature noise", ge=0.0)
    initial_label: Optional[str] = Field(None, description="Label every trajectory starts in (uniform if unset)")
    seed: int = Field(0, description="Generation seed", ge=0, lt=2**64)


class TrainConfig(BaseModel):
    """Hyperparameters of the rule layer and its training loop."""
    model_config = ConfigDict(extra="forbid")

    lr: float = Field(3e-4, description="Initial learning rate", gt=0.0)
    alpha: float = Field(1.0, description="Switch-penalty weight", ge=0.0)
    eta: float = Field(1.0, description="Softmax temperature of the policy", gt=0.0)
    epsilon: float = Field(0.1, description="Epsilon-greedy exploration rate", ge=0.0, le=1.0)
    epochs: int = Field(50, description="Number of training epochs", ge=1)
    reward_variant: RewardVariant = Field("full", description="Reward function variant")
    seed: int = Field(0, description="Training seed", ge=0, lt=2**64)
    lr_decay: float = Field(0.99, description="Per-epoch multiplicative learning-rate factor", gt=0.0, le=1.0)
    adam_beta1: float = Field(0.9, description="Adam first-moment decay", ge=0.0, lt=1.0)
    adam_beta2: float = Field(0.99, description="Adam second-moment decay", ge=0.0, lt=1.0)
    adam_eps: float = Field(1e-8, description="Adam numerical-stability epsilon", gt=0.0)
    policy_hidden: Optional[int] = Field(None, description="Policy hidden width (default 32 + 2K)", ge=1)
    baseline_hidden: int = Field(32, description="Baseline hidden width", ge=1)
    hidden_layers: int = Field(2, description="Hidden layers of both networks", ge=1)
    max_T: Optional[int] = Field(None, description="Segment trajectories to at most this length", ge=2)
    update_mode: Literal["trajectory", "epoch"] = Field(
        "trajectory", description="Apply one update per trajectory or one per epoch"
    )
    maintain_warmup_epochs: int = Field(
        1, description="Supervised passes imitating the predictor before policy-gradient training", ge=0
    )
    center_advantages: bool = Field(
        True, description="Centre G_t - b(s_t) within each episode before adding the switch penalty"
    )
    lr_grid: List[float] = Field(default_factory=lambda: [3e-5, 3e-4, 3e-3], description="Swept learning rates")
    alpha_grid: List[float] = Field(default_factory=lambda: [10.0, 1.0, 0.1], description="Swept alpha values")
    eta_grid: List[float] = Field(default_factory=lambda: [10.0, 1.0, 0.1], description="Swept temperatures")
    epsilon_grid: List[float] = Field(default_factory=lambda: [0.5, 0.1, 0.01], description="Swept epsilons")
    sweep_seeds: int = Field(10, description="Seeds per sweep cell", ge=1)

    @model_validator(mode="after")
    def _check_grids(self) -> "TrainConfig":
        for name in ("lr_grid", "eta_grid"):
            values = getattr(self, name)
            if not values or any(v <= 0 for v in values):
                raise ValueError(f"{name} must be a non-empty list of positive values")
        if not self.alpha_grid or any(v < 0 for v in self.alpha_grid):
            raise ValueError("alpha_grid must be a non-empty list of non-negative values")
        if not self.epsilon_grid or any(not 0.0 <= v <= 1.0 for v in self.epsilon_grid):
            raise ValueError("epsilon_grid values must lie in [0, 1]")
        return self


class PathsConfig(BaseModel):
    """File locations; unset paths default into the output directory layout."""
    model_config = ConfigDict(extra="forbid")

    out_dir: Optional[str] = Field(None, description="Output directory of the run")
    train: Optional[str] = Field(None, description="Training dataset file")
    test: Optional[str] = Field(None, description="Test dataset file")
    checkpoint: Optional[str] = Field(None, description="Rule layer checkpoint file")
    input: Optional[str] = Field(None, description="Dataset to correct")


class RunConfig(BaseModel):
    """Fully resolved configuration of one CLI invocation."""
    model_config = ConfigDict(extra="forbid")

    profile: Optional[Literal["sleep", "seizure"]] = Field(None, description="Builtin profile the defaults came from")
    synth: SynthConfig = Field(default_factory=SynthConfig, description="Synthetic data configuration")
    train: TrainConfig = Field(default_factory=TrainConfig, description="Training configuration")
    paths: PathsConfig = Field(default_factory=PathsConfig, description="File locations")


# Acceptance profiles: sleep staging with the full reward, seizure progression with
# the simplified reward.
PROFILES: Dict[str, Dict[str, Any]] = {
    "sleep": {
        "synth": {
            "rules": "sleep", "M": 32, "T": 100, "n_train": 200, "n_test": 50,
            "stay_prob": 0.85, "predictor_error": 0.2, "violation_bias": 0.8,
        },
        "train": {"reward_variant": "full"},
    },
    "seizure": {
        "synth": {
            "rules": "seizure", "M": 16, "T": 100, "n_train": 200, "n_test": 50,
            "stay_prob": 0.95, "predictor_error": 0.25, "violation_bias": 0.8,
            "initial_label": "Normal",
        },
        "train": {"reward_variant": "simplified"},
    },
}


def validate_run_config(data: dict) -> RunConfig:
    """
    Validate that the provided data conforms to the run configuration schema.

    Args:
        data: Dictionary containing the (merged) configuration

    Returns:
        RunConfig: Validated configuration object

    Raises:
        ConfigError: If validation fails; names the first offending field
    """
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(part) for part in first["loc"]) or None
        raise ConfigError(f"Invalid configuration: {first['msg']}", field=field)
