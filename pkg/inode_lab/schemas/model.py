"""
Network and model-variant schemas
"""
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from inode_lab.schemas.solver import SolverSpec

Activation = Literal["tanh", "relu", "softplus"]
Variant = Literal["node", "inode", "sinode"]
Pathways = Literal["modulator", "content", "both"]


class MlpSpec(BaseModel):
    """Affine + activation stack; ``widths`` includes input and output widths."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    widths: List[int] = Field(..., min_length=3, description="[in, hidden..., out]")
    activation: Activation = "tanh"
    final_activation: Optional[Activation] = None

    @field_validator("widths")
    @classmethod
    def _positive(cls, v: List[int]) -> List[int]:
        if any(w < 1 for w in v):
            raise ValueError("all widths must be >= 1")
        return v

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1


class RnnSpec(BaseModel):
    """Single-layer gated recurrent encoder with a linear readout."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    input_dim: int = Field(..., ge=1)
    hidden_dim: int = Field(..., ge=1)
    output_dim: int = Field(..., ge=1)


class VariantConfig(BaseModel):
    """Which model to build and how it consumes the context frames."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    variant: Variant = "inode"
    pathways: Pathways = "modulator"
    q_x: int = Field(4, ge=1, description="Dynamic latent state dimension")
    q_c: int = Field(4, ge=1, description="Invariant (content/modulator) dimension")
    t_in: int = Field(3, ge=1, description="Frames for the initial-state encoder")
    t_inv: int = Field(10, ge=1, description="Frames for the invariant extractor")
    n_e: Optional[int] = Field(None, ge=1, description="Window length; defaults to max(3, t_in)")
    node_t_in: Optional[int] = Field(
        None, ge=1, description="Encoder frames of the NODE baseline; must equal t_inv"
    )
    solver: SolverSpec = Field(default_factory=SolverSpec)
    mc_samples: int = Field(1, ge=1, description="Monte-Carlo samples L during training")
    hidden: int = Field(64, ge=1, description="Hidden width of every network")
    ode_layers: int = Field(2, ge=1, description="Hidden layers of the differential function")
    activation: Activation = "tanh"

    @model_validator(mode="after")
    def _check_protocol(self) -> "VariantConfig":
        if self.t_inv < self.t_in:
            raise ValueError(f"t_inv ({self.t_inv}) must be >= t_in ({self.t_in})")
        if self.node_t_in is not None and self.node_t_in != self.t_inv:
            raise ValueError(
                f"node_t_in ({self.node_t_in}) must equal t_inv ({self.t_inv}) for a fair comparison"
            )
        if self.uses_modulator:
            if self.window_length < 3:
                raise ValueError(f"n_e ({self.window_length}) must be >= 3 when the modulator is active")
            if self.t_inv <= self.window_length:
                raise ValueError(f"t_inv ({self.t_inv}) must exceed n_e ({self.window_length})")
        return self

    @property
    def window_length(self) -> int:
        return self.n_e if self.n_e is not None else max(3, self.t_in)

    @property
    def is_node(self) -> bool:
        return self.variant == "node"

    @property
    def uses_content(self) -> bool:
        return not self.is_node and self.pathways in ("content", "both")

    @property
    def uses_modulator(self) -> bool:
        return not self.is_node and self.pathways in ("modulator", "both")

    @property
    def latent_dim(self) -> int:
        """NODE folds q_c into its state so all variants have the same latent budget."""
        return self.q_x + self.q_c if self.is_node else self.q_x

    @property
    def encoder_frames(self) -> int:
        """NODE sees as many frames as the invariant extractor of INODE/SINODE."""
        return self.t_inv if self.is_node else self.t_in

    @property
    def context_frames(self) -> int:
        return max(self.encoder_frames, self.t_inv)

    def for_variant(self, variant: str) -> "VariantConfig":
        return self.model_copy(update={"variant": variant})
