"""
Latent ODE model variants: NODE, INODE and SINODE.

All three share one code path. INODE/SINODE add per-sequence time-invariant
variables obtained by averaging learned embeddings over the context frames:
a content variable ``c`` fed to the decoder and a dynamics modulator ``m``
concatenated with the latent state as input to the differential function.
SINODE differs from INODE only in its training objective.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from inode_lab.core.exceptions import ConfigError, ContractError, ShapeError
from inode_lab.models import nets
from inode_lab.models.nets import ParamMap
from inode_lab.models.params import ModelParams
from inode_lab.numerics import diffnum
from inode_lab.numerics.diffnum import ArrayLike, value_of
from inode_lab.numerics.odeint import VectorField, integrate
from inode_lab.schemas.model import MlpSpec, RnnSpec, VariantConfig
from inode_lab.schemas.solver import TimeGrid

logger = logging.getLogger(__name__)

SIGMA_OBS_INIT = 0.1
SIGMA_PARAM = "xi.raw_sigma"


@dataclass(frozen=True)
class GaussianPosterior:
    """Diagonal Gaussian q(x_1 | y) over the latent initial state."""
    mean: ArrayLike
    log_var: ArrayLike

    @property
    def variance(self) -> ArrayLike:
        return diffnum.exp(self.log_var)

    def sample(self, eps: np.ndarray) -> ArrayLike:
        """Reparameterised draw mean + exp(log_var / 2) * eps."""
        return self.mean + diffnum.exp(0.5 * self.log_var) * eps


@dataclass(frozen=True)
class InvariantPair:
    """Per-sequence content ``c`` and modulator ``m``; inactive pathways hold zeros."""
    c: ArrayLike
    m: ArrayLike
    content_active: bool
    modulator_active: bool


@dataclass(frozen=True)
class ModelSpecs:
    encoder: RnnSpec
    content: Optional[MlpSpec]
    modulator: Optional[RnnSpec]
    dynamics: MlpSpec
    decoder: MlpSpec


@dataclass
class Forward:
    """Outputs of one conditioned pass; time is the leading axis."""
    y_mean: ArrayLike            # [T, L*B, D]
    latents: ArrayLike           # [T, L*B, q]
    posterior: GaussianPosterior  # rows [B, q]
    invariants: InvariantPair


@dataclass
class Rollout:
    samples: np.ndarray   # [L, B, T, D]
    latents: np.ndarray   # [L, B, T, q]
    invariants: InvariantPair

    @property
    def mean_prediction(self) -> np.ndarray:
        return self.samples.mean(axis=0)


def build_specs(cfg: VariantConfig, data_dim: int) -> ModelSpecs:
    h = cfg.hidden
    q = cfg.latent_dim
    content = (
        MlpSpec(widths=[data_dim, h, cfg.q_c], activation=cfg.activation) if cfg.uses_content else None
    )
    modulator = (
        RnnSpec(input_dim=data_dim, hidden_dim=h, output_dim=cfg.q_c) if cfg.uses_modulator else None
    )
    dyn_in = q + (cfg.q_c if cfg.uses_modulator else 0)
    dec_in = q + (cfg.q_c if cfg.uses_content else 0)
    return ModelSpecs(
        encoder=RnnSpec(input_dim=data_dim, hidden_dim=h, output_dim=h),
        content=content,
        modulator=modulator,
        dynamics=MlpSpec(widths=[dyn_in] + [h] * cfg.ode_layers + [q], activation=cfg.activation),
        decoder=MlpSpec(widths=[dec_in, h, data_dim], activation=cfg.activation),
    )


class LatentODE:
    """Assembles encoder, invariant extractors, differential function and decoder."""

    def __init__(self, cfg: VariantConfig, data_dim: int):
        if data_dim < 1:
            raise ContractError("data_dim must be >= 1")
        self.cfg = cfg
        self.data_dim = data_dim
        self.specs = build_specs(cfg, data_dim)

    # -- parameters ---------------------------------------------------------

    def layout(self) -> Dict[str, Tuple[int, ...]]:
        s = self.specs
        q = self.cfg.latent_dim
        layout = nets.rnn_layout(s.encoder, "nu.rnn")
        layout["nu.mean.w"] = (s.encoder.output_dim, q)
        layout["nu.mean.b"] = (q,)
        layout["nu.logvar.w"] = (s.encoder.output_dim, q)
        layout["nu.logvar.b"] = (q,)
        if s.content is not None:
            layout.update(nets.mlp_layout(s.content, "psi.content"))
        if s.modulator is not None:
            layout.update(nets.rnn_layout(s.modulator, "psi.modulator"))
        layout.update(nets.mlp_layout(s.dynamics, "theta.f"))
        layout.update(nets.mlp_layout(s.decoder, "xi.g"))
        layout[SIGMA_PARAM] = (1,)
        return layout

    def init_params(self, seed: int) -> ModelParams:
        return nets.init_params(
            self.layout(), seed, constants={SIGMA_PARAM: diffnum.inverse_softplus(SIGMA_OBS_INIT)}
        )

    def observation_sigma(self, params: ParamMap) -> ArrayLike:
        return diffnum.softplus(params[SIGMA_PARAM])

    # -- inference ----------------------------------------------------------

    def _check_frames(self, y: np.ndarray, what: str, minimum: int = 1) -> np.ndarray:
        y = np.asarray(value_of(y), dtype=np.float64)
        if y.ndim != 3 or y.shape[-1] != self.data_dim:
            raise ShapeError(what, y.shape, (None, None, self.data_dim))
        if y.shape[1] < minimum:
            raise ContractError(f"{what}: needs at least {minimum} frames, got {y.shape[1]}")
        return y

    def encode_initial(self, params: ParamMap, y: np.ndarray) -> GaussianPosterior:
        """q(x_1 | y_1..T) for frames ``y`` [B, T, D]."""
        y = self._check_frames(y, "encode_initial")
        feat = nets.rnn_encode(self.specs.encoder, params, y, "nu.rnn")
        mean = diffnum.matmul(feat, params["nu.mean.w"]) + params["nu.mean.b"]
        log_var = diffnum.matmul(feat, params["nu.logvar.w"]) + params["nu.logvar.b"]
        return GaussianPosterior(mean=mean, log_var=log_var)

    def content_embeddings(self, params: ParamMap, y: np.ndarray) -> ArrayLike:
        """g(y_i) for every frame: [B, T, q_c]."""
        if self.specs.content is None:
            raise ContractError("content pathway is not active for this model")
        y = self._check_frames(y, "content_embeddings")
        b, t, d = y.shape
        flat = nets.mlp_forward(self.specs.content, params, y.reshape(b * t, d), "psi.content")
        return diffnum.reshape(flat, (b, t, self.cfg.q_c))

    def modulator_embeddings(self, params: ParamMap, y: np.ndarray, n_e: Optional[int] = None) -> ArrayLike:
        """g(y_i..i+N_e) for the T - N_e leading windows: [B, T - N_e, q_c]."""
        if self.specs.modulator is None:
            raise ContractError("modulator pathway is not active for this model")
        n_e = n_e if n_e is not None else self.cfg.window_length
        y = self._check_frames(y, "modulator_embeddings")
        b, t, d = y.shape
        n_windows = t - n_e
        if n_windows < 1:
            raise ConfigError(f"need more than n_e={n_e} frames, got {t}", field="model.t_inv")
        windows = np.stack([y[:, i: i + n_e] for i in range(n_windows)], axis=1)
        flat = nets.rnn_encode(
            self.specs.modulator, params, windows.reshape(b * n_windows, n_e, d), "psi.modulator"
        )
        return diffnum.reshape(flat, (b, n_windows, self.cfg.q_c))

    def extract_content(self, params: ParamMap, y: np.ndarray) -> ArrayLike:
        """c = mean_i g(y_i) over the given frames."""
        return diffnum.mean(self.content_embeddings(params, y), axis=1)

    def extract_modulator(self, params: ParamMap, y: np.ndarray, n_e: Optional[int] = None) -> ArrayLike:
        """m = mean over windows of g(y_i..i+N_e)."""
        return diffnum.mean(self.modulator_embeddings(params, y, n_e), axis=1)

    def embedding_series(self, params: ParamMap, y: np.ndarray, pathway: str) -> ArrayLike:
        if pathway == "content":
            return self.content_embeddings(params, y)
        if pathway == "modulator":
            return self.modulator_embeddings(params, y)
        raise ContractError(f"unknown pathway '{pathway}'")

    def active_pathways(self) -> Tuple[str, ...]:
        out = []
        if self.cfg.uses_content:
            out.append("content")
        if self.cfg.uses_modulator:
            out.append("modulator")
        return tuple(out)

    def invariants(self, params: ParamMap, y_context: np.ndarray) -> InvariantPair:
        """Invariants from the first T_inv context frames."""
        y = self._check_frames(y_context, "invariants", minimum=self.cfg.t_inv)[:, : self.cfg.t_inv]
        zeros = np.zeros((y.shape[0], self.cfg.q_c), dtype=np.float64)
        c = self.extract_content(params, y) if self.cfg.uses_content else zeros
        m = self.extract_modulator(params, y) if self.cfg.uses_modulator else zeros
        return InvariantPair(c=c, m=m, content_active=self.cfg.uses_content, modulator_active=self.cfg.uses_modulator)

    # -- generative part ----------------------------------------------------

    def dynamics(self, params: ParamMap, x: ArrayLike, m: Optional[ArrayLike] = None) -> ArrayLike:
        """dx/dt = f([x, m]) (modulator active) or f(x)."""
        if value_of(x).shape[-1] != self.cfg.latent_dim:
            raise ShapeError("dynamics", value_of(x).shape, (self.cfg.latent_dim,))
        inp = x
        if self.cfg.uses_modulator:
            if m is None:
                raise ContractError("dynamics: modulator required")
            inp = diffnum.concat([x, m], axis=-1)
        return nets.mlp_forward(self.specs.dynamics, params, inp, "theta.f")

    def vector_field(self, params: ParamMap, m: Optional[ArrayLike]) -> VectorField:
        return lambda x: self.dynamics(params, x, m)

    def decode(self, params: ParamMap, x: ArrayLike, c: Optional[ArrayLike] = None) -> ArrayLike:
        """Observation mean from [x, c] (content active) or x; ``c`` broadcasts over time."""
        inp = x
        if self.cfg.uses_content:
            if c is None:
                raise ContractError("decode: content variable required")
            x_shape = value_of(x).shape
            c_full = diffnum.broadcast_to(c, x_shape[:-1] + (self.cfg.q_c,))
            inp = diffnum.concat([x, c_full], axis=-1)
        return nets.mlp_forward(self.specs.decoder, params, inp, "xi.g")

    # -- full passes --------------------------------------------------------

    def forward(
        self,
        params: ParamMap,
        y_context: np.ndarray,
        grid: TimeGrid,
        eps: np.ndarray,
    ) -> Forward:
        """
        Condition on ``y_context`` [B, >=context_frames, D] and integrate over ``grid``.

        ``eps`` has shape [L*B, q] (sample-major); its row count sets L.
        """
        y = self._check_frames(y_context, "forward", minimum=self.cfg.context_frames)
        n_batch = y.shape[0]
        eps = np.asarray(eps, dtype=np.float64)
        if eps.ndim != 2 or eps.shape[1] != self.cfg.latent_dim or eps.shape[0] % n_batch:
            raise ShapeError("forward eps", eps.shape, (n_batch, self.cfg.latent_dim))
        n_samples = eps.shape[0] // n_batch

        posterior = self.encode_initial(params, y[:, : self.cfg.encoder_frames])
        inv = self.invariants(params, y)

        mean, log_var, m, c = posterior.mean, posterior.log_var, inv.m, inv.c
        if n_samples > 1:
            mean = diffnum.concat([mean] * n_samples, axis=0)
            log_var = diffnum.concat([log_var] * n_samples, axis=0)
            m = diffnum.concat([m] * n_samples, axis=0)
            c = diffnum.concat([c] * n_samples, axis=0)
        x1 = GaussianPosterior(mean, log_var).sample(eps)

        latents = integrate(self.vector_field(params, m), x1, grid, self.cfg.solver)
        y_mean = self.decode(params, latents, c)
        return Forward(y_mean=y_mean, latents=latents, posterior=posterior, invariants=inv)

    def rollout(
        self,
        params: ModelParams,
        y_context: np.ndarray,
        grid: TimeGrid,
        n_samples: int,
        rng: Optional[np.random.Generator] = None,
        eps: Optional[np.ndarray] = None,
    ) -> Rollout:
        """Plain-mode sampling of ``n_samples`` trajectories per sequence."""
        y = np.asarray(y_context, dtype=np.float64)
        n_batch = y.shape[0]
        if eps is None:
            if rng is None:
                raise ContractError("rollout needs either rng or eps")
            eps = rng.standard_normal((n_samples * n_batch, self.cfg.latent_dim))
        fwd = self.forward(params.as_dict(), y, grid, eps)
        t = grid.n_points
        samples = np.asarray(fwd.y_mean).reshape(t, n_samples, n_batch, self.data_dim)
        latents = np.asarray(fwd.latents).reshape(t, n_samples, n_batch, self.cfg.latent_dim)
        return Rollout(
            samples=np.transpose(samples, (1, 2, 0, 3)),
            latents=np.transpose(latents, (1, 2, 0, 3)),
            invariants=fwd.invariants,
        )
