"""
Latent ODE model tests - invariant extraction, shapes and variant wiring
"""
import numpy as np
import pytest
from pydantic import ValidationError

from inode_lab.core.exceptions import ConfigError, ContractError
from inode_lab.models.latent_ode import SIGMA_OBS_INIT, LatentODE
from inode_lab.models.params import ModelParams
from inode_lab.schemas.model import VariantConfig
from inode_lab.schemas.solver import TimeGrid


@pytest.fixture
def content_model() -> LatentODE:
    cfg = VariantConfig(variant="inode", pathways="both", q_x=2, q_c=3, t_in=3, t_inv=6, hidden=4, ode_layers=1)
    return LatentODE(cfg, data_dim=2)


class TestInvariants:
    """Content and modulator extraction"""

    def test_content_is_permutation_invariant(self, content_model: LatentODE, rng):
        """100 random sequences, each with its own frame shuffle"""
        params = content_model.init_params(seed=1).as_dict()
        y = rng.normal(size=(100, 6, 2))
        perm = rng.permuted(np.tile(np.arange(6), (100, 1)), axis=1)
        shuffled = np.take_along_axis(y, perm[:, :, None], axis=1)
        np.testing.assert_allclose(
            content_model.extract_content(params, y),
            content_model.extract_content(params, shuffled),
            rtol=1e-12, atol=1e-12,
        )

    def test_modulator_ignores_window_order(self, tiny_model: LatentODE, rng):
        """100 random sequences, each with its own window shuffle"""
        params = tiny_model.init_params(seed=2).as_dict()
        y = rng.normal(size=(100, 6, 1))
        emb = tiny_model.modulator_embeddings(params, y)
        assert emb.shape == (100, 3, 2)
        perm = rng.permuted(np.tile(np.arange(3), (100, 1)), axis=1)
        np.testing.assert_allclose(
            tiny_model.extract_modulator(params, y),
            np.take_along_axis(emb, perm[:, :, None], axis=1).mean(axis=1),
            rtol=1e-12, atol=1e-12,
        )

    def test_constant_embedding_gives_constant_content(self, content_model: LatentODE, rng):
        params = ModelParams(content_model.layout())
        params["psi.content.b1"] = np.ones(3)
        c = content_model.extract_content(params.as_dict(), rng.normal(size=(4, 6, 2)))
        np.testing.assert_allclose(c, np.ones((4, 3)), rtol=1e-15)

    def test_windows_need_more_frames_than_window_length(self, tiny_model: LatentODE):
        params = tiny_model.init_params(seed=0).as_dict()
        with pytest.raises(ConfigError) as excinfo:
            tiny_model.modulator_embeddings(params, np.zeros((1, 3, 1)))
        assert excinfo.value.field == "model.t_inv"

    def test_only_first_t_inv_frames_are_used(self, tiny_model: LatentODE, rng):
        params = tiny_model.init_params(seed=3).as_dict()
        y = rng.normal(size=(2, 10, 1))
        altered = y.copy()
        altered[:, 6:] += 5.0
        np.testing.assert_array_equal(
            tiny_model.invariants(params, y).m, tiny_model.invariants(params, altered).m
        )

    def test_inactive_pathway_is_zero(self, tiny_model: LatentODE, rng):
        params = tiny_model.init_params(seed=0).as_dict()
        inv = tiny_model.invariants(params, rng.normal(size=(2, 6, 1)))
        assert inv.modulator_active and not inv.content_active
        np.testing.assert_array_equal(inv.c, np.zeros((2, 2)))

    def test_pathway_not_built(self, tiny_model: LatentODE):
        params = tiny_model.init_params(seed=0).as_dict()
        with pytest.raises(ContractError):
            tiny_model.content_embeddings(params, np.zeros((1, 6, 1)))


class TestVariants:
    """Parameter layouts per variant"""

    def test_node_has_no_invariant_networks(self, tiny_variant: VariantConfig):
        node = LatentODE(tiny_variant.for_variant("node"), data_dim=1)
        assert node.cfg.latent_dim == 4
        assert node.cfg.encoder_frames == tiny_variant.t_inv
        assert not any(name.startswith("psi.") for name in node.layout())
        assert node.active_pathways() == ()

    def test_sinode_shares_the_inode_layout(self, tiny_variant: VariantConfig):
        inode = LatentODE(tiny_variant, data_dim=1)
        sinode = LatentODE(tiny_variant.for_variant("sinode"), data_dim=1)
        assert list(inode.layout().items()) == list(sinode.layout().items())

    def test_parameter_groups(self, content_model: LatentODE):
        groups = {name.split(".", 1)[0] for name in content_model.layout()}
        assert groups == {"nu", "psi", "theta", "xi"}

    def test_dynamics_input_includes_modulator(self, tiny_model: LatentODE):
        assert tiny_model.specs.dynamics.widths[0] == 2 + 2
        assert tiny_model.specs.decoder.widths[0] == 2

    def test_observation_sigma_starts_at_default(self, tiny_model: LatentODE):
        params = tiny_model.init_params(seed=0).as_dict()
        assert float(tiny_model.observation_sigma(params)[0]) == pytest.approx(SIGMA_OBS_INIT)


class TestPasses:
    """Conditioned forward pass and sampling"""

    def test_forward_shapes(self, tiny_model: LatentODE, rng):
        params = tiny_model.init_params(seed=0).as_dict()
        y = rng.normal(size=(3, 12, 1))
        grid = TimeGrid(dt=0.1, n_points=12)
        fwd = tiny_model.forward(params, y, grid, rng.normal(size=(6, 2)))
        assert fwd.y_mean.shape == (12, 6, 1)
        assert fwd.latents.shape == (12, 6, 2)
        assert fwd.posterior.mean.shape == (3, 2)

    def test_zero_noise_starts_at_posterior_mean(self, tiny_model: LatentODE, rng):
        params = tiny_model.init_params(seed=0).as_dict()
        y = rng.normal(size=(2, 8, 1))
        fwd = tiny_model.forward(params, y, TimeGrid(dt=0.1, n_points=8), np.zeros((2, 2)))
        np.testing.assert_array_equal(fwd.latents[0], fwd.posterior.mean)

    def test_rollout_is_reproducible(self, tiny_model: LatentODE, rng):
        params = tiny_model.init_params(seed=0)
        y = rng.normal(size=(2, 8, 1))
        grid = TimeGrid(dt=0.1, n_points=20)
        a = tiny_model.rollout(params, y, grid, 3, rng=np.random.default_rng(9))
        b = tiny_model.rollout(params, y, grid, 3, rng=np.random.default_rng(9))
        assert a.samples.shape == (3, 2, 20, 1)
        assert a.latents.shape == (3, 2, 20, 2)
        np.testing.assert_array_equal(a.samples, b.samples)
        assert a.mean_prediction.shape == (2, 20, 1)

    def test_rollout_needs_noise_source(self, tiny_model: LatentODE):
        with pytest.raises(ContractError):
            tiny_model.rollout(tiny_model.init_params(seed=0), np.zeros((1, 8, 1)), TimeGrid(dt=0.1, n_points=4), 2)

    def test_context_too_short(self, tiny_model: LatentODE):
        params = tiny_model.init_params(seed=0).as_dict()
        with pytest.raises(ContractError):
            tiny_model.forward(params, np.zeros((1, 4, 1)), TimeGrid(dt=0.1, n_points=4), np.zeros((1, 2)))


class TestVariantConfig:
    """Protocol checks on the model config"""

    def test_t_inv_must_exceed_window(self):
        with pytest.raises(ValidationError):
            VariantConfig(variant="inode", t_in=3, t_inv=3)

    def test_t_inv_at_least_t_in(self):
        with pytest.raises(ValidationError):
            VariantConfig(variant="node", t_in=5, t_inv=4)

    def test_node_encoder_frames_must_match(self):
        with pytest.raises(ValidationError):
            VariantConfig(variant="node", t_in=3, t_inv=10, node_t_in=3)

    def test_content_only_has_no_window_constraint(self):
        cfg = VariantConfig(variant="inode", pathways="content", t_in=3, t_inv=3)
        assert cfg.uses_content and not cfg.uses_modulator

    def test_unknown_key(self):
        with pytest.raises(ValidationError):
            VariantConfig(variant="inode", widht=3)
