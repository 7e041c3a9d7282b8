"""Point/query embedding, encoder-decoder, language fusion and the denoiser."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..instruction import NOUNS, Instruction
from ..numerics import autograd as ag
from ..numerics.autograd import Tensor
from ..numerics.nn import MLP, EncoderLayer, Embedding, LayerNorm, Linear, Module, sinusoidal, timestep_embedding
from ..numerics.rng import seeded_rng
from ..synth.motion import AFFORDANCES
from .config import ModelConfig
from .encoder import PointEncoder

ROLE_SCENE, ROLE_TOOL, ROLE_TARGET = 0, 1, 2
OOV = len(NOUNS)


def noun_index(noun: str) -> int:
    return NOUNS.index(noun) if noun in NOUNS else OOV


@dataclass
class ModelInput:
    """A batch of B samples sharing scene and query counts; coordinates are
    already expressed relative to each sample's query centroid."""

    scene_xyz: np.ndarray  # (B, Ns, 3)
    scene_rgb: np.ndarray  # (B, Ns, 3)
    query_xyz: np.ndarray  # (B, Nq, 3)
    query_role: np.ndarray  # (B, Nq) 1 tool / 0 target
    action: np.ndarray  # (B,)
    tool_noun: np.ndarray  # (B,)
    target_noun: np.ndarray  # (B,)

    @property
    def B(self) -> int:
        return self.scene_xyz.shape[0]

    @property
    def n_scene(self) -> int:
        return self.scene_xyz.shape[1]

    @property
    def n_query(self) -> int:
        return self.query_xyz.shape[1]

    def xyz(self) -> np.ndarray:
        return np.concatenate([self.scene_xyz, self.query_xyz], axis=1)

    def permute_queries(self, perm: np.ndarray) -> "ModelInput":
        return ModelInput(self.scene_xyz, self.scene_rgb, self.query_xyz[:, perm], self.query_role[:, perm],
                          self.action, self.tool_noun, self.target_noun)

    def permute_scene(self, perm: np.ndarray) -> "ModelInput":
        return ModelInput(self.scene_xyz[:, perm], self.scene_rgb[:, perm], self.query_xyz, self.query_role,
                          self.action, self.tool_noun, self.target_noun)


def language_ids(instructions: list[Instruction]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    a = np.array([AFFORDANCES.index(i.action) for i in instructions])
    t = np.array([noun_index(i.tool_desc) for i in instructions])
    g = np.array([noun_index(i.target_desc) for i in instructions])
    return a, t, g


@dataclass
class ConditionSet:
    H_Q: Tensor  # (B, Nq, d)
    z_l: Tensor  # (B, d_lang)
    C: Tensor  # (B, Nq, d_cond)
    c_cond: Tensor  # (B, Nq, d_model)


class AffordanceModel(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        rng = seeded_rng(seed, 7)
        d, dl = cfg.d, cfg.d_lang
        early = dl if cfg.fusion == "early" else 0
        self.scene_embed = Linear(6 + early, d, rng)
        self.query_embed = Linear(3 + 6 * cfg.pe_freqs + early, d, rng)
        self.role_embed = Embedding(3, d, rng, scale=0.5)
        self.encoder = PointEncoder(d, cfg.enc_ratios, cfg.enc_radii, cfg.enc_k, rng,
                                   global_context=cfg.global_context)
        self.action_embed = Embedding(len(AFFORDANCES), dl, rng, scale=1.0)
        self.tool_embed = Embedding(len(NOUNS) + 1, dl, rng, scale=1.0)
        self.target_embed = Embedding(len(NOUNS) + 1, dl, rng, scale=1.0)
        fuse_in = d + (dl if cfg.fusion == "late" else 0)
        self.fuse_mlp = MLP([fuse_in, cfg.d_cond, cfg.d_cond], rng)
        self.cond_proj = Linear(cfg.d_cond, cfg.d_model, rng)
        self.step_in = Linear(3, cfg.d_model, rng)
        self.slot_embed = Embedding(cfg.m + 1, cfg.d_model, rng, scale=0.5)
        self.time_mlp = MLP([cfg.d_model, cfg.d_model, cfg.d_model], rng)
        self.blocks = [EncoderLayer(cfg.d_model, cfg.heads, cfg.ff_ratio, rng) for _ in range(cfg.layers)]
        self.out_norm = LayerNorm(cfg.d_model)
        self.head = Linear(cfg.d_model, 3, rng, scale=0.1)

    # ------------------------------------------------------------ condition

    def embed_language(self, action, tool_noun, target_noun) -> Tensor:
        return (self.action_embed(action) + self.tool_embed(tool_noun)) + self.target_embed(target_noun)

    def embed_points(self, batch: ModelInput, z_l: Tensor | None = None) -> Tensor:
        """Token features (B, Ns + Nq, d): scene rows first, then queries in input order."""
        scene_in = ag.Tensor(np.concatenate([batch.scene_xyz, batch.scene_rgb], axis=-1))
        pe = sinusoidal(batch.query_xyz * np.pi, self.cfg.pe_freqs)
        query_in = ag.Tensor(np.concatenate([batch.query_xyz, pe], axis=-1))
        if self.cfg.fusion == "early":
            if z_l is None:
                raise ValueError("early fusion needs z_l at embedding time")
            zs = ag.broadcast_to(ag.reshape(z_l, (batch.B, 1, -1)), (batch.B, batch.n_scene, z_l.shape[-1]))
            zq = ag.broadcast_to(ag.reshape(z_l, (batch.B, 1, -1)), (batch.B, batch.n_query, z_l.shape[-1]))
            scene_in = ag.concat([scene_in, zs], axis=-1)
            query_in = ag.concat([query_in, zq], axis=-1)
        roles = np.concatenate([np.full((batch.B, batch.n_scene), ROLE_SCENE),
                                np.where(batch.query_role == 1, ROLE_TOOL, ROLE_TARGET)], axis=1)
        tokens = ag.concat([self.scene_embed(scene_in), self.query_embed(query_in)], axis=1)
        return tokens + self.role_embed(roles)

    def encode_decode(self, tokens: Tensor, xyz: np.ndarray) -> Tensor:
        return self.encoder(tokens, xyz)

    @staticmethod
    def extract_query_features(H: Tensor, n_scene: int) -> Tensor:
        return H[:, n_scene:]

    def fuse(self, H_Q: Tensor, z_l: Tensor) -> ConditionSet:
        if self.cfg.fusion == "late":
            B, Nq, _ = H_Q.shape
            z = ag.broadcast_to(ag.reshape(z_l, (B, 1, -1)), (B, Nq, z_l.shape[-1]))
            C = self.fuse_mlp(ag.concat([H_Q, z], axis=-1))
        else:
            C = self.fuse_mlp(H_Q)
        return ConditionSet(H_Q, z_l, C, self.cond_proj(C))

    def condition(self, batch: ModelInput) -> ConditionSet:
        z_l = self.embed_language(batch.action, batch.tool_noun, batch.target_noun)
        tokens = self.embed_points(batch, z_l)
        H = self.encode_decode(tokens, batch.xyz())
        return self.fuse(self.extract_query_features(H, batch.n_scene), z_l)

    # ------------------------------------------------------------ denoiser

    def denoise(self, x_k, k, c_cond) -> Tensor:
        """Predicted noise for noised steps ``x_k`` (Q, m, 3) at steps ``k`` (Q,)
        given per-query conditioning tokens ``c_cond`` (Q, d_model)."""
        x_k = ag.as_tensor(x_k)
        Q, m, _ = x_k.shape
        D = self.cfg.d_model
        steps = self.step_in(x_k)  # (Q, m, D)
        cond = ag.reshape(c_cond, (Q, 1, D))
        seq = ag.concat([cond, steps], axis=1) + self.slot_embed(np.arange(m + 1))
        temb = self.time_mlp(ag.Tensor(timestep_embedding(np.broadcast_to(k, (Q,)), D)))
        seq = seq + ag.reshape(temb, (Q, 1, D))
        for blk in self.blocks:
            seq = blk(seq)
        return self.head(self.out_norm(seq[:, 1:]))

    def count_parameters(self) -> int:
        return self.num_parameters()
