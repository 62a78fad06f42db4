"""Unidirectional SSM encoder, causal cross-attention decoder and the two prediction heads."""
from roma.model.attention import causal_cross_attention, multihead_attention, self_attention_block, strict_past_mask
from roma.model.config import PRESETS, ModelConfig, preset
from roma.model.network import ForwardOutput, RoMANetwork, cluster_blocks, cluster_context_matrix, cluster_members
from roma.model.ssm import mamba_block, ssm_scan

__all__ = [
    "ForwardOutput", "ModelConfig", "PRESETS", "RoMANetwork", "causal_cross_attention", "cluster_blocks",
    "cluster_context_matrix", "cluster_members", "mamba_block", "multihead_attention", "preset",
    "self_attention_block", "ssm_scan", "strict_past_mask",
]
