"""Temporal feature propagation at the coarsest pyramid level.

The previous pair leaves behind a per-point state (cell c, embedding E)
anchored to its source frame's coarsest points. Because the current
frame samples space differently, the relay warps those anchors by the
current initial pose and max-pools a learned function of the K nearest
anchor states onto each current point. A peephole LSTM then fuses the
relayed state with the fresh cost-volume embedding:

    x = RE ⊕ F
    f = σ(MLP_f(c' ⊕ E' ⊕ x))      i = σ(MLP_i(c' ⊕ E' ⊕ x))
    c̃ = tanh(MLP_c(E' ⊕ x))        c = f ⊙ c' + i ⊙ c̃
    o = σ(MLP_o(c ⊕ E' ⊕ x))       E = o ⊙ tanh(c)

Note the candidate c̃ never sees c', while the output gate peeks at the
freshly updated c.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import pointops
from .autodiff import Tensor
from .geometry import transform_apply_t
from .nncore import ParamStore, SharedMLP


@dataclass
class TemporalState:
    frame_key: object
    anchors: np.ndarray   # (n3, 3) in the anchor frame's coordinates
    cell: Tensor          # (n3, D_e)
    embed: Tensor         # (n3, D_e)

    def detached(self) -> "TemporalState":
        return TemporalState(self.frame_key, self.anchors,
                             self.cell.detach(), self.embed.detach())


class MotionRelay:
    """Carry (c, E) from the previous frame's anchors onto current points.

    The relay MLPs end in tanh: the relayed state is re-squashed into
    (-1, 1) every hop, so the cell recursion c = f*c' + i*c_tilde stays
    inside (-2, 2) at any chain depth. With an unbounded relay the cell
    norm grows along the sequence and inference drifts away from the
    two-pair regime seen in training.
    """

    def __init__(self, store: ParamStore, name: str, embed_width: int,
                 k: int, include_dxyz: bool = True):
        self.k = k
        self.include_dxyz = include_dxyz
        in_width = (3 if include_dxyz else 0) + embed_width
        self.mlp_cell = SharedMLP(store, f"{name}.cell", [in_width, embed_width], ["tanh"])
        self.mlp_embed = SharedMLP(store, f"{name}.embed", [in_width, embed_width], ["tanh"])
        # Both state blocks start at zero so the relay begins geometry-only
        # and history influences the output no more than training asks for.
        # The cell rows stay zero forever: cold-start windows always relay a
        # zero cell, so they get exactly zero gradient, and random values
        # there would hit real cell content at inference depth >= 2 as
        # frozen noise. The embed rows do train; starting them at zero just
        # means a two-pair window grows the recurrent coupling from nothing
        # instead of having to tame a random projection, which keeps the
        # coupling weak enough that deep chains stay near the distribution
        # the heads were fit on.
        split = 3 if include_dxyz else 0
        self.mlp_cell.weights[0].data[split:, :] = 0.0
        self.mlp_embed.weights[0].data[split:, :] = 0.0

    def __call__(self, prev: TemporalState, current_points: np.ndarray,
                 q_init: Tensor, t_init: Tensor) -> tuple[Tensor, Tensor]:
        if prev.anchors.shape[0] == 0:
            raise ValueError("relay needs a non-empty previous state (use the cold-start path)")
        warped = transform_apply_t(q_init, t_init, ad.constant(prev.anchors))
        k = min(self.k, prev.anchors.shape[0])
        idx, _ = pointops.knn(current_points, warped.data, k)
        n = current_points.shape[0]

        def pool(mlp: SharedMLP, state: Tensor) -> Tensor:
            gathered = ad.gather_rows(state, idx)                    # (n, k, D_e)
            if self.include_dxyz:
                dxyz = ad.gather_rows(warped, idx) - ad.constant(current_points[:, None, :])
                gathered = ad.concat([dxyz, gathered], axis=2)
            return ad.tmax(mlp(gathered), axis=1)

        return pool(self.mlp_cell, prev.cell), pool(self.mlp_embed, prev.embed)


class PeepholeLstm:
    def __init__(self, store: ParamStore, name: str, feat_width: int, embed_width: int):
        e = embed_width
        x_w = e + feat_width
        self.mlp_f = SharedMLP(store, f"{name}.f", [e + e + x_w, e], [None])
        self.mlp_i = SharedMLP(store, f"{name}.i", [e + e + x_w, e], [None])
        self.mlp_c = SharedMLP(store, f"{name}.c", [e + x_w, e], [None])
        self.mlp_o = SharedMLP(store, f"{name}.o", [e + e + x_w, e], [None])

    def __call__(self, c_prev: Tensor, e_prev: Tensor, re: Tensor,
                 f: Tensor) -> tuple[Tensor, Tensor]:
        x = ad.concat([re, f], axis=1)
        ex = ad.concat([e_prev, x], axis=1)
        cex = ad.concat([c_prev, ex], axis=1)
        f_gate = ad.sigmoid(self.mlp_f(cex))
        i_gate = ad.sigmoid(self.mlp_i(cex))
        c_cand = ad.tanh(self.mlp_c(ex))
        c = f_gate * c_prev + i_gate * c_cand
        o_gate = ad.sigmoid(self.mlp_o(ad.concat([c, ex], axis=1)))
        return c, o_gate * ad.tanh(c)


def cold_start(frame_key, anchors: np.ndarray, embed_init: Tensor) -> TemporalState:
    """First-pair state: zero cell, the cost-volume embedding as-is."""
    return TemporalState(frame_key=frame_key, anchors=np.array(anchors, dtype=np.float64),
                         cell=ad.constant(np.zeros_like(embed_init.data)),
                         embed=embed_init)
