"""Full forward pass: window inputs to future allocation weights."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .blcore import BLHyper, bl_posterior, bl_solve, equilibrium_profits, predict_logits
from .encoder import (
    EncoderConfig,
    encoder_shapes,
    fuse_perspective,
    omega_head,
    spatial_forward,
    temporal_forward,
)
from .features import WindowInputs


@dataclass
class PerspectiveSet:
    P: list[Tensor]
    Omega: list[Tensor]


def param_shapes(cfg: EncoderConfig, p: int, f: int) -> dict[str, tuple[int, ...]]:
    shapes = encoder_shapes(cfg)
    shapes["out.weight"] = (f, p + 1)
    shapes["out.bias"] = (cfg.n_suppliers, f)
    return shapes


@dataclass
class DeepBL:
    cfg: EncoderConfig
    hyper: BLHyper
    p: int
    f: int
    params: dict[str, Tensor] = field(default_factory=dict)

    def __post_init__(self):
        expected = param_shapes(self.cfg, self.p, self.f)
        if self.params:
            got = {k: v.shape for k, v in self.params.items()}
            if got != expected:
                raise ValueError(f"parameter shapes {got} do not match model {expected}")
        self.pi = equilibrium_profits(self.hyper.mu_vector(self.cfg.n_suppliers))

    def perspectives(self, inputs: WindowInputs, *, training=False, rng=None) -> tuple[PerspectiveSet, Tensor]:
        """P_t and Omega_t for every input step, plus the raw BL history N x (p+1)."""
        cfg, n = self.cfg, self.cfg.n_suppliers
        steps = inputs.features.shape[0]
        H_all = spatial_forward(inputs.features, inputs.propagation, self.params, cfg, training=training, rng=rng)
        E_all = temporal_forward(inputs.features, self.params, cfg, training=training, rng=rng)
        ps, omegas, columns = [], [], []
        for k in range(steps):
            H = ag.slice_(H_all, slice(k * n, (k + 1) * n))
            E = ag.slice_(E_all, k)
            P = fuse_perspective(H, E, inputs.propagation[k], self.params, cfg)
            omega = omega_head(P, inputs.risks[k], self.params)
            post = bl_posterior(self.pi, inputs.risks[k], P, omega, self.hyper)
            raw = bl_solve(post, self.hyper.delta).raw
            ps.append(P)
            omegas.append(omega)
            columns.append(ag.reshape(raw, (n, 1)))
        return PerspectiveSet(ps, omegas), ag.concat(columns, axis=1)

    def forward_logits(self, inputs: WindowInputs, *, training=False, rng=None) -> Tensor:
        """N x f scores whose column-wise softmax is the allocation."""
        _, history = self.perspectives(inputs, training=training, rng=rng)
        return predict_logits(history, self.params["out.weight"], self.params["out.bias"])

    def forward(self, inputs: WindowInputs, *, training=False, rng=None) -> Tensor:
        """Predicted N x f allocation, each column on the simplex."""
        return ag.softmax(self.forward_logits(inputs, training=training, rng=rng), axis=0)

    def predict(self, inputs: WindowInputs) -> np.ndarray:
        with ag.no_grad():
            return self.forward(inputs).data

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())
