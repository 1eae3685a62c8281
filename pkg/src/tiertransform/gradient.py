"""Energy of the transformed structure and its exact gradient in transform space."""

from __future__ import annotations

import numpy as np

from .errors import NonFiniteGradient
from .ffenergy import EnergyBreakdown, EnergyModel, ForceField, NonbondedSettings
from .molio import MolecularSystem
from .segmentation import SegmentationPlan
from .transform import TransformParams, Transformer

__all__ = ["CostFunction", "cost_and_grad"]


class CostFunction:
    """``params -> E_FF(assemble(r_f, forward(params)))`` with reverse-mode gradient.

    Holds the compiled transform, the energy model (fixed-fixed terms skipped
    when the settings say so) and the starting coordinates. The neighbor list
    inside the energy model is rebuilt on demand and treated as constant
    control flow for differentiation.
    """

    def __init__(
        self,
        system: MolecularSystem,
        plan: SegmentationPlan,
        settings: NonbondedSettings | None = None,
        mode: str = "standard",
        coords=None,
        ff: ForceField | None = None,
        use_neighbor_list: bool = True,
    ):
        self.system = system
        self.plan = plan
        self.settings = settings or NonbondedSettings()
        self.mode = mode
        self.ff = ff or ForceField(system)
        self.transformer = Transformer(plan, mode)
        coords = system.positions if coords is None else coords
        self.coords0 = np.array(coords, dtype=float)
        self.r_m_init = self.coords0[plan.movable_atoms].copy()
        self.r_f = self.coords0[plan.fixed_atoms].copy()
        self.model = EnergyModel(
            self.ff, self.settings, active=plan.movable_mask(), use_neighbor_list=use_neighbor_list
        )

    def coordinates(self, params: TransformParams) -> np.ndarray:
        """Full N x 3 coordinates; fixed rows are copied verbatim."""
        out = self.coords0.copy()
        out[self.plan.movable_atoms] = self.transformer.forward(params, self.r_m_init, self.r_f)
        return out

    def energy(self, params: TransformParams) -> EnergyBreakdown:
        return self.model.evaluate(self.coordinates(params))[0]

    def __call__(self, params: TransformParams):
        """Return ``(EnergyBreakdown, gradient as TransformParams, full coordinates)``."""
        r_final, tape = self.transformer.forward(params, self.r_m_init, self.r_f, keep=True)
        coords = self.coords0.copy()
        coords[self.plan.movable_atoms] = r_final
        breakdown, g_coords = self.model.evaluate(coords, grad=True)
        grad, _ = self.transformer.backward(g_coords[self.plan.movable_atoms], tape, params)
        if not grad.is_finite():
            raise NonFiniteGradient("gradient has non-finite entries; geometry collapsed")
        return breakdown, grad, coords


def cost_and_grad(
    system: MolecularSystem,
    plan: SegmentationPlan,
    params: TransformParams,
    r_m_init=None,
    settings: NonbondedSettings | None = None,
    mode: str = "standard",
):
    """One-shot ``(EnergyBreakdown, gradient)``; ``r_m_init`` defaults to the system positions."""
    coords = np.array(system.positions, dtype=float)
    if r_m_init is not None:
        coords[plan.movable_atoms] = r_m_init
    cost = CostFunction(system, plan, settings, mode, coords=coords)
    breakdown, grad, _ = cost(params)
    return breakdown, grad
