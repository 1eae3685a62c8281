"""Tiered tensor transform: hierarchical rigid-group optimization of protein-ligand complexes."""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .ffenergy import EnergyBreakdown, EnergyModel, ForceField, NonbondedSettings, energy, energy_and_gradient, interaction_energy
from .gradient import CostFunction, cost_and_grad
from .molio import AtomAnnotations, ConformationSet, MolecularSystem, parse_annotations, parse_system
from .protocol import ProtocolConfig, RunRecord, apply_kick, generate_conformations, minimize, relax_ligand
from .segmentation import SegmentationConfig, SegmentationPlan, build_segmentation
from .transform import TransformParams, Transformer, forward
