"""
smokeflow: fractional-order dual-phase level-set optical flow for smoke motion,
with colour-map GMM masks and flow evaluation metrics.
"""
from .fields import FlowField, GradientTriple, NoiseSpec
from .gmm import GmmConfig, GmmModel
from .imgio import ImageFrame, read_flo, read_image, write_flo, write_image
from .solver import FlowResult, PipelineOutput, SolverParams, estimate_flow, run_pipeline

__version__ = '0.1.0'

__all__ = [
    'FlowField',
    'FlowResult',
    'GmmConfig',
    'GmmModel',
    'GradientTriple',
    'ImageFrame',
    'NoiseSpec',
    'PipelineOutput',
    'SolverParams',
    'estimate_flow',
    'read_flo',
    'read_image',
    'run_pipeline',
    'write_flo',
    'write_image',
]
