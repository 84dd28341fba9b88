"""Coarse-to-fine deformable registration by discrete convex optimization over
feature correlation volumes, with gradient-based instance refinement."""

from .costvolume import CostVolume, build_cost_volume, stream_candidate
from .displacement import compose, jacobian_determinant, upsample2x, warp, zero_field
from .errors import DimensionMismatch, EngineError, VolumeFormatError
from .features import FeatureProviderConfig, FeatureVolume, extract, fuse_global_local
from .formats import read_nifti, read_volume, write_nifti, write_volume
from .instance import InstanceOptConfig, instance_optimize
from .landscape import rotation_landscape
from .metrics import dice, endpoint_error, mean_dice, sd_log_j
from .pyramid import PyramidConfig, RegistrationResult, effective_capture_radius, register
from .solver import SolverConfig, solve_level
from .synth import make_phantom, make_smooth_field
from .volume import AffineTransform, Volume, downsample_half, warp_affine

__version__ = "0.1.0"
