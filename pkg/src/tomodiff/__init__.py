"""Limited-angle tomography reconstruction with projector-guided 3D diffusion."""

from .core import AngleSpec, TiltSeries, UncertaintyMap, Volume, angle_list
from .denoiser import (
    DenoiseRequest,
    ExternalDenoiser,
    OracleDenoiser,
    SmoothingDenoiser,
    ZeroDenoiser,
    open_external_session,
)
from .errors import (
    DenoiserError,
    DivergenceError,
    ProtocolError,
    SamplingError,
    ValidationError,
)
from .io import export_slices, load_tilts, load_volume, save_tilts, save_volume
from .metrics import MetricReport, align_quartiles, evaluate
from .projector import (
    ProjectorConfig,
    consistency_gradient,
    estimate_operator_norm,
    project,
    residual_norm,
    sart,
)
from .radon import back_project, fbp, forward_project
from .sampler import (
    GuidanceConfig,
    NoiseSchedule,
    cfg_mix,
    ddim_step,
    guided_sample,
    make_schedule,
    sample_ddim_plain,
    sample_ddim_projected,
)
from .simulator import (
    AcquisitionSampler,
    ContrastParams,
    PhantomSpec,
    ellipsoid_phantom,
    fit_contrast,
    generate_phantom,
    make_dataset,
    read_manifest,
    sample_acquisition,
    synthesize_haadf,
    tilt_histogram,
    write_manifest,
)
from .uncertainty import compute_uncertainty, uncertainty_from_stack, variance_ceiling

__version__ = "0.1.0"
