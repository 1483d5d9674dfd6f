"""Plug-and-play diffusion sampling for image restoration.

The toolkit alternates an off-the-shelf denoiser (the prior subproblem) with
closed-form proximal data solvers inside a diffusion sampling loop, covering
deblurring, inpainting, and super-resolution with a shared set of operators.
"""

from .degrade import (
    DegradationModel,
    apply,
    apply_adjoint,
    apply_forward,
    bicubic_resize,
    gaussian_kernel,
    make_box_mask,
    make_random_mask,
    motion_kernel,
)
from .denoise import (
    DenoiserHandle,
    ExternalDenoiser,
    GaussianDenoiser,
    GaussianPrior,
    GmmDenoiser,
    GmmPrior,
    external_denoiser,
    gaussian_score,
    gmm_score,
    oracle_denoiser,
    predict_x0_from_score,
)
from .imgcore import circular_convolve, fft2, ifft2, load_png, psnr, save_png
from .prox import (
    data_prox,
    prox_deblur_fft,
    prox_gradient_step,
    prox_inpaint,
    prox_sr_closed,
    prox_sr_ibp,
)
from .sample import (
    SamplerConfig,
    Trajectory,
    ddim_step,
    ddpm_reverse_step,
    diffpir_step,
    dps_y0_step,
    dps_yt_step,
    forward_diffuse,
    run_ddpm,
    run_diffpir,
    run_dps,
)
from .schedule import (
    NoiseSchedule,
    StepPlan,
    build_linear_schedule,
    quadratic_subsequence,
    rho,
    sigma_bar,
)

__version__ = "0.1.0"
