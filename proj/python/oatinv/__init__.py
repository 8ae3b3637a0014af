"""Optoacoustic tomography simulation and invariant-training toolkit.

The heavy lifting lives in the C++ extension ``oatinv._core``; this package
re-exports its public surface.
"""

from oatinv._core import (
    EnvironmentSpec,
    ForwardOperator,
    ImagingGrid,
    NetworkConfig,
    RealizedEnvironment,
    SensorArray,
    add_noise,
    andmask_aggregate,
    apply_adjoint,
    apply_forward,
    augment,
    bandpass_filter,
    build_grid,
    build_system_matrix,
    generate_vessel_phantom,
    init_network,
    lbp_reconstruct,
    mse_loss,
    network_forward,
    network_parameter_count,
    pearson_correlation,
    place_sensors,
    psnr,
    realize_environment,
    rmse,
    run_selftest,
    ssim,
    synthesize_sinogram,
)

__all__ = [
    "EnvironmentSpec",
    "ForwardOperator",
    "ImagingGrid",
    "NetworkConfig",
    "RealizedEnvironment",
    "SensorArray",
    "add_noise",
    "andmask_aggregate",
    "apply_adjoint",
    "apply_forward",
    "augment",
    "bandpass_filter",
    "build_grid",
    "build_system_matrix",
    "generate_vessel_phantom",
    "init_network",
    "lbp_reconstruct",
    "mse_loss",
    "network_forward",
    "network_parameter_count",
    "pearson_correlation",
    "place_sensors",
    "psnr",
    "realize_environment",
    "rmse",
    "run_selftest",
    "ssim",
    "synthesize_sinogram",
]
