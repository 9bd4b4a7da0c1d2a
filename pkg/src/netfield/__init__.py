"""Weighted-metric graphs, continuum energy limits, connectivity-field
recovery, and heterogeneous reaction-diffusion on grids.

Submodules are imported lazily so the CLI can pin thread pools before the
first numpy import.
"""

__version__ = "0.1.0"

_EXPORTS = {
    # fields
    "ScalarField": "fields", "ConstantField": "fields",
    "SigmoidRadialField": "fields", "CosineRadialField": "fields",
    "LinearField": "fields", "SinusoidField": "fields",
    "GridField": "fields", "FuncField": "fields",
    "FieldBounds": "fields", "field_from_spec": "fields",
    "gradient_fd": "fields", "estimate_bounds": "fields",
    # geometry
    "Domain": "geometry", "Box": "geometry", "Ball": "geometry",
    "VoxelMask": "geometry", "ball_mask": "geometry",
    "domain_from_spec": "geometry", "PointCloud": "geometry",
    "NormalizationStats": "geometry", "sample_points": "geometry",
    "normalize": "geometry", "denormalize": "geometry",
    "boundary_band": "geometry",
    "write_voxel_mask": "geometry", "read_voxel_mask": "geometry",
    # kernels
    "Kernel": "kernels", "KernelMoment": "kernels",
    "kernel_moment": "kernels", "WEIGHT_FLOOR": "kernels",
    # metric
    "SegmentQuadrature": "metric", "segment_weight": "metric",
    "segment_weight_batch": "metric", "segment_in_domain": "metric",
    "segments_in_domain_batch": "metric", "constant_field_oracle": "metric",
    "GridMetricOracle": "metric", "StraightLineReport": "metric",
    "check_straight_line_bound": "metric", "straight_line_envelope": "metric",
    # graph
    "eps_scaling": "graph", "candidate_pairs": "graph", "EpsGraph": "graph",
    "build_graph": "graph", "dirichlet_energy": "graph",
    "graph_laplacian_apply": "graph",
    "write_edge_list": "graph", "read_edge_list": "graph",
    # energy
    "sigma_eta": "energy", "local_energy": "energy",
    "nonlocal_energy": "energy", "nonlocal_energy_grid": "energy",
    "RateReport": "energy", "fit_loglog": "energy",
    "rate_experiment_nonlocal_vs_local": "energy",
    "rate_experiment_discrete_vs_nonlocal": "energy",
    "rate_experiment_straight_line": "energy",
    "w11_limit_check": "energy",
    # recovery
    "MlpField": "recovery", "mlp_forward": "recovery", "PairDataset": "recovery",
    "synthesize_weights": "recovery", "TrainConfig": "recovery",
    "TrainResult": "recovery", "train": "recovery",
    "loss": "recovery", "loss_gradient": "recovery",
    "RecoveryMetrics": "recovery", "evaluate_recovery": "recovery",
    "aggregate_log_stats": "recovery", "kfold_cv": "recovery",
    "recovery_experiment": "recovery", "RecoveryRun": "recovery",
    "write_pair_dataset": "recovery", "read_pair_dataset": "recovery",
    "save_checkpoint": "recovery", "load_checkpoint": "recovery",
    # diffusion
    "DiffusionProblem": "diffusion", "problem_from_fields": "diffusion",
    "assemble_operator": "diffusion", "step": "diffusion",
    "run": "diffusion", "SolveTrace": "diffusion", "GapTrace": "diffusion",
    "boundary_gap_experiment": "diffusion", "exposed_faces": "diffusion",
    # errors
    "ConfigError": "errors", "NumericalError": "errors",
}

__all__ = sorted(_EXPORTS) + ["__version__"]


def __getattr__(name):
    try:
        modname = _EXPORTS[name]
    except KeyError:
        raise AttributeError(f"module 'netfield' has no attribute '{name}'") from None
    import importlib
    mod = importlib.import_module(f".{modname}", __name__)
    value = getattr(mod, name)
    globals()[name] = value
    return value


def __dir__():
    return __all__
