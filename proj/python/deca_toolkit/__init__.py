"""Python surface of the DeCA denoising toolkit.

The heavy lifting lives in the `_deca` extension module; this package
re-exports its public names.
"""

from _deca import (  # noqa: F401
    ConfigError,
    DataError,
    ImplicitDataset,
    Interaction,
    Model,
    MultiClassDataset,
    build_model,
    gen_multiclass_blobs,
    gen_planted_implicit,
    grad_check_pairs,
    kl_bernoulli,
    kl_categorical,
    load_movielens_100k,
    model_from_checkpoint,
    real_positive_probability,
    run_experiment,
    run_experiment_file,
)

__all__ = [
    "ConfigError",
    "DataError",
    "ImplicitDataset",
    "Interaction",
    "Model",
    "MultiClassDataset",
    "build_model",
    "gen_multiclass_blobs",
    "gen_planted_implicit",
    "grad_check_pairs",
    "kl_bernoulli",
    "kl_categorical",
    "load_movielens_100k",
    "model_from_checkpoint",
    "real_positive_probability",
    "run_experiment",
    "run_experiment_file",
]
