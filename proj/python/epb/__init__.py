"""Python bindings for the epb dataset-audit and probing toolkit."""

from ._epb import (
    Archive,
    Dataset,
    ProbeModel,
    DataError,
    NumericError,
    audit,
    classify_pair,
    complexity_bits,
    compute_metrics,
    drop_percent,
    filter_test,
    ingest,
    pool_examples,
    prequential_codelength,
    run_pipeline,
    synth_generate,
    train_probe,
    two_part_codelength,
    validate_archive,
    __version__,
)

__all__ = [
    "Archive",
    "Dataset",
    "ProbeModel",
    "DataError",
    "NumericError",
    "audit",
    "classify_pair",
    "complexity_bits",
    "compute_metrics",
    "drop_percent",
    "filter_test",
    "ingest",
    "pool_examples",
    "prequential_codelength",
    "run_pipeline",
    "synth_generate",
    "train_probe",
    "two_part_codelength",
    "validate_archive",
]
