"""Schema-adaptive tabular learning toolkit (Python bindings)."""

try:
    from . import _schemadapt as _core
except ImportError:  # in-tree build: module lives in build/python
    import _schemadapt as _core

SchemadaptError = _core.SchemadaptError
ValidationError = _core.ValidationError

auroc = _core.auroc
build_statement = _core.build_statement
desk_config = _core.desk_config
encode = _core.encode
focal_loss = _core.focal_loss
metric_report = _core.metric_report
mgda_solve = _core.mgda_solve
normalize_value = _core.normalize_value
synth_gen = _core.synth_gen
two_task_alpha = _core.two_task_alpha

__all__ = [
    "SchemadaptError",
    "ValidationError",
    "auroc",
    "build_statement",
    "desk_config",
    "encode",
    "focal_loss",
    "metric_report",
    "mgda_solve",
    "normalize_value",
    "synth_gen",
    "two_task_alpha",
]
