"""Exception hierarchy.

Every error carries a short ``code`` string and an ``exit_code`` so the CLI can
report the failure category without parsing messages.
"""


class LesionAttentionError(Exception):
    code = "error"
    exit_code = 1


class DimensionError(LesionAttentionError, ValueError):
    code = "dimension"
    exit_code = 2


class ConfigError(LesionAttentionError, ValueError):
    code = "config"
    exit_code = 3


class ParameterError(ConfigError):
    code = "parameter"


class GeometryError(LesionAttentionError, ValueError):
    code = "geometry"
    exit_code = 4


class NumericError(LesionAttentionError, ArithmeticError):
    code = "numeric"
    exit_code = 5


class DivergenceError(NumericError):
    code = "divergence"

    def __init__(self, epoch, batch, message="loss is not finite"):
        super().__init__(f"{message} (epoch {epoch}, batch {batch})")
        self.epoch = epoch
        self.batch = batch


class MetricUndefinedError(LesionAttentionError, ValueError):
    code = "metric_undefined"
    exit_code = 6


class ContractError(LesionAttentionError, RuntimeError):
    code = "contract"
    exit_code = 7


class ParseError(LesionAttentionError, ValueError):
    code = "parse"
    exit_code = 8

    def __init__(self, message, offset=None, path=None):
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"byte {offset}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.offset = offset
        self.path = path


class CheckpointError(LesionAttentionError):
    code = "checkpoint"
    exit_code = 10


class CheckpointMagicError(CheckpointError):
    code = "bad_magic"
    exit_code = 11


class CheckpointTruncatedError(CheckpointError):
    code = "truncated"
    exit_code = 12


class CheckpointShapeError(CheckpointError):
    code = "shape_mismatch"
    exit_code = 13


class CheckpointVersionError(CheckpointError):
    code = "unsupported_version"
    exit_code = 14


class CheckpointHeaderError(CheckpointError):
    code = "bad_header"
    exit_code = 15
