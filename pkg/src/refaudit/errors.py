"""Exception hierarchy shared by the pipeline stages."""


class AuditError(Exception):
    """Base class; the CLI maps subclasses to exit codes."""

    exit_code = 2


class ConfigurationError(AuditError):
    pass


class IngestionError(AuditError):
    pass


class SchemaError(AuditError):
    pass


class TemplateError(AuditError):
    pass


class CorpusError(AuditError):
    pass


class InputError(AuditError, ValueError):
    pass


class OptimizationError(AuditError, RuntimeError):
    pass


class TransportExhausted(AuditError):
    exit_code = 3
