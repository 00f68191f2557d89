"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration problems exit 1, data
validation problems exit 2, numeric runtime failures exit 3.
"""


class MMSetsError(Exception):
    """Base class for all package errors."""


class ConfigError(MMSetsError):
    """Bad flag, config file, or parameter combination."""


class DataError(MMSetsError):
    """A dataset record failed validation.

    Carries the offending sample id and a dotted/indexed field path so the
    message pinpoints the record, e.g. ``sample 's0042': instances[2].payload``.
    """

    def __init__(self, message, sample_id=None, field=None):
        self.sample_id = sample_id
        self.field = field
        prefix = ""
        if sample_id is not None:
            prefix += f"sample {sample_id!r}: "
        if field is not None:
            prefix += f"{field}: "
        super().__init__(prefix + message)


class EmptySetError(DataError):
    """A sample ended up with zero usable instances."""


class NumericError(MMSetsError):
    """A non-finite loss or gradient aborted the computation."""
