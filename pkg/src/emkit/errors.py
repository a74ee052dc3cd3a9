"""Exception hierarchy shared by every emkit module."""


class EmkitError(Exception):
    """Base class; the CLI maps these to exit status 1."""


class InvalidExtentError(EmkitError, ValueError):
    pass


class OutOfRangeError(EmkitError, IndexError):
    pass


class InvalidParameterError(EmkitError, ValueError):
    pass


class FormatError(EmkitError, ValueError):
    """A file exists but its contents do not match the declared layout."""

    def __init__(self, message, path=None):
        if path is not None:
            message = f"{path}: {message}"
        super().__init__(message)
        self.path = path


class MissingFileError(EmkitError, FileNotFoundError):
    pass


class UnknownVertexError(EmkitError, KeyError):
    def __str__(self):
        return f"unknown vertex {self.args[0]}"


class TemplateError(EmkitError, ValueError):
    pass


class ManifestParseError(EmkitError, ValueError):
    def __init__(self, message, lineno=None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


class PayloadSizeError(EmkitError):
    def __init__(self, url, expected, got):
        super().__init__(f"{url}: expected {expected} bytes, got {got}")
        self.url = url
        self.expected = expected
        self.got = got


class FetchError(EmkitError):
    """Permanent failure (4xx): never retried."""

    def __init__(self, message, status=None, attempts=1):
        super().__init__(message)
        self.status = status
        self.attempts = attempts


class FetchFailedError(EmkitError):
    """Transient failures persisted past the retry budget."""

    def __init__(self, message, attempts, cause=None):
        super().__init__(message)
        self.attempts = attempts
        self.cause = cause


class AssemblyError(EmkitError):
    def __init__(self, failures):
        self.failures = dict(sorted(failures.items()))
        ids = ", ".join(str(c) for c in self.failures)
        super().__init__(f"chunk(s) failed: {ids}")

    @property
    def chunk_ids(self):
        return list(self.failures)
