"""Exception hierarchy shared by every module."""


class SatexError(Exception):
    """Base class; the CLI maps these to exit code 2."""


# registry
class RegistryError(SatexError):
    pass


class MalformedFile(RegistryError):
    def __init__(self, path, message, line=None):
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")


class MissingField(RegistryError):
    def __init__(self, path, field, context=""):
        self.path = str(path)
        self.field = field
        suffix = f" ({context})" if context else ""
        super().__init__(f"{self.path}: missing field {field!r}{suffix}")


class DuplicateSpec(RegistryError):
    def __init__(self, spec, first, second):
        self.spec = spec
        self.locations = (str(first), str(second))
        super().__init__(f"{spec} declared twice: {first} and {second}")


class BadPlaceholder(RegistryError):
    pass


class InvalidSpec(RegistryError):
    pass


class NoMatch(RegistryError):
    def __init__(self, pattern):
        self.pattern = pattern
        super().__init__(f"no solver matches {pattern!r}")


class UnknownSpec(RegistryError):
    def __init__(self, spec):
        self.spec = spec
        super().__init__(f"unknown solver {spec}")


# recipes
class RecipeError(SatexError):
    pass


class NoEraConfigured(RecipeError):
    pass


class MissingArtifactPath(RecipeError):
    pass


class EmptyBuildCommands(RecipeError):
    pass


# runtime
class RuntimeFailure(SatexError):
    pass


class BackendUnavailable(RuntimeFailure):
    pass


class BuildFailed(RuntimeFailure):
    def __init__(self, tag, log):
        self.tag = tag
        self.log = log
        super().__init__(f"building {tag} failed")


class ImageUnavailable(RuntimeFailure):
    pass


class InputMissing(RuntimeFailure):
    pass


class SpawnFailure(RuntimeFailure):
    pass


class NothingToExtract(RuntimeFailure):
    pass


class DestinationNotWritable(RuntimeFailure):
    pass


# cnf
class DimacsError(SatexError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class NoProblemLine(DimacsError):
    pass


class LiteralOutOfRange(DimacsError):
    pass


class UnterminatedClause(DimacsError):
    pass


class HeaderMismatch(DimacsError):
    pass


class GzipCorrupt(DimacsError):
    pass


class MalformedValueLine(SatexError):
    pass


class TooLarge(SatexError):
    pass


# proof
class MalformedLine(SatexError):
    def __init__(self, index, content):
        self.index = index
        self.content = content
        super().__init__(f"proof line {index}: cannot parse {content!r}")


# archive
class ArchiveError(SatexError):
    pass


class ChecksumMismatch(ArchiveError):
    def __init__(self, url, expected, actual, quarantine):
        self.url = url
        self.expected = expected
        self.actual = actual
        self.quarantine = quarantine
        super().__init__(
            f"{url}: expected sha256 {expected}, got {actual} (kept at {quarantine})"
        )


class NetworkFailure(ArchiveError):
    pass


class NotFound(ArchiveError):
    pass


class UnverifiedEntry(ArchiveError):
    pass
