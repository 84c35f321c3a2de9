"""Exception hierarchy shared across the package."""


class MaskLoraError(Exception):
    """Base class for all package errors."""


class MediaError(MaskLoraError, ValueError):
    pass


class ConditioningError(MaskLoraError, ValueError):
    pass


class BackboneError(MaskLoraError, ValueError):
    pass


class CaptionError(MaskLoraError, RuntimeError):
    def __init__(self, provider: str, cause: BaseException | str):
        self.provider = provider
        super().__init__(f"captioning failed in provider {provider!r}: {cause}")


class LoraError(MaskLoraError, ValueError):
    pass


class WeightFileError(MaskLoraError, ValueError):
    pass


class ChecksumError(WeightFileError):
    pass


class VersionError(WeightFileError):
    pass


class TrainingError(MaskLoraError, RuntimeError):
    pass


class ConfigError(MaskLoraError, ValueError):
    pass
