"""Exception hierarchy shared across the pipeline."""


class FhirforgeError(Exception):
    """Base class for all pipeline errors."""


class GatewayError(FhirforgeError):
    """Base class for LLM gateway failures."""


class ProviderUnreachableError(GatewayError):
    """Transport to the completion provider failed after retries."""


class ReplayMissError(GatewayError):
    """Replay-only mode and the request fingerprint is not in the transcript."""


class EmptyResponseError(GatewayError):
    """Provider returned an empty completion."""


class ExtractionParseError(FhirforgeError):
    """Stage-1 response was not valid JSON for the extraction schema."""


class StoreParseError(FhirforgeError):
    """A terminology store or vector file line failed to parse."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class DuplicateEntryError(FhirforgeError):
    """Two store lines share the same (system, code) key."""

    def __init__(self, system: str, code: str):
        super().__init__(f"duplicate entry ({system}, {code})")
        self.system = system
        self.code = code


class DimensionMismatchError(FhirforgeError):
    """Vector dimensionality does not match the index."""


class ZeroVectorError(FhirforgeError):
    """Cosine similarity is undefined for zero-norm vectors."""


class EmbedderUnavailableError(FhirforgeError):
    """No encoder can embed query text for this vector index."""


class BundleSyntaxError(FhirforgeError):
    """Bundle text is not well-formed JSON."""


class NotABundleError(FhirforgeError):
    """JSON parsed but is not a FHIR Bundle resource."""


class SynthesisParseError(FhirforgeError):
    """Stage-2 response did not parse as a FHIR bundle."""


class ScanParseError(FhirforgeError):
    """Stage-3 semantic scan response was not the expected JSON array."""


class PredictionParseError(FhirforgeError):
    """Model output did not contain the strict prediction JSON object."""


class InsufficientPoolError(FhirforgeError):
    """Few-shot sampling asked for more exemplars than the pool holds."""


class EmptyInputError(FhirforgeError):
    """Aggregation over an empty judgment list."""
