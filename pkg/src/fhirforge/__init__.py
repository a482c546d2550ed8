"""fhirforge: text-to-FHIR synthesis pipeline and evaluation toolkit."""

__version__ = "0.1.0"
