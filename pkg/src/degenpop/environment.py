"""Environment variables read by the degenpop command line."""

from enum import StrEnum


class EnvironmentVar(StrEnum):
    """Environment variable keys used in the application."""

    OUT_DIR = "DEGENPOP_OUT_DIR"
    JOBS = "DEGENPOP_JOBS"
    STRICT_HYPOTHESES = "DEGENPOP_STRICT_HYPOTHESES"
