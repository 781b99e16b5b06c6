"""Failure types shared by the pipeline stages."""

from __future__ import annotations


class CorrectionFailure(RuntimeError):
    """A search branch (or the whole search) produced no usable correction.

    ``stage`` names where it died: ``no-initial-correction``, ``unstable``,
    ``solver-error``, or ``adversarial`` (sigma post-filter).
    """

    stage = "unstable"

    def __init__(self, message: str = "", stage: str | None = None,
                 branches: dict | None = None):
        super().__init__(message or stage or self.stage)
        if stage is not None:
            self.stage = stage
        # per-branch stage tags when raised as an aggregate
        self.branches = branches or {}


class NoInitialCorrection(CorrectionFailure):
    """The gradient walk exhausted its budget without flipping the label."""

    stage = "no-initial-correction"


class UnstableCorrection(CorrectionFailure):
    """No shape with a stable center survived growth and auditing."""

    stage = "unstable"
