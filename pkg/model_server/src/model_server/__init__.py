"""HTTP serving shim for the models the dss pipeline consumes.

One process serves four model roles behind the pipeline's wire contract:
patch feature extraction, box-prompted segmentation, text localization and
pairwise mask judging. The default backend is a deterministic stub so the
full request path is testable offline; the real foundation-model stack is
loaded lazily only when asked for.
"""
from .app import bundle_from_env, create_app
from .stub import StubBundle

__all__ = ["StubBundle", "bundle_from_env", "create_app"]
