"""Heartbeat classification from MIT-BIH recordings.

Submodules:

* ``mitdb``       -- header/212-signal/annotation parsing, AAMI mapping, splits
* ``preprocess``  -- baseline removal, 60 Hz notch, 360 -> 115 Hz resampling
* ``features``    -- beat segmentation, fiducials, the 31-feature vector
* ``selection``   -- incremental-wrapper (stepwise forward) feature selection
* ``classifiers`` -- LDA, QDA, MLP, 20-seed MLP ensemble, LDA+QDA mixture
* ``evaluation``  -- AAMI binary metrics, run aggregates, comparison tables
* ``pipeline``    -- cached end-to-end orchestration and reproduction
* ``synthetic``   -- synthetic records in the native formats, for demos/tests
"""

__version__ = "0.1.0"

from . import (classifiers, evaluation, features, mitdb, pipeline, preprocess,
               selection, synthetic)
from .errors import DataError, NumericError, ParseError

__all__ = [
    "classifiers", "evaluation", "features", "mitdb", "pipeline",
    "preprocess", "selection", "synthetic",
    "DataError", "NumericError", "ParseError", "__version__",
]
