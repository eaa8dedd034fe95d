"""feedshift: quasi-experimental measurement of feed-driven language change.

Library layout mirrors the pipeline: ``corpus`` (event logs),
``lexicon``/``textmetrics`` (outcomes), ``cohort`` (arms and anchors),
``covariates``/``propensity``/``estimate`` (matching and effects),
``regress`` (engagement regression), ``synth`` (oracle data),
``study``/``report``/``cli`` (orchestration and outputs).
"""

__version__ = "0.1.0"
