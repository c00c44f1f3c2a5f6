"""Link-level walking and cycling volume estimation from biased third-party counts."""

from . import datamodel, evaluate, featurize, geofeatures, infer, metrics, regress, select, synth

__version__ = "0.1.0"

__all__ = ["datamodel", "evaluate", "featurize", "geofeatures", "infer", "metrics", "regress", "select", "synth",
           "__version__"]
