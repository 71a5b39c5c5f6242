"""boxsieve: post-picking classification of boxed cryo-EM images.

Library layout:

- :mod:`boxsieve.imgio` - MRC stack and feature/label CSV I/O
- :mod:`boxsieve.simulate` - ground-truth-labeled synthetic dataset generator
- :mod:`boxsieve.features` - the 12 hand-crafted discriminatory features
- :mod:`boxsieve.learners` - elementary classifiers (LDA, tree, kNN, linear SVM)
- :mod:`boxsieve.ensemble` - bagged majority-vote ensemble with greedy selection
- :mod:`boxsieve.metrics` - confusion statistics and ROC/AUC
- :mod:`boxsieve.cli` - command-line pipeline and the labeling HTTP server
"""

__version__ = "0.1.0"

from .metrics import Confusion, EvaluationReport, confusion, roc_auc, summarize

__all__ = [
    "Confusion",
    "EvaluationReport",
    "confusion",
    "roc_auc",
    "summarize",
    "__version__",
]
