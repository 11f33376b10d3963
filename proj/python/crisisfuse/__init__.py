"""Python access to the crisisfuse C++ core."""

from ._crisisfuse import (
    ConfigError,
    CrisisfuseError,
    InputError,
    LabelError,
    classification_report,
    confusion_matrix,
    gradcheck,
    merge_label,
    preprocess_tweet,
    render_confusion_matrix,
    run_cli,
    split_counts,
    stopword_count,
    task_classes,
    vgg_fc2,
)

__all__ = [
    "ConfigError",
    "CrisisfuseError",
    "InputError",
    "LabelError",
    "classification_report",
    "confusion_matrix",
    "gradcheck",
    "merge_label",
    "preprocess_tweet",
    "render_confusion_matrix",
    "run_cli",
    "split_counts",
    "stopword_count",
    "task_classes",
    "vgg_fc2",
]
