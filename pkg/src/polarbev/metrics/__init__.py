"""BEV segmentation metrics: IoU, instance decoding and panoptic quality."""

from .core import PanopticResult, canonicalize, decode_instances, iou, match_instances, panoptic_quality
from .report import REPORT_SCHEMA, RectPrediction, evaluate, read_pgm, write_pgm
from .setting import SETTING_1, SETTING_2, EvalSetting

__all__ = [
    "REPORT_SCHEMA", "SETTING_1", "SETTING_2", "EvalSetting", "PanopticResult", "RectPrediction",
    "canonicalize", "decode_instances", "evaluate", "iou", "match_instances", "panoptic_quality",
    "read_pgm", "write_pgm",
]
