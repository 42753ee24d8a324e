"""perfseer: GPU kernel performance models from symbolic features and
calibrated per-unit costs."""

__version__ = "0.1.0"

from perfseer.errors import (  # noqa: E402
    AssumptionError, CalibrationError, CountingError, ExecutorError, FeatureError, GeneratorError,
    IRError, ModelError, ParseError, PerfseerError,
)
from perfseer.kernel_lang import make_kernel, parse_kernel_file, print_kernel  # noqa: E402
from perfseer.ir import (  # noqa: E402
    Kernel, LaunchGeometry, assume, fix_parameters, launch_geometry, remove_work, split_iname,
    tag_inames,
)
from perfseer.counting import CountMap, count_kernel, count_points  # noqa: E402
from perfseer.features import evaluate_feature, gather_feature_values, parse_feature  # noqa: E402
from perfseer.model import Model, fit_model, parse_model, scale_features_by_output  # noqa: E402
from perfseer.uipick import ALL_GENERATORS, KernelCollection, MatchCondition, generate_kernels  # noqa: E402
from perfseer.executor import SyntheticDevice, SyntheticDeviceSpec, geo_mean_rel_error, summarize  # noqa: E402

__all__ = [
    "AssumptionError", "CalibrationError", "CountingError", "ExecutorError", "FeatureError",
    "GeneratorError", "IRError", "ModelError", "ParseError", "PerfseerError",
    "make_kernel", "parse_kernel_file", "print_kernel",
    "Kernel", "LaunchGeometry", "assume", "fix_parameters", "launch_geometry", "remove_work",
    "split_iname", "tag_inames",
    "CountMap", "count_kernel", "count_points",
    "evaluate_feature", "gather_feature_values", "parse_feature",
    "Model", "fit_model", "parse_model", "scale_features_by_output",
    "ALL_GENERATORS", "KernelCollection", "MatchCondition", "generate_kernels",
    "SyntheticDevice", "SyntheticDeviceSpec", "geo_mean_rel_error", "summarize",
    "__version__",
]
