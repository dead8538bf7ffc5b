"""Cross-scale thematic agreement between gridded presence maps.

Compares a test grid against a reference grid over an OR-aggregated
resolution pyramid and ranks each natively misclassified pixel by the level
at which its block first agrees, giving a surface of how likely each
disagreement is an artefact of small positional offsets.
"""

__version__ = "0.1.0"

from crossscale.grid import (  # noqa: E402
    NODATA,
    AlignmentError,
    BinaryGrid,
    CountGrid,
    GridHeader,
    align_check,
    binarize,
    or_downsample,
    upsample_nn,
)
from crossscale.asciigrid import read_ascii_grid, write_ascii_grid  # noqa: E402
from crossscale.agreement import (  # noqa: E402
    AgreementClass,
    AgreementGrid,
    ProbabilityMapping,
    SwitchResult,
    build_cube,
    build_pyramid,
    classify_agreement,
    composite_surface,
    offset_probability,
    switch_level,
)
from crossscale.metrics import (  # noqa: E402
    adjusted_disagreement,
    build_report,
    confusion_matrix,
    derived_measures,
)
from crossscale.rasterize import PointRecord, load_points_csv, points_to_counts  # noqa: E402
from crossscale.synth import (  # noqa: E402
    SceneSpec,
    expected_surface,
    generate_scene,
    shared_block_level,
)
from crossscale.pipeline import compare_files, compare_grids  # noqa: E402
