import numpy as np
import pytest

from multifractal_segmentation.raster_io import RasterBand
from multifractal_segmentation.segment import SegmentationMask


def _iou(test: SegmentationMask, reference: SegmentationMask) -> float:
    union = np.logical_or(test.water, reference.water).sum()
    if not union:
        return 1.0
    return float(np.logical_and(test.water, reference.water).sum() / union)


@pytest.fixture
def iou():
    """Intersection over union of the water sets of two masks."""
    return _iou


@pytest.fixture
def uniform_band() -> RasterBand:
    return RasterBand(name="uniform", values=np.full((1040, 1040), 0.25))
