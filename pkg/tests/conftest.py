import hypothesis
import numpy as np
import pytest

from aoglab.geometry import LayerGeometry, Rect
from aoglab.tensor_store import FeatureMapSet

hypothesis.settings.register_profile(
    "default", max_examples=60, deadline=None, derandomize=True
)
hypothesis.settings.load_profile("default")


def make_fm(tensor, *, stride=8, rf=16, offset=0, layer_id="conv", image_id="img"):
    """FeatureMapSet around a single (h, w, c) float array."""
    tensor = np.asarray(tensor, dtype=np.float32)
    g = LayerGeometry(
        layer_id=layer_id,
        grid_h=tensor.shape[0],
        grid_w=tensor.shape[1],
        channels=tensor.shape[2],
        stride_px=stride,
        rf_size_px=rf,
        offset_px=offset,
    )
    return FeatureMapSet(image_id=image_id, layers={layer_id: tensor}, geometries={layer_id: g})


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def full_image_box(fm, layer_id="conv"):
    g = fm.geometries[layer_id]
    side = g.offset_px + (max(g.grid_h, g.grid_w)) * g.stride_px + g.rf_size_px
    return Rect(0, 0, side, side), (side, side)
