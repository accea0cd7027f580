from __future__ import annotations

import numpy as np
import pytest

from echofinder.config import RoiConfig, SynthConfig
from echofinder.models import BoundingBox, Echogram

FREQS = (67.0, 125.0, 200.0, 455.0)
BACKGROUND_DB = -62.0


@pytest.fixture
def make_echogram():
    def factory(data, frequencies=None, **meta) -> Echogram:
        values = np.asarray(data, dtype=np.float32)
        if values.ndim == 2:
            values = values[np.newaxis]
        freqs = frequencies if frequencies is not None else FREQS[: values.shape[0]]
        if len(freqs) < values.shape[0]:
            freqs = tuple(float(10 * (i + 1)) for i in range(values.shape[0]))
        return Echogram(data=values, frequencies_khz=tuple(freqs), **meta)

    return factory


@pytest.fixture
def blob_echogram(make_echogram):
    """恒定背景上放置亮矩形；channels 指定矩形出现的通道。"""

    def factory(box: BoundingBox, channels=(0, 1, 2, 3), width=120, height=100, level_db=-32.0) -> Echogram:
        data = np.full((4, height, width), BACKGROUND_DB, dtype=np.float32)
        for c in channels:
            data[c, box.y : box.y2, box.x : box.x2] = level_db
        return make_echogram(data)

    return factory


@pytest.fixture
def small_synth() -> SynthConfig:
    return SynthConfig(
        width=240,
        height=160,
        n_schools=(2, 2),
        school_height_px=(50, 90),
        school_width_px=(8, 16),
        n_decoys=(0, 1),
        n_plumes=(0, 1),
        plume_height_px=(30, 60),
        n_clutter=30,
        max_attempts=500,
    )


@pytest.fixture
def roi_config() -> RoiConfig:
    return RoiConfig()
