"""Fixed 14-channel montage: names, symmetric frontal/parietal/occipital pairs,
and approximate 10/20 scalp coordinates on the unit sphere.

Everything downstream assumes channels in CHANNELS order; loaders reorder
columns to match, so index i always means the same electrode.
"""

from __future__ import annotations

import numpy as np

CHANNELS = (
    "AF3", "F7", "F3", "FC5", "T7", "P7", "O1",
    "O2", "P8", "T8", "FC6", "F4", "F8", "AF4",
)

CHANNEL_INDEX = {name: i for i, name in enumerate(CHANNELS)}

LABELS = ("pleasure", "rage")
LABEL_INDEX = {name: i for i, name in enumerate(LABELS)}

# Left/right homologues whose initial adjacency entries are shifted by -1 so
# the learned graph can encode global (differential) asymmetry.
GLOBAL_PAIR_NAMES = (
    ("AF3", "AF4"),
    ("FC5", "FC6"),
    ("P7", "P8"),
    ("O1", "O2"),
)

GLOBAL_PAIRS = tuple(
    (CHANNEL_INDEX[a], CHANNEL_INDEX[b]) for a, b in GLOBAL_PAIR_NAMES
)


def _slerp(p: np.ndarray, q: np.ndarray, t: float) -> np.ndarray:
    """Point at fraction t along the great-circle arc from p to q (unit vectors)."""
    omega = np.arccos(np.clip(np.dot(p, q), -1.0, 1.0))
    return (np.sin((1.0 - t) * omega) * p + np.sin(t * omega) * q) / np.sin(omega)


def _build_coords() -> np.ndarray:
    """Unit-sphere electrode positions from the 10/20 construction.

    Axes: +x right ear, +y nasion, +z vertex.  The outer 10% ring
    (Fp/AF7/F7/FT7/T7/...) lies on the equator at 18 degree steps; midline
    electrodes sit on the front arc at 22.5 degree steps; intermediate
    positions are great-circle interpolations between ring and midline.
    """

    def ring(azimuth_deg: float) -> np.ndarray:
        a = np.radians(azimuth_deg)
        return np.array([-np.sin(a), np.cos(a), 0.0])

    def midline(inclination_deg: float) -> np.ndarray:
        a = np.radians(inclination_deg)
        return np.array([0.0, np.sin(a), np.cos(a)])

    af7, f7, ft7, t7, p7, o1 = (ring(d) for d in (36.0, 54.0, 72.0, 90.0, 126.0, 162.0))
    afz = midline(67.5)
    fz = midline(45.0)
    fcz = midline(22.5)

    left = {
        "AF3": _slerp(af7, afz, 0.5),
        "F7": f7,
        "F3": _slerp(f7, fz, 0.5),
        "FC5": _slerp(ft7, fcz, 0.25),
        "T7": t7,
        "P7": p7,
        "O1": o1,
    }
    coords = np.zeros((len(CHANNELS), 3))
    for name, pos in left.items():
        coords[CHANNEL_INDEX[name]] = pos
        mirror = "AF4 F8 F4 FC6 T8 P8 O2".split()["AF3 F7 F3 FC5 T7 P7 O1".split().index(name)]
        coords[CHANNEL_INDEX[mirror]] = pos * np.array([-1.0, 1.0, 1.0])
    return coords


# 14 x 3 array, row order matches CHANNELS.
ELECTRODE_COORDS = _build_coords()
ELECTRODE_COORDS.setflags(write=False)
