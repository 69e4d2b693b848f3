"""Published confusion matrices (rows actual, columns predicted; W, N1, N2, N3, REM)
and the accuracy / MF1 / kappa / per-class F1 reported alongside them."""

import numpy as np

MATRICES = {
    "Sleep-EDF": np.array([
        [63640, 3739, 547, 29, 492],
        [3281, 9881, 6603, 50, 1707],
        [402, 2824, 62247, 1689, 1970],
        [38, 22, 2982, 9984, 13],
        [271, 1247, 2477, 10, 21830],
    ]),
    "MASS": np.array([
        [26022, 1960, 640, 37, 531],
        [1865, 10532, 3925, 12, 2875],
        [697, 2136, 98472, 4399, 2145],
        [69, 10, 5176, 25121, 7],
        [475, 1186, 1740, 4, 36779],
    ]),
    "Physio2018": np.array([
        [132475, 14656, 3866, 156, 650],
        [22437, 73624, 30750, 139, 7797],
        [5461, 19007, 329927, 16186, 6760],
        [336, 110, 23617, 78430, 94],
        [2138, 6084, 8307, 101, 100208],
    ]),
    "SHHS": np.array([
        [461447, 6500, 18513, 1586, 5367],
        [15077, 28570, 14861, 18, 6486],
        [19273, 12433, 636895, 29457, 19587],
        [899, 5, 36061, 186981, 240],
        [6534, 3521, 14650, 110, 218917],
    ]),
}

# acc %, mf1 %, kappa, per-class F1 % (W, N1, N2, N3, REM)
REPORTED = {
    "Sleep-EDF": (84.6, 79.0, 0.787, (93.5, 50.4, 86.5, 80.5, 84.2)),
    "MASS": (86.8, 82.5, 0.811, (89.2, 60.1, 90.4, 83.8, 89.1)),
    "Physio2018": (80.9, 78.9, 0.737, (84.2, 59.3, 85.3, 79.4, 86.3)),
    "SHHS": (87.9, 80.7, 0.830, (92.6, 49.2, 88.5, 84.5, 88.6)),
}

# Recall printed under each row of the published matrices, in percent.
RECALL_ROWS = {
    "Sleep-EDF": (93.0, 45.9, 90.0, 76.6, 84.5),
    "MASS": (89.1, 54.8, 91.3, 82.7, 91.5),
    "Physio2018": (87.3, 54.6, 87.4, 76.5, 85.8),
    "SHHS": (93.5, 43.9, 88.7, 83.4, 89.8),
}
