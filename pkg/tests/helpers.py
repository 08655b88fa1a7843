"""Small model builders shared by the test modules."""

import numpy as np

from langevin_ud.field import AnalyticField, QuadraticDistance, StationaryModel


def planar_field(a, name="plane"):
    a = np.asarray(a, dtype=float)
    return AnalyticField(lambda x: np.asarray(x) @ a, lambda x: np.broadcast_to(a, np.shape(x)).copy(), name)


def quadratic_model(beta=-10.0, center=(0.0, 0.0)):
    return StationaryModel((QuadraticDistance(np.array(center)),), np.array([beta]))
