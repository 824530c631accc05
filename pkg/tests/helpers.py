import numpy as np

from roomenv.core import AxisConvention, CameraModel


def make_camera(fx=100.0, fy=100.0, cx=50.0, cy=50.0, width=100, height=100,
                T=None, convention=AxisConvention.Y_DOWN_Z_FORWARD):
    return CameraModel(
        fx=fx, fy=fy, cx=cx, cy=cy, width=width, height=height,
        world_to_camera=np.eye(4) if T is None else T,
        convention=convention,
    )
