"""Deterministic lunar-rover autonomy simulation: world model, two-layer EKF
localization with plant homing, 4WS driving, navigation, excavator arm and
mission executive."""

__version__ = "0.1.0"
