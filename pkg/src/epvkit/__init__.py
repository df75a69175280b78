"""epvkit: expected possession value engine for soccer tracking data.

Turns 10 Hz tracking frames and on-ball event logs into a per-frame
expected-possession-value estimate, decomposed over pass/drive/shot
options with full destination surfaces, plus the training, calibration,
analytics, and serving machinery around it.
"""

__version__ = "0.1.0"
