"""edgefarm: a fully local precision-irrigation stack.

Subpackages cover the pipeline end to end: telemetry preprocessing,
synthetic dataset generation, from-scratch tree ensembles, the compact
on-device model format, an MQTT 3.1.1 data plane, the autonomous edge
node, a closed-loop field simulator, and the local edge server.
"""

__version__ = "0.1.0"
