"""Multi-agent DDPG + graph convolution control of connected vehicles at
highway lane-drop bottlenecks, with a self-contained microscopic traffic
simulator and rule-based baseline."""

__version__ = "0.1.0"
