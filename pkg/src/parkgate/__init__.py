"""Vehicle entrance and parking management: gate pipeline, detection metrics,
loss mathematics, occupancy analysis, and the supporting stores and protocols."""

__version__ = "0.1.0"
