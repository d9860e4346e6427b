"""Backend shim for the gate line protocol: real or stub inference engines
behind one request/response loop."""

__version__ = "0.1.0"
