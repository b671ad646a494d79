"""Sky-camera aided GNSS NLOS mitigation toolkit."""

__version__ = "0.1.0"
