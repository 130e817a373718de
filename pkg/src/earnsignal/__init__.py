"""Hard/soft earnings-announcement signal extraction and evaluation."""

__version__ = "0.1.0"
