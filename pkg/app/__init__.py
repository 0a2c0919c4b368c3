__version__ = "0.1.0"

VERSION_TAG = f"drygame-{__version__}"
