"""Line-level Arabic handwritten text recognition pipeline."""

__version__ = "0.1.0"

RUN_DIR_ENV = "HATFORMER_RUN_DIR"
