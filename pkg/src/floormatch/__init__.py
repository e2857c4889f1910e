"""Cross-modal floorplan / photograph matching at desk scale."""

__version__ = "0.1.0"
