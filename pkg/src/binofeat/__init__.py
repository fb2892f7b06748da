"""Binary local features learned with a straight-through sign, and an RGB-D tracker that uses them."""

__version__ = "0.1.0"
