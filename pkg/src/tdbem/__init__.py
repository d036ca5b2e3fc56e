"""Time-domain boundary elements for the wave equation on open screens."""
