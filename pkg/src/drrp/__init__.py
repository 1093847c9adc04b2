"""Two-stage rebalancing and routing for shared-mobility fleets."""

__version__ = "0.1.0"
