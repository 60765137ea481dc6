"""Pickup-and-delivery with time windows and transfers."""
