"""Desk-scale laboratory for transferring monolingual transformer encoders to new languages."""

__version__ = "0.1.0"
