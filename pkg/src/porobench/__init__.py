"""Biot poroelasticity on polyhedral meshes: FV flow, VEM mechanics, monolithic and fixed-strain solution strategies."""

__version__ = "0.1.0"
