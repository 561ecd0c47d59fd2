"""Test suite for the triangle interpolation constants package."""
