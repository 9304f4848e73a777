"""Tests for pipeline stages."""
