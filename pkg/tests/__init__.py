"""Tests for degenpop."""
