"""Tests for the nrsfm reconstruction toolkit."""
