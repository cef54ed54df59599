"""Tests for forestleak."""
