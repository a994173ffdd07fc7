"""Tests for lobcalib."""
