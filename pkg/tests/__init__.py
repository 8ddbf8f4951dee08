"""Tests for the aoii_csmdp package."""
