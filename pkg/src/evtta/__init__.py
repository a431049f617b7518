"""Test-time adaptation for event-camera recognition."""
