"""Synchronization certification for identical LTI agents over weighted digraphs."""
