"""
Shared utilities: configuration, logging, errors, progress and run manifests.
"""
