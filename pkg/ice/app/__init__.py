"""
Application layer: settings, logging setup, documents and the CLI
"""
