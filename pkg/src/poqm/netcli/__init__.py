"""Command line, wire format, reports and networked sessions."""
