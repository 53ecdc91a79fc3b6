"""Report styling (table cell formats)."""
