"""Error-bounded multilevel compression and progressive refactoring of gridded arrays."""
