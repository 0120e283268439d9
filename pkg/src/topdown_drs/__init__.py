"""Top-down discourse parsing by recursive split-point ranking."""
