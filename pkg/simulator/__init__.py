"""Priority Pass grid traffic simulator."""
