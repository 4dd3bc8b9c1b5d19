"""artikin application package."""
