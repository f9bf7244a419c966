"""Built-in scenario files shipped with the package."""
