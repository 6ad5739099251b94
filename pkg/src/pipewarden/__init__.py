"""Security analyzer for GitHub Actions workflow configurations."""

__version__ = "0.1.0"
