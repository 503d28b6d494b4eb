"""Services that turn run configurations into solved problems and reports."""

# Modules are imported directly by the CLI and the routers.
