"""Run the helmddm API with uvicorn."""

import uvicorn

from helmddm.core.config import get_settings


def main() -> None:
    settings = get_settings()
    uvicorn.run(
        "helmddm.main:app",
        host="0.0.0.0",
        port=8000,
        reload=not settings.is_production,
        log_config=None,
    )


if __name__ == "__main__":
    main()
