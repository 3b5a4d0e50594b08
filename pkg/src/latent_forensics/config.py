from __future__ import annotations

import os

from dotenv import load_dotenv

load_dotenv()


class Config:
    # Runtime Configuration
    DEBUG: bool = os.getenv("DEBUG", "False").lower() == "true"
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "DEBUG" if DEBUG else "INFO").upper()

    # Run Directories
    RUNS_DIR: str = os.getenv("RUNS_DIR", "./runs")

    # Parallelism
    WORKERS: int = int(os.getenv("WORKERS", "1"))
    INVERSION_BATCH_SIZE: int = int(os.getenv("INVERSION_BATCH_SIZE", "32"))


# Validate environment-provided settings
def validate_config():
    problems: list[str] = []
    if Config.WORKERS < 1:
        problems.append("WORKERS")
    if Config.INVERSION_BATCH_SIZE < 1:
        problems.append("INVERSION_BATCH_SIZE")
    if Config.LOG_LEVEL not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
        problems.append("LOG_LEVEL")

    if problems:
        raise ValueError(f"Invalid environment variables: {', '.join(problems)}")


# Create directories if they don't exist
def create_directories(*extra: str):
    directories = [Config.RUNS_DIR, *extra]

    for directory in directories:
        os.makedirs(directory, exist_ok=True)
