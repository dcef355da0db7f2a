"""
Process-level settings for the DecAP lab.

Run-level hyperparameters live in the pydantic models of each module and are
collected by ``src.pipeline.RunConfig``; this file only holds what a user would
set once per machine (output root, logging, threading).
"""
from pathlib import Path

from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    """Application settings with environment variable support"""

    # Output
    DECAP_LAB_DIR: str = "runs"
    FLOAT_DIGITS: int = 17  # significant digits for text artifacts

    # Determinism / threading
    NUM_THREADS: int = 1  # 1 = single-thread, bit-deterministic mode
    ROLLOUT_WORKERS: int = 1

    # Evaluation probes during training
    EVAL_INTERVAL: int = 10
    EVAL_EPISODES: int = 2
    EVAL_STEPS: int = 400
    FINAL_RMSE_PROBES: int = 3

    # Imitation recording
    SETTLE_STEPS: int = 100

    # Application Settings
    LOG_LEVEL: str = "INFO"

    class Config:
        env_file = ".env"
        case_sensitive = True

    @property
    def output_root(self) -> Path:
        """Root directory for run artifacts"""
        return Path(self.DECAP_LAB_DIR)

    @property
    def bundled_robot_dir(self) -> Path:
        return Path(__file__).resolve().parents[1] / "data" / "robots"

    @property
    def bundled_config_dir(self) -> Path:
        return Path(__file__).resolve().parents[1] / "configs"


# Global settings instance
settings = Settings()
