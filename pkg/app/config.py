from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    """Laboratory settings"""

    # Enumeration / search budgets
    ENUMERATION_CAP: int = 1_000_000
    ELUDER_SEARCH_CAP: int = 2_000_000

    # Numerics
    SVD_TOL: float = 1e-10
    PROBABILITY_FLOOR: float = 1e-300
    MARGIN_TOLERANCE: float = 1e-9

    # Learner
    BETA_CONSTANT: float = 1.0

    # Batch runs
    MAX_WORKERS: int = 1

    # Logging
    LOG_LEVEL: str = "INFO"

    class Config:
        env_file = ".env"
        env_prefix = "OMLELAB_"
        case_sensitive = True


settings = Settings()
