from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="MATROID_PROPHET_", env_file=".env", extra="ignore")

    LOG_DIR: str = "logs"
    LOG_LEVEL: str = "INFO"

    # exhaustive computations refuse beyond these sizes
    ENUMERATION_LIMIT: int = 1_000_000
    ADVERSARY_OUTCOME_LIMIT: int = 100_000
    GAME_TREE_LIMIT: int = 1_000_000
    FEASIBLE_FAMILY_LIMIT: int = 200_000
    EXPLICIT_AXIOM_LIMIT: int = 12
    DP_TABLE_CAP: int = 200_000

    MC_INNER_TRIALS: int = 2_000
    MC_SIGMA: float = 3.0
    TRIAL_BLOCK_SIZE: int = 1_000
    REGULARITY_GRID_MIN: int = 16
    RATIONAL_DENOMINATOR: int = 10**12


Config = Settings()
