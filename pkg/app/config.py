from functools import lru_cache

from pydantic import Field, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_file=(".env",),
        env_file_encoding="utf-8",
        extra="ignore",
        case_sensitive=False,
    )

    tail_mass_epsilon: float = Field(default=1e-10, alias="PRIOR_TAIL_EPSILON")
    k_hard_cap: int = Field(default=500, alias="PRIOR_K_HARD_CAP")
    min_covered_mass_warn: float = Field(
        default=0.999,
        alias="PRIOR_MIN_COVERED_MASS",
    )

    threads: int = Field(default=1, alias="PRIOR_THREADS")
    default_quantile: float = Field(default=0.99, alias="PRIOR_QUANTILE")

    mc_draw_budget: int = Field(default=100_000_000, alias="PRIOR_MC_DRAW_BUDGET")
    mc_block_size: int = Field(default=10_000, alias="PRIOR_MC_BLOCK_SIZE")

    log_level: str = Field(default="INFO", alias="LOG_LEVEL")

    @model_validator(mode="after")
    def _validate_values(self) -> "Settings":
        if not 0.0 < self.tail_mass_epsilon < 1.0:
            raise ValueError("PRIOR_TAIL_EPSILON должен лежать в интервале (0, 1).")

        if self.k_hard_cap <= 0:
            raise ValueError("PRIOR_K_HARD_CAP должен быть положительным.")

        if not 0.0 < self.min_covered_mass_warn < 1.0:
            raise ValueError("PRIOR_MIN_COVERED_MASS должен лежать в интервале (0, 1).")

        if self.threads <= 0:
            raise ValueError("PRIOR_THREADS должен быть положительным.")

        if not 0.0 < self.default_quantile < 1.0:
            raise ValueError("PRIOR_QUANTILE должен лежать в интервале (0, 1).")

        if self.mc_draw_budget <= 0:
            raise ValueError("PRIOR_MC_DRAW_BUDGET должен быть положительным.")

        if self.mc_block_size <= 0:
            raise ValueError("PRIOR_MC_BLOCK_SIZE должен быть положительным.")

        return self


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    return Settings()


def reload_settings() -> None:
    get_settings.cache_clear()
