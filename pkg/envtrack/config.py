from pathlib import Path

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    # Число воркеров для внутренних пулов. Флаг `--threads` CLI приоритетнее;
    # результат от числа потоков не зависит (редукции идут в фиксированном порядке).
    THREADS: int = Field(default=1, ge=1)
    IS_DEBUG: bool = False
    # Файловые логи пишутся только если каталог задан; иначе — только stderr.
    LOGS_DIR: Path | None = None
    # Hawk (hawk.so) — трекер ошибок. Без токена отправка — no-op.
    HAWK_TOKEN: str | None = None
    DEFAULT_SEED: int = 0
    # Число перестановок для уровня случайности, если не задано флагом.
    CHANCE_PERMUTATIONS: int = Field(default=100, ge=1)

    model_config = SettingsConfigDict(
        env_prefix='ENVTRACK_', env_file='.env', extra='ignore'
    )


settings = Settings()
