from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        env_prefix="MANET_",
        case_sensitive=False,
        extra="ignore"
    )

    # Run concurrency settings
    max_concurrent_runs: int = 2
    # Process pool for CPU-bound runs; threads when disabled (tests, debugging)
    use_process_pool: bool = True

    # Run persistence
    run_db_path: str = "data/run_store.sqlite"

    # Default output directory when a plan or --out gives none
    output_dir: str = "results"

    # Radial CDF table size used by mobility shapes
    shape_resolution: int = 4096

    # Consistency checks inside the engine (conservation, single copy,
    # exhaustive protocol-model check); slow, meant for test builds
    verify_invariants: bool = False

    # Queue length above which a run is flagged unstable
    queue_cap: int = 10000

    # Bounds on optional per-run detail
    trace_cap: int = 10000
    service_sample_cap: int = 200000

    log_level: str = "INFO"


settings = Settings()
