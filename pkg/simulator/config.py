import os
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

from dotenv import load_dotenv

load_dotenv()

ENGINE_VERSION = "1.0.0"


@dataclass
class LoggingConfig:
    """Logging configuration settings"""
    level: str = "INFO"
    file: Optional[str] = None


@dataclass
class RunnerConfig:
    """Worker pool and output settings"""
    jobs: Optional[int] = None  # None -> physical cores
    output_dir: str = "results"


@dataclass
class DynamicsDefaults:
    """Link-queue dynamics defaults"""
    saturation_headway: float = 2.0  # s/veh/lane
    effective_vehicle_length: float = 7.5  # m
    step: float = 1.0


@dataclass
class AuctionDefaults:
    """Auction controller defaults that are not optimized"""
    t_max: int = 120
    t_trans: int = 3


@dataclass
class CacheConfig:
    """Evaluation cache settings"""
    max_size: int = 50000


@dataclass
class Config:
    """Complete process configuration"""
    logging: LoggingConfig
    runner: RunnerConfig
    dynamics: DynamicsDefaults
    auction: AuctionDefaults
    cache: CacheConfig

    @classmethod
    def from_env(cls) -> 'Config':
        """Create configuration from environment variables"""
        jobs = os.getenv("PP_JOBS")
        return cls(
            logging=LoggingConfig(
                level=os.getenv("PP_LOG_LEVEL", "INFO"),
                file=os.getenv("PP_LOG_FILE") or None
            ),
            runner=RunnerConfig(
                jobs=int(jobs) if jobs else None,
                output_dir=os.getenv("PP_OUTPUT_DIR", "results")
            ),
            dynamics=DynamicsDefaults(
                saturation_headway=float(os.getenv("PP_SATURATION_HEADWAY", "2.0")),
                effective_vehicle_length=float(os.getenv("PP_VEHICLE_LENGTH", "7.5"))
            ),
            auction=AuctionDefaults(
                t_max=int(os.getenv("PP_T_MAX", "120")),
                t_trans=int(os.getenv("PP_T_TRANS", "3"))
            ),
            cache=CacheConfig(
                max_size=int(os.getenv("PP_CACHE_MAX_SIZE", "50000"))
            )
        )


@lru_cache()
def get_config() -> Config:
    """Get cached configuration instance"""
    return Config.from_env()


def is_test_environment() -> bool:
    """Check if running in test environment"""
    return (
        'pytest' in __import__('sys').modules or
        bool(os.getenv("PYTEST_CURRENT_TEST") or os.getenv("PYTEST_ADDOPTS") or os.getenv("PYTEST_RUNNING"))
    )
