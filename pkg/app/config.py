"""
Configuration for the projection laboratory
"""
from dotenv import load_dotenv
from pydantic_settings import BaseSettings, SettingsConfigDict

load_dotenv()


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="PROJLAB_", env_file=".env", extra="ignore")

    # ========== SUBSPACE ALGEBRA ==========
    # Orthonormality of stored bases
    ORTHO_TOL: float = 1e-12
    # Relative singular-value cutoff for numerical rank
    RANK_TOL: float = 1e-10
    # P(S) + P(S^perp) = I, entrywise
    DECOMPOSITION_TOL: float = 1e-10

    # ========== ENGINES ==========
    # Relative window for ties in the remotest / greedy argmax
    TIE_TOL: float = 1e-12
    PYTHAGORAS_RTOL: float = 1e-9
    # Runs stop once the iterate norm drops to this value
    STOP_NORM: float = 1e-300

    # ========== QUANTITIES ==========
    MEMBERSHIP_TOL: float = 1e-8
    MEMBERSHIP_DRIFT_TOL: float = 1e-7
    SNORM_TOL: float = 1e-8
    SNORM_MAX_ITER: int = 100_000
    SNORM_CHECK_EVERY: int = 20
    SPHERE_RESTARTS: int = 16
    SPHERE_ITERATIONS: int = 400
    GRID_STEP: float = 1e-3

    # ========== CERTIFICATION ==========
    LEDGER_TOL: float = 1e-9
    # s-norm tolerance used when only an upper bound is needed
    LEDGER_SNORM_TOL: float = 1e-6
    BAKERS_TIE_TOL: float = 1e-12
    UNDERFLOW_NORM: float = 1e-280
    R2_THRESHOLD: float = 0.99

    # ========== EXPERIMENTS ==========
    DEFAULT_SEED: int = 0
    SWEEP_WORKERS: int = 4
    SCHEMA_VERSION: str = "1"
    LOG_LEVEL: str = "INFO"

    def tolerances(self) -> dict:
        """Named tolerances, copied into every report."""
        return {
            "ortho_tol": self.ORTHO_TOL,
            "rank_tol": self.RANK_TOL,
            "decomposition_tol": self.DECOMPOSITION_TOL,
            "tie_tol": self.TIE_TOL,
            "pythagoras_rtol": self.PYTHAGORAS_RTOL,
            "membership_tol": self.MEMBERSHIP_TOL,
            "snorm_tol": self.SNORM_TOL,
            "ledger_tol": self.LEDGER_TOL,
            "bakers_tie_tol": self.BAKERS_TIE_TOL,
        }


settings = Settings()
