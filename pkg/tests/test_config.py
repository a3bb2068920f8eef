import pytest

from app.config import get_settings, reload_settings
from app.model_priors import TruncationPolicy


def _set_common_env(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setenv("PRIOR_TAIL_EPSILON", "1e-8")
    monkeypatch.setenv("PRIOR_K_HARD_CAP", "200")
    monkeypatch.setenv("PRIOR_MIN_COVERED_MASS", "0.99")
    monkeypatch.setenv("PRIOR_THREADS", "4")
    monkeypatch.setenv("PRIOR_QUANTILE", "0.95")
    monkeypatch.setenv("PRIOR_MC_BLOCK_SIZE", "500")
    monkeypatch.setenv("LOG_LEVEL", "DEBUG")


def test_get_settings_reads_environment(monkeypatch: pytest.MonkeyPatch) -> None:
    reload_settings()
    _set_common_env(monkeypatch)

    settings = get_settings()

    assert settings.tail_mass_epsilon == 1e-8
    assert settings.k_hard_cap == 200
    assert settings.threads == 4
    assert settings.default_quantile == 0.95
    assert settings.mc_block_size == 500
    assert settings.log_level == "DEBUG"
    reload_settings()


def test_truncation_policy_from_settings(monkeypatch: pytest.MonkeyPatch) -> None:
    reload_settings()
    _set_common_env(monkeypatch)

    policy = TruncationPolicy.from_settings()

    assert policy == TruncationPolicy(tail_mass_epsilon=1e-8, hard_cap=200, min_covered_mass_warn=0.99)
    reload_settings()


def test_defaults_without_environment(monkeypatch: pytest.MonkeyPatch) -> None:
    for name in ("PRIOR_TAIL_EPSILON", "PRIOR_K_HARD_CAP", "PRIOR_THREADS", "PRIOR_MC_DRAW_BUDGET"):
        monkeypatch.delenv(name, raising=False)
    reload_settings()

    settings = get_settings()

    assert settings.tail_mass_epsilon == 1e-10
    assert settings.k_hard_cap == 500
    assert settings.threads == 1
    assert settings.mc_draw_budget == 100_000_000


@pytest.mark.parametrize(
    "name, value",
    [
        ("PRIOR_TAIL_EPSILON", "0"),
        ("PRIOR_K_HARD_CAP", "0"),
        ("PRIOR_MIN_COVERED_MASS", "1.5"),
        ("PRIOR_THREADS", "-1"),
        ("PRIOR_QUANTILE", "1"),
    ],
)
def test_invalid_values_rejected(monkeypatch: pytest.MonkeyPatch, name: str, value: str) -> None:
    reload_settings()
    monkeypatch.setenv(name, value)

    with pytest.raises(ValueError):
        get_settings()
    reload_settings()
