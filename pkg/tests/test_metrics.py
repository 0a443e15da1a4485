import re

from core.metrics import MetricsCollector, get_metrics, reset_metrics


def test_metrics_prometheus_format():
    """Exposition text carries the steinforge series."""
    collector = MetricsCollector()
    collector.increment_svgd_iteration()
    collector.increment_amortize_step("chain_rule")
    collector.increment_amortize_step("chain_rule")
    collector.increment_steingan_iteration("frozen")
    collector.increment_theta_skipped()
    collector.set_bandwidth(0.25)
    body = collector.to_prometheus_format()
    # Basic Prometheus exposition checks
    assert "steinforge_svgd_iterations 1" in body
    assert 'steinforge_amortize_steps{rule="chain_rule"} 2' in body
    assert 'steinforge_steingan_iterations{mode="frozen"} 1' in body
    assert "steinforge_theta_updates_skipped 1" in body
    assert "steinforge_last_bandwidth 0.25" in body
    match = re.search(r"steinforge_uptime_seconds (\d+\.\d+)", body)
    assert match, "uptime metric missing numeric value"


def test_metrics_dict():
    """Dictionary view of the collector."""
    collector = MetricsCollector()
    collector.record_step_duration(0.002)
    collector.record_step_duration(0.004)
    data = collector.to_dict()
    for key in ["uptime_seconds", "svgd_iterations", "amortize_steps", "pacing_modes", "avg_step_ms"]:
        assert key in data
    assert data["avg_step_ms"] == 3.0


def test_reset_gives_fresh_collector():
    """reset_metrics starts from zero."""
    get_metrics().increment_svgd_iteration()
    fresh = reset_metrics()
    assert fresh is get_metrics()
    assert fresh.to_dict()["svgd_iterations"] == 0
