"""Prometheus metrics for training runs.

Module-level prometheus_client singletons count engine work; the
``MetricsCollector`` mirrors them per run so the runner can write a
``metrics.prom`` file next to the trace.
"""
import time
from datetime import datetime
from typing import Any, Dict

from prometheus_client import Counter, Gauge, Histogram

svgd_iterations_total = Counter(
    "steinforge_svgd_iterations_total",
    "Total SVGD particle updates"
)
amortize_steps_total = Counter(
    "steinforge_amortize_steps_total",
    "Total amortized generator updates",
    ["rule"]
)
steingan_iterations_total = Counter(
    "steinforge_steingan_iterations_total",
    "Total SteinGAN outer iterations"
)
theta_updates_skipped_total = Counter(
    "steinforge_theta_updates_skipped_total",
    "Energy-model updates skipped by frozen pacing"
)
last_bandwidth = Gauge(
    "steinforge_last_bandwidth",
    "Kernel bandwidth used by the latest direction evaluation"
)
step_duration_seconds = Histogram(
    "steinforge_step_duration_seconds",
    "Wall time of one engine step in seconds"
)


class MetricsCollector:
    """Per-run mirror of the engine metrics."""

    def __init__(self):
        self._start_time = time.time()
        self._svgd_iterations = 0
        self._amortize_steps: Dict[str, int] = {}
        self._steingan_iterations = 0
        self._theta_skipped = 0
        self._pacing_modes: Dict[str, int] = {}
        self._last_bandwidth = 0.0
        self._step_duration_sum = 0.0
        self._step_duration_count = 0

    def increment_svgd_iteration(self):
        self._svgd_iterations += 1
        svgd_iterations_total.inc()

    def increment_amortize_step(self, rule: str):
        self._amortize_steps[rule] = self._amortize_steps.get(rule, 0) + 1
        amortize_steps_total.labels(rule=rule).inc()

    def increment_steingan_iteration(self, pacing_mode: str):
        self._steingan_iterations += 1
        self._pacing_modes[pacing_mode] = self._pacing_modes.get(pacing_mode, 0) + 1
        steingan_iterations_total.inc()

    def increment_theta_skipped(self):
        self._theta_skipped += 1
        theta_updates_skipped_total.inc()

    def set_bandwidth(self, h: float):
        self._last_bandwidth = float(h)
        last_bandwidth.set(h)

    def record_step_duration(self, seconds: float):
        self._step_duration_sum += seconds
        self._step_duration_count += 1
        step_duration_seconds.observe(seconds)

    def get_uptime_seconds(self) -> float:
        return time.time() - self._start_time

    def _avg_step_ms(self) -> float:
        if self._step_duration_count == 0:
            return 0.0
        return 1000.0 * self._step_duration_sum / self._step_duration_count

    def to_prometheus_format(self) -> str:
        """Export the run's metrics in Prometheus text format."""
        lines = [
            "# HELP steinforge_uptime_seconds Run wall time in seconds",
            "# TYPE steinforge_uptime_seconds gauge",
            f"steinforge_uptime_seconds {self.get_uptime_seconds():.2f}",
            "",
            "# HELP steinforge_svgd_iterations Total SVGD particle updates",
            "# TYPE steinforge_svgd_iterations counter",
            f"steinforge_svgd_iterations {self._svgd_iterations}",
            "",
            "# HELP steinforge_amortize_steps Amortized generator updates per rule",
            "# TYPE steinforge_amortize_steps counter",
        ]
        for rule, count in sorted(self._amortize_steps.items()):
            lines.append(f'steinforge_amortize_steps{{rule="{rule}"}} {count}')
        lines += [
            "",
            "# HELP steinforge_steingan_iterations Outer SteinGAN iterations per pacing mode",
            "# TYPE steinforge_steingan_iterations counter",
        ]
        for mode, count in sorted(self._pacing_modes.items()):
            lines.append(f'steinforge_steingan_iterations{{mode="{mode}"}} {count}')
        lines += [
            "",
            "# HELP steinforge_theta_updates_skipped Energy updates skipped while frozen",
            "# TYPE steinforge_theta_updates_skipped counter",
            f"steinforge_theta_updates_skipped {self._theta_skipped}",
            "",
            "# HELP steinforge_last_bandwidth Latest kernel bandwidth",
            "# TYPE steinforge_last_bandwidth gauge",
            f"steinforge_last_bandwidth {self._last_bandwidth:.6g}",
            "",
            "# HELP steinforge_avg_step_ms Average engine step duration in ms",
            "# TYPE steinforge_avg_step_ms gauge",
            f"steinforge_avg_step_ms {self._avg_step_ms():.3f}",
            "",
        ]
        return "\n".join(lines)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "uptime_seconds": round(self.get_uptime_seconds(), 2),
            "svgd_iterations": self._svgd_iterations,
            "amortize_steps": dict(self._amortize_steps),
            "steingan_iterations": self._steingan_iterations,
            "pacing_modes": dict(self._pacing_modes),
            "theta_updates_skipped": self._theta_skipped,
            "last_bandwidth": self._last_bandwidth,
            "avg_step_ms": round(self._avg_step_ms(), 3),
            "timestamp": datetime.now().isoformat(),
        }


_metrics = MetricsCollector()


def get_metrics() -> MetricsCollector:
    """Get the process-wide collector."""
    return _metrics


def reset_metrics() -> MetricsCollector:
    """Start a fresh per-run collector (the Prometheus singletons keep counting)."""
    global _metrics
    _metrics = MetricsCollector()
    return _metrics
