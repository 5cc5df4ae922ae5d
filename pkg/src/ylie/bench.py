"""CPU latency harness for the enhancement pipeline."""

from __future__ import annotations

import json
import os
import platform
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from threadpoolctl import threadpool_limits

from .colorspace import ImageBuffer
from .model.config import ModelConfig
from .model.params import ModelParams
from .model.pipeline import pipeline_forward

REFERENCE_CPU_MS = 124.1
REFERENCE_GPU_MS = 6.5
MIN_RUNS = 20
MIN_WARMUP = 5


@dataclass(frozen=True)
class BenchReport:
    height: int
    width: int
    threads: int
    warmup: int
    runs: int
    samples_ms: tuple[float, ...]
    noop_median_ms: float
    host: str
    extra: dict = field(default_factory=dict)

    @property
    def median_ms(self) -> float:
        return float(np.median(self.samples_ms))

    @property
    def mean_ms(self) -> float:
        return float(np.mean(self.samples_ms))

    @property
    def p95_ms(self) -> float:
        return float(np.percentile(self.samples_ms, 95))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["samples_ms"] = list(self.samples_ms)
        d.update(median_ms=self.median_ms, mean_ms=self.mean_ms, p95_ms=self.p95_ms,
                 reference_cpu_ms=REFERENCE_CPU_MS, reference_gpu_ms=REFERENCE_GPU_MS)
        return d

    def to_text(self) -> str:
        """One key=value pair per line."""
        d = self.to_dict()
        lines = []
        for key in ("height", "width", "threads", "warmup", "runs", "median_ms", "mean_ms", "p95_ms",
                    "noop_median_ms", "reference_cpu_ms", "reference_gpu_ms", "host"):
            v = d[key]
            lines.append(f"{key}={v:.4f}" if isinstance(v, float) else f"{key}={v}")
        for key, v in sorted(self.extra.items()):
            lines.append(f"{key}={v}")
        lines.append("samples_ms=" + ",".join(f"{s:.4f}" for s in self.samples_ms))
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def host_descriptor() -> str:
    cpu = platform.processor() or platform.machine()
    try:
        with open("/proc/cpuinfo", encoding="utf-8") as f:
            for line in f:
                if line.startswith("model name"):
                    cpu = line.split(":", 1)[1].strip()
                    break
    except OSError:
        pass
    return f"{cpu}; {os.cpu_count()} logical cpus; {platform.system()} {platform.release()}; " \
           f"python {platform.python_version()}; numpy {np.__version__}"


def time_callable(fn: Callable[[], object], runs: int, warmup: int) -> list[float]:
    """Wall-clock milliseconds per call, monotonic clock."""
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(runs):
        t0 = time.perf_counter_ns()
        fn()
        samples.append((time.perf_counter_ns() - t0) / 1e6)
    return samples


def bench_latency(params: ModelParams, config: ModelConfig, height: int, width: int, threads: int = 1,
                  runs: int = MIN_RUNS, warmup: int = MIN_WARMUP, seed: int = 0,
                  model: Callable[[ImageBuffer], object] | None = None) -> BenchReport:
    """Time the forward pass on an in-memory image; no file I/O in the timed region."""
    if runs < MIN_RUNS:
        raise ValueError(f"need at least {MIN_RUNS} measured runs, got {runs}")
    if warmup < MIN_WARMUP:
        raise ValueError(f"need at least {MIN_WARMUP} warmup runs, got {warmup}")
    if threads < 1:
        raise ValueError(f"threads must be positive, got {threads}")
    rng = np.random.default_rng(seed)
    img = ImageBuffer(rng.random((height, width, 3), dtype=np.float32), "RGB")
    if model is None:
        def model(x):
            return pipeline_forward(x, params, config)
    with threadpool_limits(limits=threads):
        samples = time_callable(lambda: model(img), runs, warmup)
        noop = time_callable(lambda: (lambda x: x)(img), runs, warmup)
    return BenchReport(height, width, threads, warmup, runs, tuple(samples), float(np.median(noop)),
                       host_descriptor())
