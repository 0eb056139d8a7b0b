"""Source-only baseline, full pipeline and ablations on one shared dataset."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

from ..config import PipelineConfig
from .pipeline import train
from .scenes import datasets_for_config

# name -> config overrides; every variant sees the same data and seed
VARIANTS = {
    "baseline": {"adaptation_enabled": False},
    "full": {},
    "no_augm": {"augm_enabled": False},
    "no_flow": {"flow_module_enabled": False},
}


@dataclass
class TransferResult:
    accuracy: dict = field(default_factory=dict)
    seconds: dict = field(default_factory=dict)

    def table(self) -> str:
        rows = [f"{'variant':<10} {'accuracy':>8} {'seconds':>8}"]
        for name, acc in self.accuracy.items():
            rows.append(f"{name:<10} {acc:8.4f} {self.seconds[name]:8.1f}")
        return "\n".join(rows)


def run_transfer(cfg: PipelineConfig | None = None, variants=tuple(VARIANTS), data=None) -> TransferResult:
    """Train each variant from scratch and record held-out event accuracy."""
    cfg = cfg if cfg is not None else PipelineConfig()
    train_set, test_set = data if data is not None else datasets_for_config(cfg)
    res = TransferResult()
    for name in variants:
        t0 = time.perf_counter()
        out = train(cfg.replace(**VARIANTS[name]), train_set, test_set)
        res.accuracy[name] = out.accuracy
        res.seconds[name] = time.perf_counter() - t0
    return res
