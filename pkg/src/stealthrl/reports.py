from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class EpisodeReport:
    seed: int
    method: str = "clean"
    param: float | str = ""
    ret: float = 0.0
    length: int = 0
    done_cause: str = "running"
    attacked_steps: list = field(default_factory=list)
    linf: list = field(default_factory=list)
    l2: list = field(default_factory=list)
    craft_success: list = field(default_factory=list)
    # one entry per trigger: DAM for critical-point, c for strategically-timed, p for antagonist
    diagnostics: list = field(default_factory=list)
    rewards: list = field(default_factory=list)

    @property
    def attack_count(self) -> int:
        return len(self.attacked_steps)

    @property
    def max_linf(self) -> float:
        return max(self.linf, default=0.0)

    @property
    def mean_linf(self) -> float:
        return sum(self.linf) / len(self.linf) if self.linf else 0.0

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "method": self.method,
            "param": self.param,
            "return": self.ret,
            "length": self.length,
            "done_cause": self.done_cause,
            "attack_count": self.attack_count,
            "attacked_steps": list(self.attacked_steps),
            "craft_success": list(self.craft_success),
            "linf": list(self.linf),
            "l2": list(self.l2),
            "diagnostics": list(self.diagnostics),
        }
