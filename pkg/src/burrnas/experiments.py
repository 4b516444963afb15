"""End-to-end synthetic replication of the searched-vs-FPN comparison across a domain shift."""

from __future__ import annotations

from dataclasses import dataclass

from .archspace import Architecture, decode, fpn_like
from .childeval import MicroDetConfig, MicroDetEvaluator
from .controller import SearchConfig, SearchLog, run_search
from .pipeline import augment_flip, unwrap_dataset
from .synthdata import DOMAIN_PRESETS, SplitRatios, generate_domain, split_1_2_1, with_domain_shift


@dataclass
class ShiftResult:
    seed: int
    searched: str
    searched_map: dict[str, float]
    baseline_map: dict[str, float]
    log: SearchLog

    @property
    def holds(self) -> bool:
        """Searched keeps up in-domain (within 0.02) and wins off-domain."""
        return (self.searched_map["A"] >= self.baseline_map["A"] - 0.02
                and self.searched_map["B"] > self.baseline_map["B"])


def domain_shift_run(seed: int, n_a: int = 48, n_b: int = 24, T: int = 3, trials: int = 150,
                     child_iters: int = 300, brightness_delta: float = -40.0, noise_factor: float = 2.0,
                     baseline: Architecture | None = None) -> ShiftResult:
    """Search on domain A, then compare the winner with an FPN-style chain on A and a shifted B.

    ``n_a = 48`` gives a 12/24/12 nas/train/eval split.
    """
    params_a = DOMAIN_PRESETS["A"]
    params_b = with_domain_shift(params_a, "B", brightness_delta, noise_factor,
                                 texture_seed=params_a.texture_seed + 1)
    domain_a = generate_domain(params_a, n_a, 1_000_000 + 1000 * seed)
    domain_b = generate_domain(params_b, n_b, 2_000_000 + 1000 * seed)
    polar_a, _ = unwrap_dataset(domain_a, seed=seed)
    polar_b, _ = unwrap_dataset(domain_b, seed=seed)
    nas, train, held = split_1_2_1(polar_a, SplitRatios(), seed)

    cfg = MicroDetConfig(train_iters=child_iters)
    train_aug = augment_flip(train.samples)
    reward = MicroDetEvaluator(train_aug, augment_flip(nas.samples), cfg, seed=seed)
    log = run_search(SearchConfig(T=T, trials=trials, child_iters=child_iters, seed=seed), reward)
    searched = decode(log.best.arch)
    baseline = baseline or fpn_like()

    scores = {}
    for name, test in (("A", held.samples), ("B", polar_b.samples)):
        ev = MicroDetEvaluator(train_aug, test, cfg, seed=seed)
        scores[name] = (ev(searched), ev(baseline))
    return ShiftResult(
        seed=seed,
        searched=log.best.arch,
        searched_map={k: v[0] for k, v in scores.items()},
        baseline_map={k: v[1] for k, v in scores.items()},
        log=log,
    )
