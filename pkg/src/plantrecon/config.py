"""Pipeline configuration with published defaults where available;
unknown keys in a config file are rejected."""

import dataclasses
import json
from dataclasses import dataclass


@dataclass
class PipelineConfig:
    # Objective / quality weights.
    alpha: float = 2e-7
    beta: float = 1.4
    gamma: float = 0.3
    tau: float = 10.0
    # Sampling and search sizes.
    sample_spacing_mm: float = 7.5
    top_k: int = 200
    candidates_per_tip: int = 5
    runs: int = 1000            # desk-scale default; raise via --runs
    lm_max_iters: int = 100
    # Silhouette / tip thresholds.
    mask_threshold: int = 128
    tip_radius_px: float = 5.0
    epipolar_px: float = 8.0
    reproj_px: float = 12.0
    merge_mm: float = 10.0
    novelty_px: int = 150
    silhouette_px: float = 5.0
    # Assembly / measurement.
    stroke_width: int = 3
    coverage_width: int = 1
    min_candidate_dist_mm: float = 10.0
    divergence_mm: float = 5.0
    # Database handling.
    database: str = ""
    augment_count: int = 100
    augment_seed: int = 0

    def validate(self):
        if self.alpha < 0 or self.beta < 0 or self.gamma < 0:
            raise ValueError("alpha, beta, gamma must be >= 0")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.top_k < 1 or self.candidates_per_tip < 1 or self.runs < 1:
            raise ValueError("top_k, candidates_per_tip, runs must be >= 1")
        if not 0 <= self.mask_threshold <= 255:
            raise ValueError("mask_threshold must be in [0, 255]")
        return self

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data).validate()

    @classmethod
    def from_file(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))
