"""Flat `key = value` run configuration.

Keys are namespaced (`train.lr`, `sampler.n`); every key must appear in
the registry below, so a typo is a hard error instead of a silently
ignored setting.  Values are typed by the registry entry.  Lines starting
with `#` and blank lines are skipped.
"""

from __future__ import annotations

import math


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (type constructor, default)
REGISTRY = {
    # synthetic scene and event generation
    "sim.preset": (str, "checker-sphere"),
    "sim.size": (int, 64),
    "sim.views": (int, 60),
    "sim.t_span": (float, 2.0),
    "sim.radius": (float, 3.0),
    "sim.height": (float, 0.8),
    "sim.phase": (float, 0.0),
    "sim.focal": (float, 0.0),      # 0 derives focal = size pixels
    "sim.contrast": (float, 0.1),
    "sim.offset": (float, 1e-3),
    "sim.jitter": (_bool, False),
    # contrast-maximization motion prior
    "motion.model": (str, "translation"),
    "motion.window": (float, 0.25),
    "motion.lr": (float, 2.0),
    "motion.iters": (int, 150),
    # radiance field architecture
    "field.depth": (int, 4),
    "field.width": (int, 64),
    "field.l_pos": (int, 6),
    "field.l_dir": (int, 2),
    "field.include_input": (_bool, True),
    # rendering
    "render.n_coarse": (int, 32),
    "render.n_fine": (int, 32),
    "render.t_near": (float, 1.0),
    "render.t_far": (float, 6.0),
    "render.chunk": (int, 4096),
    # patch sampling
    "sampler.n": (int, 2),
    "sampler.offset": (float, 1.0),
    "sampler.density_guided": (_bool, True),
    # training
    "train.alpha": (float, 1.0),
    "train.beta": (float, 0.01),
    "train.gamma": (float, 0.01),
    "train.lr": (float, 1e-5),
    "train.steps": (int, 1000),
    "train.patches": (int, 16),
    "train.window_min": (float, 1.0 / 60.0),
    "train.window_max": (float, 0.1),
    "train.b": (float, 1e-3),
    "train.epsilon_depth": (float, 1e-6),
    "train.ao_tau_max": (float, 0.9),
    "train.ao_warmup_steps": (int, 0),
    "train.literal_reciprocal": (_bool, False),
    "train.checkpoint_every": (int, 0),
    "train.seed": (int, 0),
}


def default_config() -> dict:
    return {key: default for key, (_, default) in REGISTRY.items()}


def parse_config(text: str, source: str = "<config>") -> dict:
    """Full config dict: defaults overlaid with the file's assignments."""
    values = default_config()
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in REGISTRY:
            raise ConfigError(f"{source}:{lineno}: unknown key '{key}'")
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: duplicate key '{key}'")
        seen.add(key)
        ctor, _ = REGISTRY[key]
        try:
            parsed = ctor(value)
        except ValueError as e:
            raise ConfigError(f"{source}:{lineno}: bad value for '{key}': {e}") \
                from e
        if isinstance(parsed, float) and not math.isfinite(parsed):
            raise ConfigError(f"{source}:{lineno}: '{key}' must be finite")
        values[key] = parsed
    return values


def load_config(path) -> dict:
    with open(path) as f:
        return parse_config(f.read(), source=str(path))
