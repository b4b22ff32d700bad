"""Train one agent from a config file and print a coarse learning curve.

    python demos/train_one.py                         # FPG on CartPole
    python demos/train_one.py demos/configs/cartpole_a2c.cfg 3
"""

import sys
from pathlib import Path

import numpy as np

from fracpg.bench import episodes_to_threshold
from fracpg.config import load_config
from fracpg.envs import make_env
from fracpg.trainer import train

HERE = Path(__file__).parent


def main(argv):
    path = Path(argv[0]) if argv else HERE / "configs" / "cartpole_fpg.cfg"
    config = load_config(path)
    if len(argv) > 1:
        from dataclasses import replace

        config = replace(config, seed=int(argv[1]))
    print(f"{config.algo.value} on {config.env}, alpha={config.alpha}, seed={config.seed}, {config.max_episodes} episodes")
    art = train(config)
    r = art.returns
    block = 50
    for i in range(0, len(r), block):
        chunk = r[i : i + block]
        print(f"  episodes {i + 1:>4}-{i + len(chunk):<4} mean return {chunk.mean():7.1f}   max {chunk.max():5.0f}")
    threshold = make_env(config.env).spec.solved_threshold
    print(f"episodes to threshold {threshold:g}: {episodes_to_threshold(r, threshold)}")
    print(f"clip events in last episode: {art.rows[-1].clip_events if art.rows else 0}, bound violations: {art.bound_violations}")
    last = np.array([row.grad_var_window for row in art.rows[-10:]])
    print(f"windowed gradient-norm variance (last 10 episodes): {last.mean():.4g}")


if __name__ == "__main__":
    main(sys.argv[1:])
