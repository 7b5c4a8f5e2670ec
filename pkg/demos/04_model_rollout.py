"""
A toy generative model in closed loop
=====================================

Train a small transformer on Hawkes tokens, let it drive the simulator,
then push it with extra sell orders. Takes a few minutes on one CPU.
"""

import math

import numpy as np

from orderflow import evaluation as ev, model, presets, rollout, tokenizer
from orderflow.baselines import simulate_hawkes

p = presets.pressure_hawkes(**presets.CLUSTERED_HAWKES)
schema = tokenizer.calibrate(presets.universe())
seqs = [tokenizer.encode_stream(simulate_hawkes(p, n_events=12_500, seed=s).to_stream(), schema)
        for s in range(4)]

res = model.train(seqs, model.ModelConfig(), model.TrainConfig(steps=200, eval_every=50, warmup=40))
for step, train_loss, val_loss in res.curve:
    print(f"step {step:4d} train {train_loss:.3f} val {val_loss:.3f}")
print("uniform guess would be", round(math.log(16384), 3))

ctx = seqs[3][-127:]
cfg = rollout.RolloutConfig(schema, context=ctx, horizon=1024, seed=0, liquidity=int(ctx[-1, 0]))
out = rollout.run_rollout(cfg, res.model)[0]
gen = np.array([e.interarrival for e in out.generated_events()])
ref = np.diff(simulate_hawkes(p, n_events=20_000, seed=99).times())
print("K-S of generated interarrivals vs the generator:", round(ev.ks_distance(gen, ref), 3))

cfg = rollout.RolloutConfig(schema, context=ctx, horizon=256, n_rollouts=10, seed=0, liquidity=int(ctx[-1, 0]))
base = np.mean([r.terminal_midprice for r in rollout.run_rollout(cfg, res.model)])
sell = np.mean([r.terminal_midprice for r in rollout.inject_counterfactual(cfg, res.model, 1)])
print(f"terminal mid: base {base:.3f}, with 10x sell pressure {sell:.3f}")
