"""A few minutes from nothing to a trained pursuing team on a small grid.

Two pursuers chase one evader on a 2x2 grid.  The evader table is pretrained
against random pursuers first, then the pursuers learn with and without the
mutual-information term and both are evaluated greedily on the same scenes.
"""

from dataclasses import replace

from teampursuit import trainer
from teampursuit.evader_policy import EvaderTrainConfig, pretrain
from teampursuit.road_network import build_grid
from teampursuit.traffic_sim import SimConfig

net = build_grid(2, 2, 100.0)
sim = SimConfig(num_pursuers=2, num_evaders=1, num_background=4, max_steps=200)
print(f"{net.num_lanes} lanes, {sim.num_pursuers} pursuers, {sim.num_evaders} evader")

tables, log = pretrain(net, sim, EvaderTrainConfig(episodes=200, seed=0))
print(f"evader table: {len(tables[0])} entries after {len(log)} episodes")

cfg = trainer.TrainConfig(episodes=100, batch_size=16, seed=0)
scenes = list(range(500, 520))
for name, weight in (("full", 1.0), ("no-mi", 0.0)):
    learner, metrics = trainer.train(net, sim, replace(cfg, mi_weight=weight), tables)
    s = trainer.evaluate(net, sim, learner, tables, len(scenes), scenes)
    last = metrics[-10:]
    print(f"{name:6s} train return (last 10) {sum(m.undiscounted for m in last) / 10:8.2f}  "
          f"eval completion step {s['mean_completion_step']:6.1f}  capture rate {s['capture_rate']:.2f}")
