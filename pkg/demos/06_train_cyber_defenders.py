"""Short head-to-head: communicating defenders vs the QMix baseline.

Toy-scale training on the small network (both far below the scaled
protocol), printed side by side.  For real runs use the CLI:

    cyberdial train --algo dial --scenario small --seed 0 \
        --epochs 1000 --episodes 32 --out runs/dial_small
    cyberdial eval --checkpoint runs/dial_small/checkpoint_final.npz \
        --episodes 128 --out runs/dial_small/eval
"""

from cyberdial.dial import DialConfig, DialTrainer
from cyberdial.lanes import CyberLane
from cyberdial.qmix import QmixConfig, QmixTrainer
from cyberdial.scenario import builtin_scenario, with_detection_rate

EPOCHS = 120


def main():
    scenario = with_detection_rate(builtin_scenario("small"), 0.5)
    factory = lambda: CyberLane(scenario, sau_enabled=True, block_enabled=True)

    dial = DialTrainer(DialConfig(epochs=EPOCHS, episodes_per_epoch=32,
                                  rollout_lanes=8, hidden=128, eval_episodes=16),
                       factory, master_seed=0)
    qmix = QmixTrainer(QmixConfig(epochs=EPOCHS, episodes_per_epoch=32,
                                  rollout_lanes=8, hidden=64, eval_episodes=16),
                       factory, master_seed=0)

    print(f"small network, 50% detection, SAU + block on, {EPOCHS} epochs x 32 episodes")
    print(f"{'epoch':>6} {'dial':>10} {'qmix':>10}   (greedy eval mean return)")
    for epoch in range(EPOCHS):
        dial.train_epoch()
        qmix.train_epoch()
        if (epoch + 1) % 20 == 0:
            d = dial.evaluate(32, seed_index_base=epoch * 10 ** 6)
            q = qmix.evaluate(32, seed_index_base=epoch * 10 ** 6)
            print(f"{epoch + 1:>6} {d['mean']:>+10.2f} {q['mean']:>+10.2f}"
                  f"   dial message rate {d['message_rate']:.2f}")
    print("\nboth keep improving well past this point; the acceptance suite")
    print("runs the full 1000-epoch protocol over three seeds each.")


if __name__ == "__main__":
    main()
