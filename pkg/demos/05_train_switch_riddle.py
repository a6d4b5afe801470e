"""Train communicating agents on the switch riddle (abridged run).

The message channel *is* the switch, so any improvement beyond the
no-communication ceiling proves gradients flow usefully across agents
through the channel.  A few hundred epochs here shows the curve bending;
the full certification run (3000 epochs, four seeds, exact enumeration
evaluation) lives in tests/test_acceptance.py as criterion 4.
"""

import itertools

from cyberdial.autodiff import no_grad
from cyberdial.dial import DialConfig, DialTrainer
from cyberdial.switch_riddle import SwitchRiddleEnv, optimal_protocol_return

EPOCHS = 400


def exact_return(trainer):
    schedules = list(itertools.product(range(3), repeat=6))
    envs = [SwitchRiddleEnv(3, forced_schedule=s) for s in schedules]
    with no_grad():
        trace, _ = trainer.run_rollout(envs, [0] * len(envs), "exec")
    return float(trace.lane_returns().mean())


def main():
    optimal = optimal_protocol_return(3)
    config = DialConfig(epochs=EPOCHS, episodes_per_epoch=32, rollout_lanes=8,
                        hidden=128, eval_episodes=16)
    trainer = DialTrainer(config, lambda: SwitchRiddleEnv(3), master_seed=0)
    print(f"optimal expected return (enumerated oracle): {optimal:.4f}")
    print(f"training DIAL for {EPOCHS} epochs of 32 episodes...\n")
    for epoch in range(config.epochs):
        trainer.train_epoch()
        if (epoch + 1) % 50 == 0:
            exact = exact_return(trainer)
            print(f"  epoch {epoch + 1:4d}: exact greedy return {exact:+.4f} "
                  f"({100 * exact / optimal:5.1f}% of optimal), "
                  f"epsilon {trainer.epsilon():.3f}")
    print("\nthe acceptance suite runs this to 3000 epochs with early stop at")
    print("95% of optimal, across four seeds.")


if __name__ == "__main__":
    main()
