"""Watch the scripted attacker work through its kill chain, then contain it.

First an unopposed run: discover, scan, exploit, escalate, pivot, impact.
Then the same seed with the defenders blocking the inter-subnet link at step
zero: the attacker stays locked inside the user subnet.
"""

from cyberdial.env import BlueAction, BlueActionKind, CyberEnv
from cyberdial.scenario import builtin_scenario


def narrate(env, steps, actions_fn):
    total = 0.0
    for t in range(steps):
        out = env.step(actions_fn(t))
        total += out.reward
        red = out.record["red"]
        owned = [h for h, s in out.record["true_state"].items()
                 if s["foothold"] != "none"]
        print(f"  t={t:2d} red {red['action']:>15}"
              f"({red['target'] or '-':>10})  reward {out.reward:+7.2f}  "
              f"owned: {', '.join(owned) if owned else '-'}")
    print(f"  episode return so far: {total:+.2f}\n")
    return total


def main():
    cfg = builtin_scenario("small")

    print("== unopposed kill chain (all defenders sleep)")
    env = CyberEnv(cfg, record_enabled=True)
    env.reset(7)
    narrate(env, 20, lambda t: [0, 0])

    print("== same episode, user-subnet agent blocks the link at t=0")
    env = CyberEnv(cfg, record_enabled=True)
    env.reset(7)
    block = env.action_space.index_of(
        0, BlueAction(BlueActionKind.BLOCK, link=("user", "core")))
    narrate(env, 20, lambda t: [block if t == 0 else 0, 0])
    print("the attacker never crosses into the core subnet; the operational")
    print("server stays clean at the price of one block (-1.0) and the")
    print("slow per-step drip from captured workstations.")


if __name__ == "__main__":
    main()
