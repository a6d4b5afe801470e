"""The prisoners-and-switch riddle and its provably optimal protocol.

Enumerates all 3^6 possible room schedules, plays the counting protocol on
each, and shows its expected return equals the omniscient upper bound (the
probability that everyone visits within the horizon) — no decentralized
strategy can do better, so this is the oracle the learned agents chase.
"""

from cyberdial.switch_riddle import (SwitchRiddleEnv, coverage_upper_bound,
                                     optimal_protocol_return,
                                     run_known_protocol)


def main():
    env = SwitchRiddleEnv(3)
    print(f"3 prisoners, horizon {env.horizon} days, one random visitor per day")
    print("reward: +1 correct announcement, -1 wrong, 0 if nobody announces\n")

    value = optimal_protocol_return(3)
    bound = coverage_upper_bound(3)
    print(f"protocol expected return (729 schedules enumerated): {value:.6f}")
    print(f"omniscient coverage bound P(all visit in 6 days):    {bound:.6f}")
    print(f"equal: {value == bound}  -> the protocol is optimal\n")

    print("a few schedules played out (0/1/2 = prisoner in the room):")
    for schedule in [(0, 1, 2, 0, 1, 2), (0, 0, 1, 1, 2, 0),
                     (1, 1, 1, 0, 0, 2), (2, 2, 2, 2, 2, 2)]:
        outcome = run_known_protocol(3, schedule)
        verdict = {1.0: "announced correctly", 0.0: "stayed silent"}[outcome]
        print(f"  {schedule} -> {outcome:+.0f} ({verdict})")

    print("\nthe switch encodes 'exactly one distinct visitor so far';")
    print("a first-time visitor who reads 0 knows they are the third.")


if __name__ == "__main__":
    main()
