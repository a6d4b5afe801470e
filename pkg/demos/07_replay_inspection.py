"""Train briefly, evaluate with full records, and narrate one episode.

Every evaluation can write a replay log (JSON lines) whose itemized
penalties sum exactly — bit for bit — to the logged episode return; the
`cyberdial replay` command renders the same narrative from the file.
"""

import math

from cyberdial.dial import DialConfig, DialTrainer
from cyberdial.lanes import CyberLane
from cyberdial.scenario import builtin_scenario, with_detection_rate


def main():
    scenario = with_detection_rate(builtin_scenario("small_green"), 0.5)
    factory = lambda: CyberLane(scenario, sau_enabled=True, block_enabled=True)
    trainer = DialTrainer(DialConfig(epochs=40, episodes_per_epoch=32,
                                     rollout_lanes=8, hidden=64,
                                     eval_episodes=8),
                          factory, master_seed=3)
    print("training 40 quick epochs on the green-agent scenario...")
    for _ in range(40):
        trainer.train_epoch()

    report = trainer.evaluate(1, collect_records=True)
    records = [r for r in report["records"] if r["lane"] == 0]
    print(f"\none greedy episode, return {report['mean']:+.2f}:")
    total_items = []
    for rec in records[:12]:
        acts = ", ".join(f"a{a['agent']}:{a['action']}" for a in rec["actions"])
        msgs = "".join(f" [msg a{m['agent']}->{m['bits']}]"
                       for m in rec["messages"])
        alerts = "".join(
            f" ({al['type']} alert on {al['host']}"
            + (", false positive" if al["false_positive"] else "") + ")"
            for al in rec["alerts"])
        print(f"  t={rec['t']:2d} {acts}{msgs}{alerts} -> {rec['reward']:+.2f}")
        total_items += rec["reward_items"]
    for rec in records[12:]:
        total_items += rec["reward_items"]
    print("  ...")

    itemized = math.fsum(i["amount"] for i in total_items)
    logged = math.fsum(r["reward"] for r in records)
    print(f"\nitemized penalty sum {itemized:+.4f} == logged return {logged:+.4f}: "
          f"{itemized == logged}")
    by_cat = {}
    for item in total_items:
        by_cat[item["category"]] = by_cat.get(item["category"], 0.0) + item["amount"]
    print("penalty breakdown:", {k: round(v, 2) for k, v in sorted(by_cat.items())})


if __name__ == "__main__":
    main()
