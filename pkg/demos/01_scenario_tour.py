"""Tour of the builtin network scenarios and the scenario file format.

Shows the three configurations, what each blue agent's observation vector
looks like, and that configs round-trip through the strict YAML format.
"""

from cyberdial.scenario import (builtin_scenario, load_scenario,
                                serialize_scenario)


def describe(name):
    cfg = builtin_scenario(name)
    print(f"== {name}: {cfg.agent_count} blue agents, horizon {cfg.horizon}, "
          f"{cfg.message_bits}-bit messages, green={'on' if cfg.green_enabled else 'off'}")
    for agent, subnet in enumerate(cfg.subnets):
        hosts = ", ".join(f"{h.id}({h.capture_penalty:+.1f}/step if captured)"
                          for h in subnet.hosts)
        links = cfg.incident_links(subnet.name)
        print(f"  agent {agent} defends '{subnet.name}' [{subnet.kind.value}]")
        print(f"    hosts: {hosts}")
        print(f"    observation: 4 bits x {len(subnet.hosts)} hosts "
              f"+ {len(links)} block bit(s) = {cfg.observation_length(agent)} bits")
    print(f"  links: {[f'{a}<->{b}' for a, b in cfg.links]}")
    print()


def main():
    for name in ("small", "small_green", "large"):
        describe(name)

    print("== scenario files are strict YAML (unknown keys rejected)")
    text = serialize_scenario(builtin_scenario("small"))
    print("\n".join("  | " + line for line in text.splitlines()[:12]))
    print("  | ...")
    roundtrip = load_scenario(text)
    print(f"  round-trip == original: {roundtrip == builtin_scenario('small')}")


if __name__ == "__main__":
    main()
