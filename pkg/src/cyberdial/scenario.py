"""Declarative network scenarios for the defence training game.

A scenario names its subnets and hosts, the links between subnets, the
penalty table, the alert-detection profile and the episode horizon.  Three
builtin configurations exist: ``small`` (two subnets, one blue agent each),
``small_green`` (same network with benign-user noise enabled) and ``large``
(three fully-linked subnets).  Configs are immutable after construction and
safe to share across rollout workers.

Scenario files are strict YAML: every key must be known, every invariant is
checked on load, and serialize -> load is the identity.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import yaml


class ScenarioError(ValueError):
    """Malformed or invariant-violating scenario document."""


class Role(enum.Enum):
    WORKSTATION = "workstation"
    SERVER = "server"
    OPERATIONAL_SERVER = "operational_server"


class SubnetKind(enum.Enum):
    USER = "user"
    ENTERPRISE = "enterprise"
    OPERATIONAL = "operational"


@dataclass(frozen=True)
class HostSpec:
    id: str
    role: Role
    capture_penalty: float  # per timestep while red holds a privileged shell


@dataclass(frozen=True)
class SubnetSpec:
    name: str
    kind: SubnetKind
    hosts: tuple[HostSpec, ...]


@dataclass(frozen=True)
class PenaltyTable:
    capture: dict[Role, float] = field(default_factory=lambda: dict(DEFAULT_CAPTURE))
    restore_cost: dict[Role, float] = field(default_factory=lambda: dict(DEFAULT_RESTORE))
    wasted_action: float = -0.5
    block_cost: float = -1.0


@dataclass(frozen=True)
class DetectionProfile:
    exploit_detection_rate: float = 0.5
    scan_detection_rate: float = 0.5
    green_activity_rate: float = 0.5
    green_false_alarm_rate: float = 0.5


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    subnets: tuple[SubnetSpec, ...]
    links: tuple[tuple[str, str], ...]
    penalties: PenaltyTable
    detection: DetectionProfile
    horizon: int
    green_enabled: bool = False
    message_bits: int = 1

    @property
    def agent_count(self) -> int:
        return len(self.subnets)

    def subnet_names(self) -> list[str]:
        return [s.name for s in self.subnets]

    def hosts(self) -> list[HostSpec]:
        return [h for s in self.subnets for h in s.hosts]

    def subnet_of_host(self, host_id: str) -> str:
        for s in self.subnets:
            for h in s.hosts:
                if h.id == host_id:
                    return s.name
        raise KeyError(host_id)

    def incident_links(self, subnet: str) -> list[tuple[str, str]]:
        """Links touching a subnet, in declaration order (the block bits)."""
        return [l for l in self.links if subnet in l]

    def block_bits(self, agent: int) -> int:
        return len(self.incident_links(self.subnets[agent].name))

    def observation_length(self, agent: int) -> int:
        return 4 * len(self.subnets[agent].hosts) + self.block_bits(agent)


DEFAULT_CAPTURE = {
    Role.WORKSTATION: -0.1,
    Role.SERVER: -1.0,
    Role.OPERATIONAL_SERVER: -10.0,
}

# Restore hurts in proportion to the host's importance, but strictly less
# than letting a privileged shell sit, so restoring a threatened high-value
# host stays rational.
DEFAULT_RESTORE = {
    Role.WORKSTATION: -0.1,
    Role.SERVER: -0.5,
    Role.OPERATIONAL_SERVER: -1.0,
}

BUILTIN_NAMES = ("small", "small_green", "large")


def validate(config: ScenarioConfig) -> ScenarioConfig:
    """Check every config invariant; raises ScenarioError naming the offender."""
    if not config.subnets:
        raise ScenarioError("subnets: at least one subnet required")
    names = config.subnet_names()
    if len(set(names)) != len(names):
        raise ScenarioError("subnets: duplicate subnet name")
    host_ids = [h.id for h in config.hosts()]
    if len(set(host_ids)) != len(host_ids):
        raise ScenarioError("hosts: host identifiers must be unique network-wide")
    for s in config.subnets:
        if not s.hosts:
            raise ScenarioError(f"subnets.{s.name}.hosts: empty subnet")
    op_servers = [h.id for h in config.hosts() if h.role is Role.OPERATIONAL_SERVER]
    if len(op_servers) != 1:
        raise ScenarioError(
            f"hosts.role: exactly one operational_server required, found {len(op_servers)}")
    for h in config.hosts():
        if h.capture_penalty > 0:
            raise ScenarioError(f"hosts.{h.id}.capture_penalty: must be non-positive")
    for link in config.links:
        if len(link) != 2 or link[0] == link[1]:
            raise ScenarioError(f"links: malformed link {link!r}")
        for end in link:
            if end not in names:
                raise ScenarioError(f"links: unknown subnet {end!r}")
    if len({frozenset(l) for l in config.links}) != len(config.links):
        raise ScenarioError("links: duplicate link")
    if config.horizon <= 0:
        raise ScenarioError("horizon: must be positive")
    if config.message_bits <= 0:
        raise ScenarioError("message_bits: must be positive")
    pt = config.penalties
    for role in Role:
        if role not in pt.capture:
            raise ScenarioError(f"penalties.capture.{role.value}: missing entry")
        if role not in pt.restore_cost:
            raise ScenarioError(f"penalties.restore_cost.{role.value}: missing entry")
    for key, val in list(pt.capture.items()) + list(pt.restore_cost.items()):
        if val > 0:
            raise ScenarioError(f"penalties.{key.value}: must be non-positive, got {val}")
    if pt.wasted_action > 0 or pt.block_cost > 0:
        raise ScenarioError("penalties: wasted_action and block_cost must be non-positive")
    det = config.detection
    for key in ("exploit_detection_rate", "scan_detection_rate",
                "green_activity_rate", "green_false_alarm_rate"):
        rate = getattr(det, key)
        if not 0.0 <= rate <= 1.0:
            raise ScenarioError(f"detection.{key}: must be in [0, 1], got {rate}")
    return config


def _hosts(prefix: str, role: Role, count: int, penalty: float) -> tuple[HostSpec, ...]:
    return tuple(HostSpec(f"{prefix}_{i}", role, penalty) for i in range(count))


def builtin_scenario(name: str, detection: DetectionProfile | None = None,
                     message_bits: int = 1) -> ScenarioConfig:
    """One of the three builtin network configurations.

    ``small`` / ``small_green``: a user subnet of three workstations linked
    to one defended core subnet holding two servers and the operational
    server (two agents, one block bit each, horizon 30).  ``large``: user,
    enterprise and operational subnets fully linked (three agents, two block
    bits each, horizon 60).
    """
    det = detection or DetectionProfile()
    if name in ("small", "small_green"):
        subnets = (
            SubnetSpec("user", SubnetKind.USER,
                       _hosts("user_ws", Role.WORKSTATION, 3, -0.1)),
            SubnetSpec("core", SubnetKind.OPERATIONAL,
                       _hosts("core_srv", Role.SERVER, 2, -1.0)
                       + (HostSpec("op_server", Role.OPERATIONAL_SERVER, -10.0),)),
        )
        config = ScenarioConfig(
            name=name,
            subnets=subnets,
            links=(("user", "core"),),
            penalties=PenaltyTable(),
            detection=det,
            horizon=30,
            green_enabled=(name == "small_green"),
            message_bits=message_bits,
        )
    elif name == "large":
        subnets = (
            SubnetSpec("user", SubnetKind.USER,
                       _hosts("user_ws", Role.WORKSTATION, 5, -0.1)),
            SubnetSpec("enterprise", SubnetKind.ENTERPRISE,
                       _hosts("ent_srv", Role.SERVER, 3, -1.0)),
            SubnetSpec("operational", SubnetKind.OPERATIONAL,
                       _hosts("op_srv", Role.SERVER, 2, -1.0)
                       + (HostSpec("op_server", Role.OPERATIONAL_SERVER, -10.0),)),
        )
        config = ScenarioConfig(
            name="large",
            subnets=subnets,
            links=(("user", "enterprise"), ("enterprise", "operational"),
                   ("user", "operational")),
            penalties=PenaltyTable(),
            detection=det,
            horizon=60,
            green_enabled=False,
            message_bits=message_bits,
        )
    else:
        raise ScenarioError(f"unknown builtin scenario: {name!r}")
    return validate(config)


def with_detection_rate(config: ScenarioConfig, rate: float) -> ScenarioConfig:
    """Copy with exploit and scan detection both set to ``rate``."""
    det = replace(config.detection, exploit_detection_rate=rate, scan_detection_rate=rate)
    return validate(replace(config, detection=det))


# ---------------------------------------------------------------------------
# serialization (strict YAML)
# ---------------------------------------------------------------------------

_TOP_KEYS = {"name", "horizon", "green_enabled", "message_bits",
             "subnets", "links", "penalties", "detection"}
_SUBNET_KEYS = {"name", "kind", "hosts"}
_HOST_KEYS = {"id", "role", "capture_penalty"}
_PENALTY_KEYS = {"capture", "restore_cost", "wasted_action", "block_cost"}
_DETECTION_KEYS = {"exploit_detection_rate", "scan_detection_rate",
                   "green_activity_rate", "green_false_alarm_rate"}


def _reject_unknown(mapping: dict, allowed: set[str], where: str) -> None:
    for key in mapping:
        if key not in allowed:
            raise ScenarioError(f"{where}.{key}: unknown key")


def serialize_scenario(config: ScenarioConfig) -> str:
    doc = {
        "name": config.name,
        "horizon": config.horizon,
        "green_enabled": config.green_enabled,
        "message_bits": config.message_bits,
        "subnets": [
            {
                "name": s.name,
                "kind": s.kind.value,
                "hosts": [
                    {"id": h.id, "role": h.role.value, "capture_penalty": h.capture_penalty}
                    for h in s.hosts
                ],
            }
            for s in config.subnets
        ],
        "links": [list(l) for l in config.links],
        "penalties": {
            "capture": {r.value: v for r, v in config.penalties.capture.items()},
            "restore_cost": {r.value: v for r, v in config.penalties.restore_cost.items()},
            "wasted_action": config.penalties.wasted_action,
            "block_cost": config.penalties.block_cost,
        },
        "detection": {
            "exploit_detection_rate": config.detection.exploit_detection_rate,
            "scan_detection_rate": config.detection.scan_detection_rate,
            "green_activity_rate": config.detection.green_activity_rate,
            "green_false_alarm_rate": config.detection.green_false_alarm_rate,
        },
    }
    return yaml.safe_dump(doc, sort_keys=False)


def _parse_role(raw, where: str) -> Role:
    try:
        return Role(raw)
    except ValueError:
        raise ScenarioError(f"{where}: unknown role {raw!r}") from None


def load_scenario(text: str) -> ScenarioConfig:
    """Parse and validate a scenario document; unknown keys are hard errors."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"malformed scenario document: {exc}") from exc
    if not isinstance(doc, dict):
        raise ScenarioError("scenario document must be a mapping")
    _reject_unknown(doc, _TOP_KEYS, "scenario")
    for key in ("name", "horizon", "subnets"):
        if key not in doc:
            raise ScenarioError(f"scenario.{key}: missing required key")

    subnets = []
    for raw_sub in doc["subnets"]:
        if not isinstance(raw_sub, dict):
            raise ScenarioError("subnets: each entry must be a mapping")
        _reject_unknown(raw_sub, _SUBNET_KEYS, "subnets")
        sub_name = raw_sub.get("name")
        if not sub_name:
            raise ScenarioError("subnets.name: missing")
        try:
            kind = SubnetKind(raw_sub.get("kind", "user"))
        except ValueError:
            raise ScenarioError(f"subnets.{sub_name}.kind: unknown kind "
                                f"{raw_sub.get('kind')!r}") from None
        raw_hosts = raw_sub.get("hosts")
        if not raw_hosts:
            raise ScenarioError(f"subnets.{sub_name}.hosts: empty subnet")
        hosts = []
        for raw_host in raw_hosts:
            _reject_unknown(raw_host, _HOST_KEYS, f"subnets.{sub_name}.hosts")
            if "id" not in raw_host:
                raise ScenarioError(f"subnets.{sub_name}.hosts.id: missing")
            role = _parse_role(raw_host.get("role", "workstation"),
                               f"subnets.{sub_name}.hosts.{raw_host['id']}.role")
            penalty = float(raw_host.get("capture_penalty", DEFAULT_CAPTURE[role]))
            hosts.append(HostSpec(str(raw_host["id"]), role, penalty))
        subnets.append(SubnetSpec(str(sub_name), kind, tuple(hosts)))

    links = tuple(tuple(str(e) for e in l) for l in doc.get("links", []))

    raw_pen = doc.get("penalties", {})
    _reject_unknown(raw_pen, _PENALTY_KEYS, "penalties")
    capture = dict(DEFAULT_CAPTURE)
    for role_name, val in raw_pen.get("capture", {}).items():
        capture[_parse_role(role_name, "penalties.capture")] = float(val)
    restore = dict(DEFAULT_RESTORE)
    for role_name, val in raw_pen.get("restore_cost", {}).items():
        restore[_parse_role(role_name, "penalties.restore_cost")] = float(val)
    penalties = PenaltyTable(
        capture=capture,
        restore_cost=restore,
        wasted_action=float(raw_pen.get("wasted_action", -0.5)),
        block_cost=float(raw_pen.get("block_cost", -1.0)),
    )

    raw_det = doc.get("detection", {})
    _reject_unknown(raw_det, _DETECTION_KEYS, "detection")
    exploit_rate = float(raw_det.get("exploit_detection_rate", 0.5))
    detection = DetectionProfile(
        exploit_detection_rate=exploit_rate,
        # scans default to the exploit rate; both stay independently settable
        scan_detection_rate=float(raw_det.get("scan_detection_rate", exploit_rate)),
        green_activity_rate=float(raw_det.get("green_activity_rate", 0.5)),
        green_false_alarm_rate=float(raw_det.get("green_false_alarm_rate", 0.5)),
    )

    config = ScenarioConfig(
        name=str(doc["name"]),
        subnets=tuple(subnets),
        links=links,
        penalties=penalties,
        detection=detection,
        horizon=int(doc["horizon"]),
        green_enabled=bool(doc.get("green_enabled", False)),
        message_bits=int(doc.get("message_bits", 1)),
    )
    return validate(config)
