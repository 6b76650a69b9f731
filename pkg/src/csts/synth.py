"""Two-environment synthetic enterprise benchmark.

Benign activity is a per-user Poisson process over the user's community
hosts; lateral-movement (LM) chains and zero-day (ZDT) flow bursts are
injected on top and tagged in a window-level label file. Everything is
driven by one seeded generator, so a profile plus a seed fixes every byte.

Domain shift between the two default profiles comes from three knobs:
identifier surface forms (EnvB writes the same host or user several ways),
benign out-of-community diversity, a handful of heavy users, and a
business-hours traffic profile with heavy gateway fan-out in EnvB.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

EPOCH_ORIGIN = 1_704_067_200  # 2024-01-01T00:00:00Z, aligned to 30 minutes
WINDOW_SECONDS = 1800

LOGICAL_COLUMNS = (
    "event_id", "ts", "event", "user", "src_host", "dst_host", "process", "parent_process",
    "file_path", "dst_ip", "dst_port", "logon_type", "user_ou", "dst_ou",
)

# raw column name per logical field; order is the on-disk column order
FLAVOR_COLUMNS = {
    "enva": {k: k for k in LOGICAL_COLUMNS},
    "envb": {
        "ts": "ts", "event_id": "event_id", "event": "event", "src_host": "src_host",
        "user": "user", "dst_host": "dst_host", "logon_type": "LogonType", "process": "Image",
        "parent_process": "ParentImage", "file_path": "TargetFilename", "dst_ip": "DestinationIp",
        "dst_port": "DestinationPort", "user_ou": "SubjectOU", "dst_ou": "TargetOU",
    },
}

COMMON_IMAGES = [
    "explorer.exe", "chrome.exe", "outlook.exe", "teams.exe", "svchost.exe", "winword.exe",
    "excel.exe", "powershell.exe", "cmd.exe", "msedge.exe", "onedrive.exe", "notepad.exe",
    "taskmgr.exe", "conhost.exe", "rundll32.exe", "mmc.exe", "code.exe", "python.exe",
]
LM_TOOLS = ("psexesvc.exe", "wmiprvse.exe", "powershell.exe")

KIND_MIX = {"logon": 0.40, "process_start": 0.32, "net_conn": 0.16, "file_write": 0.08, "process_spawn": 0.04}


class InfeasibleInjection(Exception):
    pass


@dataclass
class EnvProfile:
    name: str
    n_users: int
    n_hosts: int
    n_communities: int
    benign_rate: float  # events per user-hour inside business hours
    benign_diversity: float  # probability a benign logon leaves the user's community
    naming_scheme: str  # "plain" | "corp"
    schema_flavor: str  # "enva" | "envb"
    seed: int = 42
    business_hours: tuple[int, int] = (0, 24)
    offhours_factor: float = 1.0
    n_gateways: int = 0
    gateway_rate: float = 0.0  # flows per gateway-hour inside business hours
    gateway_pool: int = 0
    n_external: int = 60
    n_images: int = 150
    n_files: int = 300
    ip_form_rate: float = 0.0  # fraction of host references written as an IP address
    ip_octet: int = 52
    heavy_fraction: float = 0.0  # share of users with an elevated event rate
    heavy_factor: float = 1.0
    token_skew: float = 1.1  # Zipf exponent for images, files and external endpoints

    @property
    def n_heavy(self) -> int:
        return int(round(self.heavy_fraction * self.n_users))

    def user_rate(self, u: int) -> float:
        heavy = u >= self.n_users - self.n_heavy
        return self.benign_rate * (self.heavy_factor if heavy else 1.0)

    def __post_init__(self):
        if not 0.0 <= self.benign_diversity < 1.0:
            raise ValueError("benign_diversity must lie in [0, 1)")
        if self.n_communities < 1 or self.n_hosts < self.n_communities:
            raise ValueError("need at least one host per community")
        self.business_hours = tuple(self.business_hours)

    def community_of_user(self, u: int) -> int:
        return u % self.n_communities

    def community_of_host(self, h: int) -> int:
        return h % self.n_communities

    def hosts_in(self, c: int) -> list[int]:
        return [h for h in range(self.n_hosts) if h % self.n_communities == c]

    def is_business(self, t: int) -> bool:
        lo, hi = self.business_hours
        hour = ((t - EPOCH_ORIGIN) // 3600) % 24
        return lo <= hour < hi

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class InjectionSpec:
    task: str  # "LM" | "ZDT"
    n_campaigns: int = 0
    chain_length: int = 3
    dwell: int = 900  # seconds
    target_window_positive_rate: float = 0.07
    burst_min: int = 15
    burst_max: int = 25
    offhours_only: bool = False

    def __post_init__(self):
        if self.task not in ("LM", "ZDT"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.task == "ZDT" and not 0.06 <= self.target_window_positive_rate <= 0.08:
            raise ValueError("ZDT positive rate must be targeted into [0.06, 0.08]")
        if self.dwell > WINDOW_SECONDS:
            raise ValueError("campaign dwell must fit inside one window")

    def to_dict(self) -> dict:
        return asdict(self)


def default_profiles(seed: int = 42) -> tuple[EnvProfile, EnvProfile]:
    env_a = EnvProfile(
        name="EnvA", n_users=40, n_hosts=30, n_communities=5, benign_rate=1.0,
        benign_diversity=0.02, naming_scheme="plain", schema_flavor="enva", seed=seed,
        n_gateways=1, gateway_rate=6.0, gateway_pool=60, n_external=60, ip_octet=52,
    )
    env_b = EnvProfile(
        name="EnvB", n_users=80, n_hosts=70, n_communities=7, benign_rate=1.4,
        benign_diversity=0.10, naming_scheme="corp", schema_flavor="envb", seed=seed + 1,
        business_hours=(6, 22), offhours_factor=0.15, n_gateways=4, gateway_rate=80.0,
        gateway_pool=400, n_external=200, ip_form_rate=0.1, ip_octet=34,
        heavy_fraction=0.1, heavy_factor=8.0,
    )
    return env_a, env_b


def default_injections(task: str, env: str) -> InjectionSpec:
    if task == "LM":
        return InjectionSpec("LM", n_campaigns=90 if env == "EnvA" else 48, chain_length=3, dwell=900)
    return InjectionSpec("ZDT", target_window_positive_rate=0.07, dwell=900, offhours_only=(env == "EnvB"))


def viability_profiles(seed: int = 42) -> dict[str, EnvProfile]:
    """Producers for the novelty viability protocol.

    ``train`` and ``control`` share one distribution. ``divergent`` resolves
    to the same canonical token space through a different raw schema but
    reuses its head tokens far more densely, which shifts its scores down.
    """
    train = EnvProfile(
        name="ProdA", n_users=40, n_hosts=30, n_communities=5, benign_rate=1.0, benign_diversity=0.02,
        naming_scheme="plain", schema_flavor="enva", seed=seed + 100, n_gateways=0, ip_octet=52,
    )
    control = replace(train, name="ProdA2", seed=seed + 200)
    divergent = replace(train, name="ProdC", schema_flavor="envb", seed=seed + 300, benign_rate=2.0, token_skew=3.0)
    return {"train": train, "control": control, "divergent": divergent}


# --------------------------------------------------------------------------- naming


class Namer:
    """Surface forms for users, hosts and endpoints of one environment."""

    def __init__(self, p: EnvProfile, rng: np.random.Generator):
        self.p = p
        self.rng = rng

    def user(self, u: int) -> str:
        if self.p.naming_scheme == "plain":
            return f"usr{u:03d}"
        form = self.rng.integers(3)
        base = f"EMP{u:04d}"
        return (f"CORP\\{base}", base.lower(), f"{base}@corp.local")[form]

    def host_canonical(self, h: int) -> str:
        return f"ws{h:03d}" if self.p.naming_scheme == "plain" else f"b-wks-{h:04d}"

    def host_ip(self, h: int) -> str:
        return f"10.{self.p.ip_octet}.{h // 250}.{h % 250 + 1}"

    def host(self, h: int) -> str:
        if self.p.naming_scheme == "plain":
            return self.host_canonical(h)
        if self.p.ip_form_rate and self.rng.random() < self.p.ip_form_rate:
            return self.host_ip(h)
        base = f"B-WKS-{h:04d}"
        form = self.rng.integers(3)
        return (base, base.lower() + ".corp.local", base + ".CORP.LOCAL")[form]

    def ou(self, c: int) -> str:
        return f"ou-grp{c}" if self.p.naming_scheme == "plain" else f"Dept{c:02d}"

    def image(self, k: int) -> str:
        name = COMMON_IMAGES[k] if k < len(COMMON_IMAGES) else f"app{k:03d}.exe"
        return name if self.p.naming_scheme == "plain" else name.upper()

    def file(self, k: int) -> str:
        if self.p.naming_scheme == "plain":
            return f"/srv/share/f{k:04d}.dat"
        return f"C:\\Data\\F{k:04d}.DAT"

    def external(self, k: int) -> str:
        return f"{self.p.ip_octet + 100}.{(k // 250) % 250}.{k % 250}.{7 + (k % 3)}"

    def alias_table(self) -> dict[str, str]:
        if not self.p.ip_form_rate:
            return {}
        return {self.host_ip(h): f"host:{self.host_canonical(h)}" for h in range(self.p.n_hosts)}


def zipf_weights(n: int, s: float = 1.1) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** s
    return w / w.sum()


# --------------------------------------------------------------------------- generation


@dataclass
class GeneratedEnv:
    profile: EnvProfile
    injection: InjectionSpec
    events: list[dict]  # logical-field dicts, sorted by (ts, event_id)
    labels: list[dict]  # one entry per window
    aliases: dict[str, str] = field(default_factory=dict)

    @property
    def n_windows(self) -> int:
        return len(self.labels)

    def positive_rate(self) -> float:
        return sum(l["label"] for l in self.labels) / len(self.labels) if self.labels else 0.0


def _poisson_times(rng, rate_business: float, p: EnvProfile, duration: int) -> np.ndarray:
    """Thinned Poisson arrivals under the profile's business-hours intensity."""
    if rate_business <= 0 or duration <= 0:
        return np.empty(0, dtype=np.int64)
    peak = rate_business * max(1.0, p.offhours_factor)
    n = rng.poisson(peak * duration / 3600.0)
    t = np.sort(rng.integers(0, duration, size=n)) + EPOCH_ORIGIN
    hour = ((t - EPOCH_ORIGIN) // 3600) % 24
    lo, hi = p.business_hours
    intensity = np.where((hour >= lo) & (hour < hi), rate_business, rate_business * p.offhours_factor)
    keep = rng.random(n) < intensity / peak
    return t[keep]


def _benign(p: EnvProfile, rng, namer: Namer, duration: int) -> list[dict]:
    events = []
    kinds = list(KIND_MIX)
    kind_p = np.array([KIND_MIX[k] for k in kinds])
    img_w = zipf_weights(p.n_images, p.token_skew)
    file_w = zipf_weights(p.n_files, p.token_skew)
    ext_w = zipf_weights(p.n_external, p.token_skew)
    community_hosts = [p.hosts_in(c) for c in range(p.n_communities)]
    for u in range(p.n_users):
        c = p.community_of_user(u)
        own = community_hosts[c]
        home = own[u // p.n_communities % len(own)]
        times = _poisson_times(rng, p.user_rate(u), p, duration)
        if not len(times):
            continue
        ks = rng.choice(len(kinds), size=len(times), p=kind_p)
        for t, ki in zip(times.tolist(), ks.tolist()):
            kind = kinds[ki]
            ev = {"ts": t, "event": kind, "user": namer.user(u), "src_host": namer.host(home), "_u": u}
            if kind == "logon":
                if rng.random() < p.benign_diversity:
                    dst = int(rng.integers(p.n_hosts))
                else:
                    dst = own[int(rng.integers(len(own)))]
                ev.update(
                    dst_host=namer.host(dst), logon_type=str(rng.choice([2, 3, 3, 3, 10])),
                    user_ou=namer.ou(c), dst_ou=namer.ou(p.community_of_host(dst)),
                )
            elif kind == "process_start":
                ev.update(dst_host=namer.host(home), process=namer.image(int(rng.choice(p.n_images, p=img_w))),
                          user_ou=namer.ou(c))
            elif kind == "process_spawn":
                ev.update(parent_process=namer.image(int(rng.choice(p.n_images, p=img_w))),
                          process=namer.image(int(rng.choice(p.n_images, p=img_w))))
            elif kind == "file_write":
                ev.update(process=namer.image(int(rng.choice(p.n_images, p=img_w))),
                          file_path=namer.file(int(rng.choice(p.n_files, p=file_w))))
            else:
                ev.update(dst_ip=namer.external(int(rng.choice(p.n_external, p=ext_w))),
                          dst_port=str(rng.choice([443, 443, 80, 53, 8443])))
            events.append(ev)
    # gateways: the last hosts of the inventory act as egress proxies
    for g in range(p.n_gateways):
        h = p.n_hosts - 1 - g
        times = _poisson_times(rng, p.gateway_rate, p, duration)
        if not len(times):
            continue
        picks = rng.integers(p.gateway_pool, size=len(times))
        for t, k in zip(times.tolist(), picks.tolist()):
            events.append({
                "ts": t, "event": "net_conn", "src_host": namer.host(h),
                "dst_ip": namer.external(k), "dst_port": "443",
            })
    return events


def _eligible_windows(p: EnvProfile, n_windows: int, offhours_only: bool) -> list[int]:
    out = []
    for w in range(n_windows):
        start = EPOCH_ORIGIN + w * WINDOW_SECONDS
        if offhours_only and (p.is_business(start) or p.is_business(start + WINDOW_SECONDS - 1)):
            continue
        out.append(w)
    return out


def inject_lateral_movement(events: list[dict], p: EnvProfile, spec: InjectionSpec, rng, namer: Namer,
                            n_windows: int) -> list[dict]:
    """Append LM chains to ``events``; returns the injected events.

    Each campaign picks one compromised user and walks ``chain_length``
    distinct hosts outside the user's community inside a single window, one
    logon plus one remote execution per hop.
    """
    injected = []
    if spec.n_campaigns <= 0:
        return injected
    windows = _eligible_windows(p, n_windows, spec.offhours_only)
    if spec.n_campaigns > len(windows):
        raise InfeasibleInjection(f"{spec.n_campaigns} campaigns need distinct windows; {len(windows)} available")
    chosen = sorted(rng.choice(windows, size=spec.n_campaigns, replace=False).tolist())
    for k, w in enumerate(chosen):
        u = int(rng.integers(p.n_users))
        c = p.community_of_user(u)
        outside = [h for h in range(p.n_hosts - p.n_gateways) if p.community_of_host(h) != c]
        if len(outside) < spec.chain_length + 1:
            raise InfeasibleInjection(
                f"user community {c} has {len(outside)} outside hosts; chain needs {spec.chain_length + 1}"
            )
        hops = rng.choice(outside, size=spec.chain_length, replace=False).tolist()
        own = p.hosts_in(c)
        prev = own[u // p.n_communities % len(own)]
        start = EPOCH_ORIGIN + w * WINDOW_SECONDS + int(rng.integers(0, WINDOW_SECONDS - spec.dwell + 1))
        step = spec.dwell // spec.chain_length
        tool = LM_TOOLS[int(rng.integers(len(LM_TOOLS)))]
        tool = tool if p.naming_scheme == "plain" else tool.upper()
        for i, h in enumerate(hops):
            t = start + i * step + int(rng.integers(0, max(1, step // 2)))
            injected.append({
                "ts": t, "event": "logon", "user": namer.user(u), "src_host": namer.host(prev),
                "dst_host": namer.host(h), "logon_type": "3", "user_ou": namer.ou(c),
                "dst_ou": namer.ou(p.community_of_host(h)), "_inj": k, "_u": u,
            })
            injected.append({
                "ts": min(t + 30, start + spec.dwell), "event": "process_start", "user": namer.user(u),
                "src_host": namer.host(h), "dst_host": namer.host(h), "process": tool,
                "user_ou": namer.ou(c), "_inj": k, "_u": u,
            })
            prev = h
    events.extend(injected)
    return injected


def inject_zdt(events: list[dict], p: EnvProfile, spec: InjectionSpec, rng, namer: Namer,
               n_windows: int) -> list[dict]:
    """Burst of flows from one host to many never-contacted endpoints, one window each."""
    injected = []
    if n_windows == 0:
        return injected
    n_pos = spec.n_campaigns or max(1, int(round(spec.target_window_positive_rate * n_windows)))
    windows = _eligible_windows(p, n_windows, spec.offhours_only)
    if n_pos > len(windows):
        raise InfeasibleInjection(f"{n_pos} ZDT windows requested; {len(windows)} eligible")
    chosen = sorted(rng.choice(windows, size=n_pos, replace=False).tolist())
    fresh = 0
    for k, w in enumerate(chosen):
        h = int(rng.integers(p.n_hosts - p.n_gateways))
        size = int(rng.integers(spec.burst_min, spec.burst_max + 1))
        start = EPOCH_ORIGIN + w * WINDOW_SECONDS + int(rng.integers(0, WINDOW_SECONDS - spec.dwell + 1))
        ts = np.sort(rng.integers(start, start + spec.dwell + 1, size=size)).tolist()
        for t in ts:
            fresh += 1
            injected.append({
                "ts": t, "event": "net_conn", "src_host": namer.host(h),
                "dst_ip": f"185.{(fresh // 250) % 250}.{fresh % 250}.{p.ip_octet % 200 + 1}",
                "dst_port": str(int(rng.integers(20000, 60000))), "_inj": k,
            })
    events.extend(injected)
    return injected


def generate_events(profile: EnvProfile, inj: InjectionSpec, duration_hours: float) -> GeneratedEnv:
    rng = np.random.default_rng(profile.seed)
    namer = Namer(profile, rng)
    duration = int(round(duration_hours * 3600))
    n_windows = -(-duration // WINDOW_SECONDS) if duration > 0 else 0
    if duration <= 0:
        return GeneratedEnv(profile, inj, [], [], namer.alias_table())
    events = _benign(profile, rng, namer, duration)
    if inj.task == "LM":
        inject_lateral_movement(events, profile, inj, rng, namer, n_windows)
    else:
        inject_zdt(events, profile, inj, rng, namer, n_windows)
    events.sort(key=lambda e: (e["ts"], e.get("_inj", -1), e["event"], e.get("user", ""), e.get("dst_host", ""),
                               e.get("dst_ip", ""), e.get("process", "")))
    per_window: dict[int, list[str]] = {}
    for i, ev in enumerate(events):
        ev["event_id"] = f"evt-{i:07d}"
        if "_inj" in ev:
            per_window.setdefault((ev["ts"] - EPOCH_ORIGIN) // WINDOW_SECONDS, []).append(ev["event_id"])
    labels = [
        {
            "window_start": EPOCH_ORIGIN + w * WINDOW_SECONDS,
            "task": inj.task,
            "label": int(w in per_window),
            "event_ids": per_window.get(w, []),
        }
        for w in range(n_windows)
    ]
    return GeneratedEnv(profile, inj, events, labels, namer.alias_table())


# --------------------------------------------------------------------------- files


def write_raw_csv(events: list[dict], flavor: str, path) -> None:
    cols = FLAVOR_COLUMNS[flavor]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(cols.values()))
        for ev in events:
            w.writerow(["" if ev.get(k) is None else str(ev.get(k, "")) for k in cols])


def write_labels(labels: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in labels:
            fh.write(json.dumps(row, sort_keys=True, separators=(",", ":")))
            fh.write("\n")


def read_labels(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


@dataclass(frozen=True)
class EnvArtifacts:
    raw: Path
    labels: Path
    policy: Path
    n_events: int
    n_windows: int
    positive_windows: int


def generate_env(profile: EnvProfile, inj: InjectionSpec, duration_hours: float, out_dir, stem: Optional[str] = None,
                 base_policy: Optional[dict] = None) -> EnvArtifacts:
    """Write ``<stem>.csv``, ``<stem>.labels.jsonl`` and ``<stem>.policy.json``."""
    from importlib import resources

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = stem or f"{profile.name.lower()}_{inj.task.lower()}"
    gen = generate_events(profile, inj, duration_hours)
    raw, labels, policy = out_dir / f"{stem}.csv", out_dir / f"{stem}.labels.jsonl", out_dir / f"{stem}.policy.json"
    write_raw_csv(gen.events, profile.schema_flavor, raw)
    write_labels(gen.labels, labels)
    if base_policy is None:
        text = resources.files("csts.data").joinpath(f"policy_{profile.schema_flavor}.json").read_text("utf-8")
        base_policy = json.loads(text)
    pol = json.loads(json.dumps(base_policy))
    if gen.aliases:
        pol.setdefault("Host", {}).setdefault("aliases", {}).update(gen.aliases)
    with open(policy, "w", encoding="utf-8") as fh:
        json.dump(pol, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return EnvArtifacts(raw, labels, policy, len(gen.events), gen.n_windows,
                        sum(l["label"] for l in gen.labels))
