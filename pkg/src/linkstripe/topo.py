"""Topology descriptions: link parameters per path, machine presets, idle headroom.

Bandwidths on :class:`LinkSpec` are unidirectional effective rates in
bytes/second.  Preset tables are quoted bidirectionally the way vendors
publish them and are halved on the way in.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import yaml

from .units import parse_bandwidth, parse_size, parse_time


class PathKind(enum.IntEnum):
    """A physical route data can take between two GPUs.

    The integer order is also the deterministic tie-break order used
    everywhere a slowest/fastest path must be picked among equals.
    """

    NVLINK = 0
    PCIE_STAGED = 1
    RDMA_NIC = 2

    @property
    def short(self) -> str:
        return {0: "nvlink", 1: "pcie", 2: "rdma"}[int(self)]


_STAGED_KINDS = (PathKind.PCIE_STAGED, PathKind.RDMA_NIC)

_SHORT_TO_KIND = {k.short: k for k in PathKind}
_SHORT_TO_KIND.update({"pcie_staged": PathKind.PCIE_STAGED, "rdma_nic": PathKind.RDMA_NIC})


def path_from_name(name: str) -> PathKind:
    key = name.strip().lower()
    if key not in _SHORT_TO_KIND:
        raise ValueError(f"unknown path {name!r}, expected one of {sorted(_SHORT_TO_KIND)}")
    return _SHORT_TO_KIND[key]


@dataclass(frozen=True)
class LinkSpec:
    """One directed link class: alpha-beta cost plus optional staging parameters."""

    kind: PathKind
    bandwidth_uni: float            # bytes/s, unidirectional effective
    base_latency: float = 0.0       # seconds per communication step
    staging_chunk: int = 0          # bytes per staged chunk; >0 only on staged paths
    per_chunk_overhead: float = 0.0  # seconds of fixed cost per staged chunk

    def __post_init__(self) -> None:
        if self.bandwidth_uni <= 0:
            raise ValueError(f"{self.kind.short}: bandwidth must be positive")
        if self.base_latency < 0:
            raise ValueError(f"{self.kind.short}: latency must be >= 0")
        staged = self.kind in _STAGED_KINDS
        if staged and self.staging_chunk <= 0:
            raise ValueError(f"{self.kind.short}: staged path needs staging_chunk > 0")
        if not staged and self.staging_chunk:
            raise ValueError(f"{self.kind.short}: staging_chunk only valid on staged paths")
        if not staged and self.per_chunk_overhead:
            raise ValueError(f"{self.kind.short}: per_chunk_overhead only valid on staged paths")
        if self.per_chunk_overhead < 0:
            raise ValueError(f"{self.kind.short}: per_chunk_overhead must be >= 0")


@dataclass(frozen=True)
class TopologySpec:
    """A machine: one LinkSpec per available path plus the shared-interface cap.

    When ``path_contention`` is set, host-staged and NIC traffic leave the
    GPU through the same interface, so their combined instantaneous rate is
    capped by ``shared_interface_bw``.
    """

    n_gpus: int
    links: dict[PathKind, LinkSpec] = field(default_factory=dict)
    path_contention: bool = False
    shared_interface_bw: float = 0.0
    name: str = ""

    def __post_init__(self) -> None:
        if self.n_gpus < 2:
            raise ValueError("a topology needs at least 2 GPUs")
        if PathKind.NVLINK not in self.links:
            raise ValueError("every topology must include an NVLINK link")
        for kind, link in self.links.items():
            if kind != link.kind:
                raise ValueError(f"link keyed {kind.short} has kind {link.kind.short}")
        if self.path_contention:
            if self.shared_interface_bw <= 0:
                raise ValueError("path_contention requires shared_interface_bw > 0")
            pcie = self.links.get(PathKind.PCIE_STAGED)
            if pcie and self.shared_interface_bw < pcie.bandwidth_uni:
                raise ValueError("shared_interface_bw below the staged-path bandwidth")

    @property
    def present_paths(self) -> tuple[PathKind, ...]:
        return tuple(sorted(self.links))

    def link(self, kind: PathKind) -> LinkSpec:
        try:
            return self.links[kind]
        except KeyError:
            raise ValueError(f"path {kind.short} not present in topology {self.name or '?'}")

    def restricted(self, paths) -> "TopologySpec":
        """A copy exposing only the given paths (benchmark modes use this)."""
        keep = {k: v for k, v in self.links.items() if k in set(paths)}
        return replace(self, links=keep)

    def with_scaled_bandwidth(self, kind: PathKind, scale: float) -> "TopologySpec":
        """A copy with one link's bandwidth multiplied by ``scale``."""
        link = self.link(kind)
        links = dict(self.links)
        links[kind] = replace(link, bandwidth_uni=link.bandwidth_uni * scale)
        return replace(self, links=links)


# Published per-server figures: NVLink and PCIe/C2C are bidirectional GB/s,
# the NIC column is aggregate Gb/s for all 8 NICs, last flag marks whether
# host-staged and NIC traffic contend for the same GPU interface.
PRESET_ROWS: dict[str, tuple[float, float, float, bool]] = {
    "H800": (400, 128, 800, True),
    "H100": (900, 128, 800, True),
    "A800": (400, 64, 400, True),
    "GB200": (1800, 400, 1600, True),
    "GB300": (1800, 400, 1600, False),
}

# H100, H200 and H20 share a row; accept the aliases.
_PRESET_ALIASES = {"H200": "H100", "H20": "H100"}

PRESET_NAMES = tuple(PRESET_ROWS)

_NICS_PER_SERVER = 8
DEFAULT_STAGING_CHUNK = 4 << 20  # empirically a good host-staging buffer size

# Model defaults for per-step fixed costs; not part of any published table.
_DEFAULT_LATENCY = {
    PathKind.NVLINK: 5e-6,
    PathKind.PCIE_STAGED: 10e-6,
    PathKind.RDMA_NIC: 15e-6,
}


def preset(name: str, n_gpus: int = 8) -> TopologySpec:
    """Build the TopologySpec for a published machine preset.

    NIC bandwidth is quoted per server; each GPU is modeled with its own
    dedicated NIC, so the per-GPU figure is the aggregate divided by 8.
    """
    canonical = _PRESET_ALIASES.get(name.upper(), name.upper())
    if canonical not in PRESET_ROWS:
        raise ValueError(f"unknown preset {name!r}, expected one of {list(PRESET_ROWS)}")
    nvlink_bidir, pcie_bidir, nic_gbits, contention = PRESET_ROWS[canonical]
    pcie_uni = pcie_bidir / 2 * 1e9
    rdma_uni = nic_gbits / 8 / _NICS_PER_SERVER / 2 * 1e9
    links = {
        PathKind.NVLINK: LinkSpec(
            PathKind.NVLINK, nvlink_bidir / 2 * 1e9,
            base_latency=_DEFAULT_LATENCY[PathKind.NVLINK]),
        PathKind.PCIE_STAGED: LinkSpec(
            PathKind.PCIE_STAGED, pcie_uni,
            base_latency=_DEFAULT_LATENCY[PathKind.PCIE_STAGED],
            staging_chunk=DEFAULT_STAGING_CHUNK),
        PathKind.RDMA_NIC: LinkSpec(
            PathKind.RDMA_NIC, rdma_uni,
            base_latency=_DEFAULT_LATENCY[PathKind.RDMA_NIC],
            staging_chunk=DEFAULT_STAGING_CHUNK),
    }
    return TopologySpec(
        n_gpus=n_gpus, links=links, path_contention=contention,
        shared_interface_bw=pcie_uni, name=canonical)


def idle_bw_opportunity(topo: TopologySpec) -> float:
    """Fraction of NVLink bandwidth that the idle side paths could add.

    With contention the staged and NIC paths fold into the shared PCIe
    interface, so only its bandwidth counts; without contention the NIC
    capacity (one NIC per GPU) adds on top.
    """
    nvlink = topo.link(PathKind.NVLINK).bandwidth_uni
    pcie_link = topo.links.get(PathKind.PCIE_STAGED)
    pcie = pcie_link.bandwidth_uni if pcie_link else 0.0
    if topo.path_contention:
        return pcie / nvlink
    rdma_link = topo.links.get(PathKind.RDMA_NIC)
    rdma_total = rdma_link.bandwidth_uni * topo.n_gpus if rdma_link else 0.0
    return (pcie + rdma_total) / nvlink


def _parse_link(kind: PathKind, raw: dict) -> LinkSpec:
    return LinkSpec(
        kind=kind,
        bandwidth_uni=parse_bandwidth(raw["bandwidth"]),
        base_latency=parse_time(raw.get("latency", 0)),
        staging_chunk=parse_size(raw.get("staging_chunk", 0)),
        per_chunk_overhead=parse_time(raw.get("chunk_overhead", 0)),
    )


def load_topology(path: str) -> TopologySpec:
    """Load a topology from a YAML (or JSON) document.

    Expected shape::

        n_gpus: 8
        path_contention: true
        shared_interface_bw: 64 GB/s
        links:
          nvlink: {bandwidth: 200 GB/s, latency: 5us}
          pcie:   {bandwidth: 64 GB/s, latency: 10us, staging_chunk: 4M}
          rdma:   {bandwidth: 50 Gb/s, latency: 15us, staging_chunk: 4M}

    Bandwidths are unidirectional effective rates; ``Gb/s`` means bits.
    """
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict) or "links" not in doc:
        raise ValueError(f"{path}: expected a mapping with a 'links' section")
    links = {}
    for name, raw in doc["links"].items():
        kind = path_from_name(name)
        links[kind] = _parse_link(kind, raw)
    return TopologySpec(
        n_gpus=int(doc.get("n_gpus", 8)),
        links=links,
        path_contention=bool(doc.get("path_contention", False)),
        shared_interface_bw=parse_bandwidth(doc.get("shared_interface_bw", 0)),
        name=str(doc.get("name", path)),
    )


def topology_for(name_or_path: str, n_gpus: int = 8) -> TopologySpec:
    """Resolve a preset name, else fall back to loading a config file."""
    key = _PRESET_ALIASES.get(name_or_path.upper(), name_or_path.upper())
    if key in PRESET_ROWS:
        return preset(key, n_gpus=n_gpus)
    return load_topology(name_or_path)
