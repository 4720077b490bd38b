"""Coupling configuration: XML parsing, validation, serialization and DOT export.

The accepted vocabulary is a small subset of the usual coupling-library
configuration format::

    <solver-interface dimensions="2|3">
      <data:scalar|data:vector name/>
      <mesh name> <use-data name/> </mesh>
      <participant name>
        <use-mesh name provide="yes" | from/>
        <write-data name mesh/>  <read-data name mesh/>
        <mapping:KIND from to? constraint support-radius? polynomial?/>
        <watch-point name mesh coordinate="x;y[;z]"/>
      </participant>
      <m2n:sockets from to exchange-directory?/>
      <coupling-scheme:KIND>
        <participants first second/> <time-window-size value/> <max-time value/>
        <max-iterations value/> <exchange data mesh from to/>
        <relative-convergence-measure data mesh limit/>
        <acceleration:KIND> <initial-relaxation value/> <max-used-iterations value/>
                            <filter type limit/> </acceleration:KIND>
      </coupling-scheme:KIND>
    </solver-interface>

Unknown elements are errors; unknown attributes on known elements are warnings.
"""

from __future__ import annotations

import math
import xml.parsers.expat
from dataclasses import dataclass, field, replace
from xml.sax.saxutils import quoteattr

from .cplscheme import (
    DEFAULT_MAX_ITERATIONS,
    SCHEME_KINDS,
    AccelerationConfig,
    ConvergenceMeasure,
    Exchange,
    SchemeConfig,
)
from .errors import ConfigError
from .mapping import CONSTRAINTS, MAPPING_KINDS, POLYNOMIAL_MODES

ACCELERATION_TAGS = {"constant": "constant", "aitken": "aitken", "IQN-ILS": "iqn-ils", "IQN-IMVJ": "iqn-imvj"}
ACCELERATION_NAMES = {v: k for k, v in ACCELERATION_TAGS.items()}
LOCAL_RBF = ("rbf-gaussian", "rbf-compact-tps-c2")
# max-time / time-window-size must be an integer up to this relative slack
MULTIPLE_TOL = 1e-9


# ----------------------------------------------------------------------
#  Diagnostics
# ----------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class Diagnostic:
    line: int
    severity: str
    element: str
    message: str

    def __str__(self):
        return f"line {self.line}: {self.severity}: <{self.element}> {self.message}"


def errors(diagnostics) -> list:
    return [d for d in diagnostics if d.severity == "error"]


# ----------------------------------------------------------------------
#  Configuration objects
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class DataDecl:
    name: str
    kind: str  # scalar | vector
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class MeshDecl:
    name: str
    use_data: tuple = ()
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class UseMesh:
    name: str
    provide: bool = False
    source: str | None = None
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class DataAccess:
    data: str
    mesh: str
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class MappingConfig:
    kind: str
    from_mesh: str
    to_mesh: str | None
    constraint: str
    support_radius: float | None = None
    polynomial: str = "separated"
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class WatchPoint:
    name: str
    mesh: str
    coordinate: tuple
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class ParticipantConfig:
    name: str
    use_meshes: tuple = ()
    write_data: tuple = ()
    read_data: tuple = ()
    mappings: tuple = ()
    watchpoints: tuple = ()
    line: int = field(default=0, compare=False)

    @property
    def provided(self) -> list:
        return [u.name for u in self.use_meshes if u.provide]

    @property
    def received(self) -> list:
        return [u.name for u in self.use_meshes if not u.provide]

    def uses(self, mesh: str) -> bool:
        return any(u.name == mesh for u in self.use_meshes)

    def mapping_target(self, m: MappingConfig) -> str | None:
        """Explicit ``to`` mesh, or the only other mesh this participant uses."""
        if m.to_mesh is not None:
            return m.to_mesh
        others = [u.name for u in self.use_meshes if u.name != m.from_mesh]
        return others[0] if len(others) == 1 else None

    def mapping_direction(self, m: MappingConfig) -> str | None:
        """``write`` (provided to received), ``read`` (received to provided) or None."""
        to = self.mapping_target(m)
        if m.from_mesh in self.provided and to in self.received:
            return "write"
        if m.from_mesh in self.received and to in self.provided:
            return "read"
        return None


@dataclass(frozen=True)
class M2NConfig:
    source: str
    target: str
    exchange_directory: str = "."
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class CouplingConfig:
    dimensions: int
    data: tuple = ()
    meshes: tuple = ()
    participants: tuple = ()
    m2n: tuple = ()
    scheme: SchemeConfig | None = None
    line: int = field(default=1, compare=False)
    scheme_lines: dict = field(default_factory=dict, compare=False, hash=False)
    diagnostics: tuple = field(default=(), compare=False)

    def participant(self, name: str) -> ParticipantConfig:
        for p in self.participants:
            if p.name == name:
                return p
        valid = ", ".join(p.name for p in self.participants)
        raise ConfigError(f"unknown participant {name!r} (valid: {valid})")

    def data_decl(self, name: str) -> DataDecl | None:
        return next((d for d in self.data if d.name == name), None)

    def mesh_decl(self, name: str) -> MeshDecl | None:
        return next((m for m in self.meshes if m.name == name), None)

    def components(self, data: str) -> int:
        d = self.data_decl(data)
        if d is None:
            raise ConfigError(f"unknown data {data!r}")
        return self.dimensions if d.kind == "vector" else 1

    def mesh_provider(self, mesh: str) -> str | None:
        for p in self.participants:
            if mesh in p.provided:
                return p.name
        return None


# ----------------------------------------------------------------------
#  XML reading
# ----------------------------------------------------------------------


@dataclass
class _Node:
    tag: str
    attrs: dict
    line: int
    children: list = field(default_factory=list)


def _read_tree(text: str) -> _Node | None:
    root = None
    stack = []
    parser = xml.parsers.expat.ParserCreate()

    def start(tag, attrs):
        nonlocal root
        node = _Node(tag, dict(attrs), parser.CurrentLineNumber)
        if stack:
            stack[-1].children.append(node)
        else:
            root = node
        stack.append(node)

    def end(tag):
        stack.pop()

    parser.StartElementHandler = start
    parser.EndElementHandler = end
    if not text.strip():
        return None
    try:
        parser.Parse(text, True)
    except xml.parsers.expat.ExpatError as exc:
        diag = Diagnostic(exc.lineno, "error", "xml", f"malformed XML: {xml.parsers.expat.ErrorString(exc.code)}")
        raise ConfigError(str(diag), [diag]) from None
    return root


class _Reader:
    """Turns the element tree into configuration objects, collecting diagnostics."""

    def __init__(self):
        self.diags = []

    def error(self, node, message):
        self.diags.append(Diagnostic(node.line, "error", node.tag, message))

    def warn(self, node, message):
        self.diags.append(Diagnostic(node.line, "warning", node.tag, message))

    def attrs(self, node, required=(), optional=()):
        out = {}
        for name in required:
            if name not in node.attrs:
                self.error(node, f"missing attribute {name!r}")
                out[name] = None
            else:
                out[name] = node.attrs[name]
        for name in optional:
            out[name] = node.attrs.get(name)
        for name in node.attrs:
            if name not in required and name not in optional:
                self.warn(node, f"unknown attribute {name!r} ignored")
        return out

    def number(self, node, text, what, integer=False):
        if text is None:
            return None
        try:
            value = int(text) if integer else float(text)
        except ValueError:
            self.error(node, f"invalid {'integer' if integer else 'number'} {text!r} for {what}")
            return None
        if not integer and not math.isfinite(value):
            self.error(node, f"non-finite value for {what}")
            return None
        return value

    def unknown(self, node, parent):
        self.error(node, f"unknown element <{node.tag}> inside <{parent.tag}>")

    def no_children(self, node):
        for child in node.children:
            self.unknown(child, node)

    # -- elements ---------------------------------------------------------

    def document(self, root):
        if root is None:
            d = Diagnostic(1, "error", "solver-interface", "missing solver-interface")
            raise ConfigError(str(d), [d])
        if root.tag != "solver-interface":
            d = Diagnostic(root.line, "error", root.tag, f"missing solver-interface (root element is <{root.tag}>)")
            raise ConfigError(str(d), [d])
        a = self.attrs(root, ("dimensions",))
        dims = self.number(root, a["dimensions"], "dimensions", integer=True)
        if dims is not None and dims not in (2, 3):
            self.error(root, f"dimensions must be 2 or 3, got {dims}")
        data, meshes, participants, m2n, schemes = [], [], [], [], []
        for node in root.children:
            if node.tag in ("data:scalar", "data:vector"):
                a = self.attrs(node, ("name",))
                self.no_children(node)
                data.append(DataDecl(a["name"], node.tag.split(":")[1], node.line))
            elif node.tag == "mesh":
                meshes.append(self.mesh(node))
            elif node.tag == "participant":
                participants.append(self.participant(node))
            elif node.tag.startswith("m2n:"):
                m2n.append(self.m2n(node))
            elif node.tag.startswith("coupling-scheme:"):
                schemes.append(self.scheme(node))
            else:
                self.unknown(node, root)
        scheme, lines = (None, {})
        if len(schemes) > 1:
            for s in schemes[1:]:
                self.diags.append(Diagnostic(s[1]["scheme"], "error", "coupling-scheme", "exactly one coupling scheme allowed"))
        if schemes:
            scheme, lines = schemes[0]
        return CouplingConfig(
            dims or 0, tuple(data), tuple(meshes), tuple(participants), tuple(m2n),
            scheme, root.line, lines,
        )

    def mesh(self, node):
        a = self.attrs(node, ("name",))
        use = []
        for child in node.children:
            if child.tag == "use-data":
                use.append(self.attrs(child, ("name",))["name"])
                self.no_children(child)
            else:
                self.unknown(child, node)
        return MeshDecl(a["name"], tuple(use), node.line)

    def participant(self, node):
        a = self.attrs(node, ("name",))
        use, writes, reads, maps, watch = [], [], [], [], []
        for child in node.children:
            self.no_children(child)
            if child.tag == "use-mesh":
                c = self.attrs(child, ("name",), ("provide", "from"))
                provide = (c["provide"] or "no").lower() in ("yes", "true", "1")
                if c["provide"] is not None and c["provide"].lower() not in ("yes", "no", "true", "false", "1", "0"):
                    self.error(child, f"provide must be yes or no, got {c['provide']!r}")
                use.append(UseMesh(c["name"], provide, c["from"], child.line))
            elif child.tag in ("write-data", "read-data"):
                c = self.attrs(child, ("name", "mesh"))
                (writes if child.tag == "write-data" else reads).append(DataAccess(c["name"], c["mesh"], child.line))
            elif child.tag.startswith("mapping:"):
                maps.append(self.mapping(child))
            elif child.tag == "watch-point":
                c = self.attrs(child, ("name", "mesh", "coordinate"))
                coord = ()
                if c["coordinate"] is not None:
                    parts = [self.number(child, s, "coordinate") for s in c["coordinate"].split(";")]
                    coord = tuple(p for p in parts if p is not None)
                watch.append(WatchPoint(c["name"], c["mesh"], coord, child.line))
            else:
                self.unknown(child, node)
        return ParticipantConfig(a["name"], tuple(use), tuple(writes), tuple(reads), tuple(maps), tuple(watch), node.line)

    def mapping(self, node):
        kind = node.tag.split(":", 1)[1]
        if kind not in MAPPING_KINDS:
            self.error(node, f"unknown mapping kind {kind!r}")
        c = self.attrs(node, ("from", "constraint"), ("to", "support-radius", "polynomial"))
        radius = self.number(node, c["support-radius"], "support-radius")
        return MappingConfig(
            kind, c["from"], c["to"], c["constraint"], radius, c["polynomial"] or "separated", node.line
        )

    def m2n(self, node):
        self.no_children(node)
        if node.tag != "m2n:sockets":
            self.error(node, f"unsupported communication {node.tag!r} (only m2n:sockets)")
        c = self.attrs(node, ("from", "to"), ("exchange-directory",))
        return M2NConfig(c["from"], c["to"], c["exchange-directory"] or ".", node.line)

    def value(self, node, integer=False):
        self.no_children(node)
        c = self.attrs(node, ("value",))
        return self.number(node, c["value"], node.tag, integer)

    def scheme(self, node):
        kind = node.tag.split(":", 1)[1]
        lines = {"scheme": node.line}
        if kind not in SCHEME_KINDS:
            self.error(node, f"unknown coupling scheme {kind!r}")
        first = second = None
        dt = t_end = None
        max_it = DEFAULT_MAX_ITERATIONS
        exchanges, measures, acc = [], [], AccelerationConfig()
        for child in node.children:
            if child.tag == "participants":
                self.no_children(child)
                c = self.attrs(child, ("first", "second"))
                first, second = c["first"], c["second"]
                lines["participants"] = child.line
            elif child.tag == "time-window-size":
                dt = self.value(child)
                lines["time-window-size"] = child.line
            elif child.tag == "max-time":
                t_end = self.value(child)
                lines["max-time"] = child.line
            elif child.tag == "max-iterations":
                max_it = self.value(child, integer=True)
                lines["max-iterations"] = child.line
            elif child.tag == "exchange":
                self.no_children(child)
                c = self.attrs(child, ("data", "mesh", "from", "to"))
                lines[("exchange", len(exchanges))] = child.line
                exchanges.append(Exchange(c["data"], c["mesh"], c["from"], c["to"]))
            elif child.tag == "relative-convergence-measure":
                self.no_children(child)
                c = self.attrs(child, ("data", "mesh", "limit"))
                lines[("measure", len(measures))] = child.line
                limit = self.number(child, c["limit"], "limit")
                measures.append(ConvergenceMeasure(c["data"], c["mesh"], limit))
            elif child.tag.startswith("acceleration:"):
                lines["acceleration"] = child.line
                acc = self.acceleration(child)
            else:
                self.unknown(child, node)
        if "time-window-size" not in lines:
            self.error(node, "missing <time-window-size>")
        if "max-time" not in lines:
            self.error(node, "missing <max-time>")
        if "participants" not in lines:
            self.error(node, "missing <participants>")
        cfg = SchemeConfig(
            kind, first, second, dt if dt is not None else 0.0, t_end if t_end is not None else 0.0,
            max_it if max_it is not None else DEFAULT_MAX_ITERATIONS,
            tuple(exchanges), tuple(measures), acc,
        )
        return cfg, lines

    def acceleration(self, node):
        name = node.tag.split(":", 1)[1]
        kind = ACCELERATION_TAGS.get(name)
        if kind is None:
            self.error(node, f"unknown acceleration {name!r}")
            kind = "none"
        self.attrs(node)
        acc = AccelerationConfig(kind)
        for child in node.children:
            if child.tag == "initial-relaxation":
                v = self.value(child)
                if v is not None:
                    acc = replace(acc, initial_relaxation=v)
            elif child.tag == "max-used-iterations":
                v = self.value(child, integer=True)
                if v is not None:
                    acc = replace(acc, max_used_iterations=v)
            elif child.tag == "filter":
                self.no_children(child)
                c = self.attrs(child, ("type", "limit"))
                if c["type"] is not None and c["type"] != "QR1":
                    self.error(child, f"unsupported filter type {c['type']!r} (only QR1)")
                limit = self.number(child, c["limit"], "filter limit")
                if limit is not None:
                    acc = replace(acc, filter_limit=limit)
            else:
                self.unknown(child, node)
        return acc


# ----------------------------------------------------------------------
#  Semantic validation
# ----------------------------------------------------------------------


def _duplicates(items, what, out):
    seen = set()
    for item in items:
        if item.name in seen:
            out.append(Diagnostic(item.line, "error", what, f"duplicate {what} name {item.name!r}"))
        seen.add(item.name)


def validate(config: CouplingConfig) -> list:
    """All diagnostics for ``config`` (parse-time ones included), ordered by line."""
    out = list(config.diagnostics)
    E = lambda line, el, msg: out.append(Diagnostic(line, "error", el, msg))  # noqa: E731
    W = lambda line, el, msg: out.append(Diagnostic(line, "warning", el, msg))  # noqa: E731

    data = {d.name for d in config.data}
    meshes = {m.name: m for m in config.meshes}
    parts = {p.name: p for p in config.participants}
    _duplicates(config.data, "data", out)
    _duplicates(config.meshes, "mesh", out)
    _duplicates(config.participants, "participant", out)

    for m in config.meshes:
        for d in m.use_data:
            if d not in data:
                E(m.line, "mesh", f"unresolved reference: mesh {m.name!r} uses undeclared data {d!r}")

    if len(config.participants) != 2:
        E(config.line, "solver-interface",
          f"exactly two participants required, found {len(config.participants)}")

    sch = config.scheme
    exchanges = sch.exchanges if sch else ()
    for p in config.participants:
        _validate_participant(config, p, meshes, parts, exchanges, E, W)

    if len(config.m2n) != 1:
        E(config.line, "solver-interface", f"exactly one m2n connection required, found {len(config.m2n)}")
    for c in config.m2n:
        for end in (c.source, c.target):
            if end is not None and end not in parts:
                E(c.line, "m2n:sockets", f"unresolved reference: m2n names undeclared participant {end!r}")
        if c.source is not None and c.source == c.target:
            E(c.line, "m2n:sockets", "m2n connects a participant to itself")

    if sch is None:
        E(config.line, "solver-interface", "missing coupling-scheme")
    else:
        _validate_scheme(config, sch, meshes, parts, E, W)

    return sorted(set(out), key=lambda d: (d.line, d.severity != "error", d.message))


def _validate_participant(config, p, meshes, parts, exchanges, E, W):
    seen = set()
    for u in p.use_meshes:
        if u.name not in meshes:
            E(u.line, "use-mesh", f"unresolved reference: participant {p.name!r} uses undeclared mesh {u.name!r}")
        if u.name in seen:
            E(u.line, "use-mesh", f"duplicate use of mesh {u.name!r} by participant {p.name!r}")
        seen.add(u.name)
        if u.provide and u.source is not None:
            E(u.line, "use-mesh", f"mesh {u.name!r} cannot be both provided and received")
        elif not u.provide:
            if u.source is None:
                E(u.line, "use-mesh", f"mesh {u.name!r} must be provided or received from a participant")
            elif u.source not in parts or u.source == p.name:
                E(u.line, "use-mesh",
                  f"unresolved reference: participant {p.name!r} receives mesh {u.name!r} from unknown participant {u.source!r}")
            elif u.name not in parts[u.source].provided:
                E(u.line, "use-mesh",
                  f"unresolved reference: participant {u.source!r} does not provide mesh {u.name!r} used by {p.name!r}")

    for acc, role in ((p.write_data, "write-data"), (p.read_data, "read-data")):
        for a in acc:
            _check_access(config, p, a, role, meshes, E)

    for m in p.mappings:
        tag = f"mapping:{m.kind}"
        for end in (m.from_mesh, m.to_mesh):
            if end is not None and not p.uses(end):
                E(m.line, tag, f"unresolved reference: mapping endpoint {end!r} is not used by participant {p.name!r}")
        to = p.mapping_target(m)
        if m.to_mesh is None and to is None:
            E(m.line, tag, f"mapping target is ambiguous for participant {p.name!r}; set 'to'")
        if m.constraint is not None and m.constraint not in CONSTRAINTS:
            E(m.line, tag, f"constraint must be consistent or conservative, got {m.constraint!r}")
        if m.polynomial not in POLYNOMIAL_MODES:
            E(m.line, tag, f"polynomial must be one of {', '.join(POLYNOMIAL_MODES)}, got {m.polynomial!r}")
        if m.kind in LOCAL_RBF and (m.support_radius is None or m.support_radius <= 0):
            E(m.line, tag, f"{m.kind} requires a positive support-radius")
        if to is not None and p.uses(m.from_mesh) and p.uses(to) and p.mapping_direction(m) is None:
            E(m.line, tag, "mapping must connect a provided mesh with a received mesh")
        direction = p.mapping_direction(m)
        if direction and m.constraint == "consistent":
            names = [a.data for a in (p.write_data if direction == "write" else p.read_data)
                     if a.mesh == (m.from_mesh if direction == "write" else to)]
            for name in names:
                if "force" in name.lower():
                    W(m.line, tag, f"consistent mapping used for force-like data {name!r}; conservative is usual")

    for w in p.watchpoints:
        if not p.uses(w.mesh):
            E(w.line, "watch-point", f"unresolved reference: watch-point {w.name!r} on mesh {w.mesh!r} not used by {p.name!r}")
        if config.dimensions and len(w.coordinate) != config.dimensions:
            E(w.line, "watch-point",
              f"watch-point {w.name!r} has {len(w.coordinate)} coordinates, expected {config.dimensions}")

    for r in p.read_data:
        if not _read_is_fed(p, r, exchanges):
            E(r.line, "read-data",
              f"read-data {r.data!r} on mesh {r.mesh!r} of {p.name!r} is not produced by any exchange or mapping")


def _check_access(config, p, a, role, meshes, E):
    if config.data_decl(a.data) is None:
        E(a.line, role, f"unresolved reference: {role} names undeclared data {a.data!r}")
    if a.mesh not in meshes:
        E(a.line, role, f"unresolved reference: {role} {a.data!r} names undeclared mesh {a.mesh!r}")
        return
    if not p.uses(a.mesh):
        E(a.line, role, f"unresolved reference: mesh {a.mesh!r} is not used by participant {p.name!r}")
    if a.data not in meshes[a.mesh].use_data:
        E(a.line, role, f"unresolved reference: mesh {a.mesh!r} does not carry data {a.data!r}")


def _read_is_fed(p, r, exchanges):
    def arrives(data, mesh):
        return any(e.data == data and e.mesh == mesh and e.target == p.name for e in exchanges)

    if arrives(r.data, r.mesh):
        return True
    for m in p.mappings:
        if p.mapping_direction(m) == "read" and p.mapping_target(m) == r.mesh and arrives(r.data, m.from_mesh):
            return True
    return False


def _validate_scheme(config, sch, meshes, parts, E, W):
    lines = config.scheme_lines
    tag = f"coupling-scheme:{sch.kind}"
    base = lines.get("scheme", config.line)
    pl = lines.get("participants", base)
    for who in (sch.first, sch.second):
        if who is not None and who not in parts:
            E(pl, "participants", f"unresolved reference: scheme names undeclared participant {who!r}")
    if sch.first is not None and sch.first == sch.second:
        E(pl, "participants", "first and second participant must differ")
    dl = lines.get("time-window-size", base)
    tl = lines.get("max-time", base)
    if "time-window-size" in lines and not sch.window_size > 0:
        E(dl, "time-window-size", "time-window-size must be positive")
    if "max-time" in lines and not sch.max_time > 0:
        E(tl, "max-time", "max-time must be positive")
    if sch.window_size > 0 and sch.max_time > 0:
        m = sch.max_time / sch.window_size
        if abs(m - round(m)) > MULTIPLE_TOL * max(1.0, m) or round(m) < 1:
            E(tl, "max-time",
              f"max-time {sch.max_time!r} is not a multiple of time-window-size {sch.window_size!r}")
    if sch.implicit:
        if not sch.measures:
            E(base, tag, "implicit scheme requires at least one convergence measure")
        if sch.max_iterations < 1:
            E(lines.get("max-iterations", base), "max-iterations", "max-iterations must be >= 1")
    elif sch.acceleration.kind != "none":
        E(lines.get("acceleration", base), "acceleration", "acceleration requires an implicit coupling scheme")
    acc = sch.acceleration
    al = lines.get("acceleration", base)
    if acc.kind != "none":
        if not 0 < acc.initial_relaxation <= 1:
            E(al, "acceleration", "initial-relaxation must lie in (0, 1]")
        if acc.max_used_iterations < 1:
            E(al, "acceleration", "max-used-iterations must be >= 1")
        if not acc.filter_limit > 0:
            E(al, "acceleration", "filter limit must be positive")

    if not sch.exchanges:
        E(base, tag, "coupling scheme has no exchange")
    for i, e in enumerate(sch.exchanges):
        el = lines.get(("exchange", i), base)
        if config.data_decl(e.data) is None:
            E(el, "exchange", f"unresolved reference: exchange names undeclared data {e.data!r}")
        if e.mesh not in meshes:
            E(el, "exchange", f"unresolved reference: exchange of {e.data!r} names undeclared mesh {e.mesh!r}")
        elif e.data not in meshes[e.mesh].use_data:
            E(el, "exchange", f"unresolved reference: mesh {e.mesh!r} does not carry data {e.data!r}")
        for who in (e.source, e.target):
            if who not in parts:
                E(el, "exchange", f"unresolved reference: exchange names undeclared participant {who!r}")
            elif e.mesh in meshes and not parts[who].uses(e.mesh):
                E(el, "exchange", f"unresolved reference: participant {who!r} does not use exchange mesh {e.mesh!r}")
        if e.source == e.target:
            E(el, "exchange", "exchange source and target must differ")
    if sch.serial and sch.implicit and sch.second in parts and acc.kind != "none":
        if not any(e.source == sch.second for e in sch.exchanges):
            W(base, tag, f"nothing to accelerate: {sch.second!r} sends no data")
    for i, m in enumerate(sch.measures):
        ml = lines.get(("measure", i), base)
        if not any(e.data == m.data and e.mesh == m.mesh for e in sch.exchanges):
            E(ml, "relative-convergence-measure",
              f"unresolved reference: convergence measure on {m.data!r}/{m.mesh!r} matches no exchange")
        if m.limit is not None and not m.limit > 0:
            E(ml, "relative-convergence-measure", "limit must be positive")


# ----------------------------------------------------------------------
#  Entry points
# ----------------------------------------------------------------------


def parse(text: str, strict: bool = True) -> CouplingConfig:
    """Parse configuration text.

    Structural problems (malformed XML, unknown elements, missing attributes)
    always raise :class:`ConfigError`.  With ``strict`` semantic errors found
    by :func:`validate` raise too; otherwise they are left for the caller.
    """
    reader = _Reader()
    cfg = reader.document(_read_tree(text))
    structural = errors(reader.diags)
    if structural:
        diags = sorted(reader.diags)
        raise ConfigError(str(structural[0]), diags)
    cfg = replace(cfg, diagnostics=tuple(reader.diags))
    if strict:
        diags = validate(cfg)
        errs = errors(diags)
        if errs:
            raise ConfigError(str(errs[0]), diags)
    return cfg


def load(path, strict: bool = True) -> CouplingConfig:
    with open(path, encoding="utf-8") as fh:
        return parse(fh.read(), strict)


def _g(x) -> str:
    return repr(float(x))


def serialize(config: CouplingConfig) -> str:
    """XML text that parses back to a structurally equal configuration."""
    q = quoteattr
    out = [f"<solver-interface dimensions={q(str(config.dimensions))}>"]
    for d in config.data:
        out.append(f"  <data:{d.kind} name={q(d.name)}/>")
    for m in config.meshes:
        out.append(f"  <mesh name={q(m.name)}>")
        out += [f"    <use-data name={q(u)}/>" for u in m.use_data]
        out.append("  </mesh>")
    for p in config.participants:
        out.append(f"  <participant name={q(p.name)}>")
        for u in p.use_meshes:
            extra = ' provide="yes"' if u.provide else ""
            if u.source is not None:
                extra += f" from={q(u.source)}"
            out.append(f"    <use-mesh name={q(u.name)}{extra}/>")
        out += [f"    <write-data name={q(a.data)} mesh={q(a.mesh)}/>" for a in p.write_data]
        out += [f"    <read-data name={q(a.data)} mesh={q(a.mesh)}/>" for a in p.read_data]
        for m in p.mappings:
            attrs = f"from={q(m.from_mesh)}"
            if m.to_mesh is not None:
                attrs += f" to={q(m.to_mesh)}"
            attrs += f" constraint={q(m.constraint)}"
            if m.support_radius is not None:
                attrs += f" support-radius={q(_g(m.support_radius))}"
            attrs += f" polynomial={q(m.polynomial)}"
            out.append(f"    <mapping:{m.kind} {attrs}/>")
        for w in p.watchpoints:
            coord = ";".join(_g(c) for c in w.coordinate)
            out.append(f"    <watch-point name={q(w.name)} mesh={q(w.mesh)} coordinate={q(coord)}/>")
        out.append("  </participant>")
    for c in config.m2n:
        out.append(f"  <m2n:sockets from={q(c.source)} to={q(c.target)} exchange-directory={q(c.exchange_directory)}/>")
    s = config.scheme
    if s is not None:
        out.append(f"  <coupling-scheme:{s.kind}>")
        out.append(f"    <participants first={q(s.first)} second={q(s.second)}/>")
        out.append(f"    <time-window-size value={q(_g(s.window_size))}/>")
        out.append(f"    <max-time value={q(_g(s.max_time))}/>")
        out.append(f"    <max-iterations value={q(str(s.max_iterations))}/>")
        for e in s.exchanges:
            out.append(f"    <exchange data={q(e.data)} mesh={q(e.mesh)} from={q(e.source)} to={q(e.target)}/>")
        for m in s.measures:
            out.append(f"    <relative-convergence-measure data={q(m.data)} mesh={q(m.mesh)} limit={q(_g(m.limit))}/>")
        a = s.acceleration
        if a.kind != "none":
            name = ACCELERATION_NAMES[a.kind]
            out.append(f"    <acceleration:{name}>")
            out.append(f"      <initial-relaxation value={q(_g(a.initial_relaxation))}/>")
            out.append(f"      <max-used-iterations value={q(str(a.max_used_iterations))}/>")
            out.append(f"      <filter type={q(a.filter_type)} limit={q(_g(a.filter_limit))}/>")
            out.append(f"    </acceleration:{name}>")
        out.append(f"  </coupling-scheme:{s.kind}>")
    out.append("</solver-interface>")
    return "\n".join(out) + "\n"


def _dot_id(prefix, name):
    return '"' + f"{prefix}:{name}".replace("\\", "\\\\").replace('"', '\\"') + '"'


def _dot_label(text):
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def to_dot(config: CouplingConfig) -> str:
    """Graphviz digraph of participants, meshes, mappings, exchanges and the m2n link."""
    out = ["digraph coupling {", "  rankdir=LR;"]
    for p in config.participants:
        out.append(f"  {_dot_id('participant', p.name)} [label={_dot_label(p.name)}, shape=box];")
    for m in config.meshes:
        out.append(f"  {_dot_id('mesh', m.name)} [label={_dot_label(m.name)}, shape=ellipse];")
    for p in config.participants:
        pid = _dot_id("participant", p.name)
        for u in p.use_meshes:
            mid = _dot_id("mesh", u.name)
            if u.provide:
                out.append(f"  {pid} -> {mid} [label=\"provides\"];")
            else:
                out.append(f"  {mid} -> {pid} [label={_dot_label('from ' + str(u.source))}];")
        for m in p.mappings:
            to = p.mapping_target(m)
            label = f"{m.kind} {m.constraint}"
            out.append(
                f"  {_dot_id('mesh', m.from_mesh)} -> {_dot_id('mesh', to)} "
                f"[label={_dot_label(label)}, style=dashed];"
            )
    if config.scheme is not None:
        for e in config.scheme.exchanges:
            label = f"{e.data} ({e.mesh})"
            out.append(
                f"  {_dot_id('participant', e.source)} -> {_dot_id('participant', e.target)} "
                f"[label={_dot_label(label)}];"
            )
    for c in config.m2n:
        out.append(
            f"  {_dot_id('participant', c.source)} -> {_dot_id('participant', c.target)} "
            f"[label=\"m2n:sockets\", style=dotted];"
        )
    out.append("}")
    return "\n".join(out) + "\n"


# Two-participant fluid-structure configuration used as the reference
# fixture.  The solid participant, mapping radii, end time, convergence
# measures and acceleration body are minimal non-normative fill-ins.
FSI_EXAMPLE = """\
<solver-interface dimensions="3">
  <data:vector name="Force"/>
  <data:vector name="Displacement"/>

  <mesh name="Fluid-Mesh">
    <use-data name="Displacement"/>
    <use-data name="Force"/>
  </mesh>
  <mesh name="Solid-Mesh">
    <use-data name="Displacement"/>
    <use-data name="Force"/>
  </mesh>

  <participant name="Fluid">
    <use-mesh name="Fluid-Mesh" provide="yes"/>
    <use-mesh name="Solid-Mesh" from="Solid"/>
    <write-data name="Force" mesh="Fluid-Mesh"/>
    <read-data name="Displacement" mesh="Fluid-Mesh"/>
    <mapping:rbf-compact-tps-c2 from="Fluid-Mesh" constraint="conservative" support-radius="0.05"/>
    <mapping:rbf-compact-tps-c2 from="Solid-Mesh" constraint="consistent" support-radius="0.05"/>
  </participant>

  <participant name="Solid">
    <use-mesh name="Solid-Mesh" provide="yes"/>
    <write-data name="Displacement" mesh="Solid-Mesh"/>
    <read-data name="Force" mesh="Solid-Mesh"/>
  </participant>

  <m2n:sockets from="Fluid" to="Solid"/>

  <coupling-scheme:serial-implicit>
    <participants first="Fluid" second="Solid"/>
    <time-window-size value="1e-3"/>
    <max-time value="1e-2"/>
    <max-iterations value="50"/>
    <exchange data="Force" mesh="Solid-Mesh" from="Fluid" to="Solid"/>
    <exchange data="Displacement" mesh="Solid-Mesh" from="Solid" to="Fluid"/>
    <relative-convergence-measure data="Displacement" mesh="Solid-Mesh" limit="1e-4"/>
    <acceleration:IQN-ILS>
      <initial-relaxation value="0.1"/>
      <max-used-iterations value="40"/>
      <filter type="QR1" limit="1e-2"/>
    </acceleration:IQN-ILS>
  </coupling-scheme:serial-implicit>
</solver-interface>
"""
