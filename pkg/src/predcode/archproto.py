"""Architecture graphs for PredNet-style models: parameter accounting,
channel bookkeeping and Rao-Ballard protocol checks.

Module kinds: ``R`` (representation, a convolutional LSTM or GRU), ``E``
(error; output channels are twice the input since positive and negative
errors are split), ``A`` / ``Ahat`` (single convolution adapters) and
``Input``. Every trainable module holds ``cs`` convolution sets of
``oc * (k*k*ic + 1)`` weights each.

Protocol levels: the error module of spatial layer ``l`` sits at level
``l`` and the representation module of layer ``l`` one level above it, so
``R_l`` predicts ``E_l`` from above and serves as the lateral target of
``E_{l+1}``. The input image is a representation at level 0. Adapters are
transparent: a path R -> A -> E is judged as a single R -> E link.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

MODULE_KINDS = ("R", "E", "A", "Ahat", "Input")
LINK_KINDS = ("P", "PE", "LT", "LTE", "other")
RESIZES = ("none", "pool", "upsample")
CONV_SETS = {"lstm": 4, "gru": 3}

RR_FEEDBACK = "representation-to-representation feedback"
EE_FEEDFORWARD = "error-to-error feedforward"
UPWARD_R = "upward R projection"
DOWNWARD_E = "downward E projection"
MISLABELED = "link kind does not match its endpoints"


class ArchError(ValueError):
    """Malformed architecture (unknown endpoints, bad fields, channel mismatch)."""


class ArchParseError(ArchError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


@dataclass(frozen=True)
class ArchModule:
    name: str
    kind: str
    cs: int = 1
    k: int = 3
    ic: int = 0
    oc: int = 0
    layer: int = 0

    def __post_init__(self):
        if self.kind not in MODULE_KINDS:
            raise ArchError(f"{self.name}: unknown module kind {self.kind!r}")
        if self.cs not in (1, 3, 4):
            raise ArchError(f"{self.name}: conv sets must be 1, 3 or 4, got {self.cs}")
        if self.kind == "E" and self.oc != 2 * self.ic:
            raise ArchError(f"{self.name}: error modules need oc = 2*ic, got ic={self.ic} oc={self.oc}")
        if min(self.k, self.ic, self.oc) < 0 or self.layer < 0:
            raise ArchError(f"{self.name}: negative field")

    @property
    def trainable(self) -> bool:
        return self.kind in ("R", "A", "Ahat")

    @property
    def level(self) -> int | None:
        """Protocol level, or None for adapters."""
        if self.kind == "E":
            return self.layer
        if self.kind == "R":
            return self.layer + 1
        if self.kind == "Input":
            return 0
        return None

    @property
    def role(self) -> str | None:
        """'R' or 'E' for protocol endpoints (the input counts as a representation)."""
        return {"R": "R", "Input": "R", "E": "E"}.get(self.kind)


@dataclass(frozen=True)
class ArchLink:
    src: str
    dst: str
    kind: str = "other"
    resize: str = "none"

    def __post_init__(self):
        if self.src == self.dst:
            raise ArchError(f"self link on {self.src}")
        if self.kind not in LINK_KINDS:
            raise ArchError(f"{self.src}->{self.dst}: unknown link kind {self.kind!r}")
        if self.resize not in RESIZES:
            raise ArchError(f"{self.src}->{self.dst}: unknown resize {self.resize!r}")


@dataclass
class Architecture:
    modules: list[ArchModule] = field(default_factory=list)
    links: list[ArchLink] = field(default_factory=list)
    stack_sizes: list[int] = field(default_factory=list)
    r_stack_sizes: list[int] = field(default_factory=list)
    name: str = ""
    loss_weights: tuple[float, ...] = ()  # training metadata; affects neither counts nor protocol

    def __post_init__(self):
        names = [m.name for m in self.modules]
        if len(set(names)) != len(names):
            raise ArchError("duplicate module names")
        known = set(names)
        for l in self.links:
            for end in (l.src, l.dst):
                if end not in known:
                    raise ArchError(f"link {l.src}->{l.dst} refers to unknown module {end}")

    def module(self, name: str) -> ArchModule:
        for m in self.modules:
            if m.name == name:
                return m
        raise KeyError(name)

    def incoming(self, name: str) -> list[ArchLink]:
        return [l for l in self.links if l.dst == name]

    def outgoing(self, name: str) -> list[ArchLink]:
        return [l for l in self.links if l.src == name]


# -- parameter accounting ---------------------------------------------------

def module_params(m: ArchModule) -> int:
    """cs * oc * (k^2 * ic + 1); zero for modules without weights."""
    if not m.trainable:
        return 0
    return m.cs * m.oc * (m.k * m.k * m.ic + 1)


def total_params(a: Architecture) -> int:
    return sum(module_params(m) for m in a.modules)


def param_rows(a: Architecture) -> list[tuple[ArchModule, int]]:
    return [(m, module_params(m)) for m in a.modules if m.trainable]


def param_report(a: Architecture) -> str:
    """Aligned text table: module, cs, filter, ic, oc, calculation, count."""
    header = ("Module", "cs", "filter", "ic", "oc", "cs*oc*(k^2*ic+1)", "count")
    rows = []
    for m, n in param_rows(a):
        calc = f"{m.cs}*{m.oc}*({m.k}^2*{m.ic}+1)"
        rows.append((m.name, str(m.cs), f"{m.k}x{m.k}", str(m.ic), str(m.oc), calc, f"{n:,}"))
    total = ("", "", "", "", "", "Total parameters:", f"{total_params(a):,}")
    widths = [max(len(r[i]) for r in [header, *rows, total]) for i in range(len(header))]
    right = {1, 3, 4, 6}

    def fmt(r):
        return "  ".join(c.rjust(w) if i in right else c.ljust(w) for i, (c, w) in enumerate(zip(r, widths))).rstrip()

    rule = "-" * len(fmt(header))
    title = f"Parameter count for {a.name}" if a.name else "Parameter count"
    return "\n".join([title, rule, fmt(header), rule, *map(fmt, rows), rule, fmt(total)]) + "\n"


# -- presets ----------------------------------------------------------------

def _check_stacks(stack: Sequence[int], r_stack: Sequence[int]):
    if len(stack) != len(r_stack):
        raise ArchError(f"stack_sizes has {len(stack)} entries but r_stack_sizes has {len(r_stack)}")
    if not stack:
        raise ArchError("need at least one layer")
    if any(s <= 0 for s in [*stack, *r_stack]):
        raise ArchError("stack sizes must be positive")


def build_preset(
    name: str,
    stack_sizes: Sequence[int] | None = None,
    r_stack_sizes: Sequence[int] | None = None,
    cell: str = "lstm",
    k: int = 3,
) -> Architecture:
    """Construct an ``rbp``, ``lotter`` or ``hybrid`` design.

    Named presets (see :data:`PRESETS`) may be passed as ``name`` without
    stack lists. Module order follows the reference tables:
    Ahat0, R0, A1, Ahat1, R1, A2, Ahat2, R2, then the error modules.
    """
    if name in PRESETS and stack_sizes is None:
        base, st, rst, c = PRESETS[name]
        a = build_preset(base, st, rst, c, k)
        a.name = name
        a.loss_weights = LOSS_WEIGHTS.get(name, ())
        return a
    if name not in ("rbp", "lotter", "hybrid"):
        raise ArchError(f"unknown preset {name!r}; known: rbp, lotter, hybrid, {', '.join(PRESETS)}")
    if stack_sizes is None or r_stack_sizes is None:
        raise ArchError(f"preset {name!r} needs stack_sizes and r_stack_sizes")
    if cell not in CONV_SETS:
        raise ArchError(f"cell must be lstm or gru, got {cell!r}")
    st, rst = list(stack_sizes), list(r_stack_sizes)
    _check_stacks(st, rst)
    cs = CONV_SETS[cell]
    n = len(st)
    lotter = name == "lotter"
    rr_feedback = name in ("lotter", "hybrid")

    mods: list[ArchModule] = []
    links: list[ArchLink] = []
    for l in range(n):
        mods.append(ArchModule(f"Ahat{l}", "Ahat", 1, k, rst[l], st[l], l))
        ic = rst[l] + 2 * st[l]
        if l + 1 < n:
            ic += rst[l + 1] if lotter else 2 * st[l + 1]
            if name == "hybrid":
                ic += rst[l + 1]
        mods.append(ArchModule(f"R{l}", "R", cs, k, ic, rst[l], l))
        if l + 1 < n:
            a_ic = 2 * st[l] if lotter else rst[l]
            mods.append(ArchModule(f"A{l + 1}", "A", 1, k, a_ic, st[l + 1], l + 1))
    mods.append(ArchModule("Input", "Input", 1, k, 0, st[0], 0))
    for l in range(n):
        mods.append(ArchModule(f"E{l}", "E", 1, k, st[l], 2 * st[l], l))

    links.append(ArchLink("Input", "E0", "LT"))
    for l in range(n):
        links.append(ArchLink(f"R{l}", f"Ahat{l}", "P"))
        links.append(ArchLink(f"Ahat{l}", f"E{l}", "P"))
        links.append(ArchLink(f"E{l}", f"R{l}", "PE"))
        if l + 1 < n:
            if lotter:
                links.append(ArchLink(f"E{l}", f"A{l + 1}", "other", "pool"))
                links.append(ArchLink(f"A{l + 1}", f"E{l + 1}", "other"))
            else:
                links.append(ArchLink(f"R{l}", f"A{l + 1}", "LT", "pool"))
                links.append(ArchLink(f"A{l + 1}", f"E{l + 1}", "LT"))
                links.append(ArchLink(f"E{l + 1}", f"R{l}", "LTE", "upsample"))
            if rr_feedback:
                links.append(ArchLink(f"R{l + 1}", f"R{l}", "other", "upsample"))
    tag = f"{name} {st}/{rst} {cell}"
    return Architecture(mods, links, st, rst, name=tag)


# name -> (construction, stack_sizes, r_stack_sizes, cell)
PRESETS: dict[str, tuple[str, list[int], list[int], str]] = {
    "rbp3": ("rbp", [3, 3, 12], [3, 12, 24], "lstm"),
    "rbp3_gru": ("rbp", [3, 3, 12], [3, 12, 24], "gru"),
    "lotter3": ("lotter", [3, 12, 24], [3, 12, 24], "lstm"),
    "hybrid3": ("hybrid", [3, 3, 12], [3, 12, 24], "lstm"),
    "pred1": ("lotter", [3, 12, 24], [3, 12, 24], "lstm"),
    "pred2": ("lotter", [3, 12, 24], [3, 12, 24], "lstm"),
    "rb1": ("rbp", [3, 3, 12], [3, 12, 24], "lstm"),
    "rb2": ("rbp", [3, 3, 12], [3, 12, 24], "lstm"),
    "rb3": ("rbp", [3, 12, 24], [10, 16, 30], "lstm"),
    "rb3_gru": ("rbp", [3, 12, 24], [10, 16, 30], "gru"),
    "rb4_gru": ("rbp", [3, 12, 24], [10, 16, 30], "gru"),
    "rb5": ("rbp", [3, 3, 12], [3, 12, 24], "lstm"),
    "rb6": ("rbp", [3, 3], [3, 12], "lstm"),
    "rb7": ("rbp", [3, 3], [3, 12], "lstm"),
}

LOSS_WEIGHTS: dict[str, tuple[float, ...]] = {
    "pred1": (0.5, 0.4, 0.2), "pred2": (1.0, 0.0, 0.0),
    "rb1": (0.5, 0.4, 0.2), "rb2": (1.0, 0.0, 0.0), "rb3": (1.0, 0.0, 0.0),
    "rb3_gru": (0.5, 0.4, 0.2), "rb4_gru": (1.0, 0.0, 0.0),
    "rb5": (0.33, 0.33, 0.33), "rb6": (1.0, 0.0), "rb7": (0.5, 0.5),
}


# -- channels ---------------------------------------------------------------

@dataclass(frozen=True)
class LinkRow:
    src: str
    dst: str
    kind: str
    channels: int
    resize: str


def link_table(a: Architecture) -> list[LinkRow]:
    """Every link with the channel count it carries; raises on inconsistency.

    Rules: an adapter's ic is the sum of its inputs; each input of an error
    module carries exactly its ic; a representation's ic is its own
    recurrent state (oc) plus everything it receives. Cross-layer links must
    pool going up and upsample going down.
    """
    rows = []
    by_name = {m.name: m for m in a.modules}
    for l in a.links:
        s, d = by_name[l.src], by_name[l.dst]
        expected = "pool" if d.layer > s.layer else "upsample" if d.layer < s.layer else "none"
        if l.resize != expected:
            raise ArchError(f"link {l.src}->{l.dst}: layers {s.layer}->{d.layer} need resize={expected}, got {l.resize}")
        rows.append(LinkRow(l.src, l.dst, l.kind, s.oc, l.resize))
    for m in a.modules:
        inc = [r for r in rows if r.dst == m.name]
        got = sum(r.channels for r in inc)
        if m.kind in ("A", "Ahat") and got != m.ic:
            raise ArchError(f"{m.name}: receives {got} channels but ic={m.ic} "
                            f"(from {', '.join(r.src for r in inc) or 'nothing'})")
        if m.kind == "E":
            for r in inc:
                if r.channels != m.ic:
                    raise ArchError(f"link {r.src}->{m.name} carries {r.channels} channels, {m.name} expects {m.ic}")
        if m.kind == "R" and m.oc + got != m.ic:
            raise ArchError(f"{m.name}: recurrent {m.oc} + inputs {got} != ic {m.ic}")
        if m.kind == "Input" and inc:
            raise ArchError(f"{m.name}: input module cannot receive links")
    return rows


def r_input_breakdown(a: Architecture, name: str) -> list[tuple[str, int]]:
    """Channel decomposition of a representation module's input: recurrent first."""
    m = a.module(name)
    rows = link_table(a)
    return [(name + " (recurrent)", m.oc)] + [(r.src, r.channels) for r in rows if r.dst == name]


# -- protocol ---------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    rule: str
    path: tuple[str, ...]

    def __str__(self):
        return f"{self.rule}: {' -> '.join(self.path)}"


@dataclass
class ConformanceReport:
    violations: list[Violation]
    checked: list[tuple[tuple[str, ...], str]]  # (path, link class)

    @property
    def passed(self) -> bool:
        return not self.violations

    @property
    def rules(self) -> set[str]:
        return {v.rule for v in self.violations}

    def __str__(self):
        if self.passed:
            return f"PASS ({len(self.checked)} links conform)\n"
        lines = [f"FAIL: {len(self.violations)} violating links in {len(self.rules)} classes"]
        for rule in sorted(self.rules):
            lines.append(f"  {rule}:")
            lines += [f"    {' -> '.join(v.path)}" for v in self.violations if v.rule == rule]
        return "\n".join(lines) + "\n"


def endpoint_paths(a: Architecture) -> list[tuple[str, ...]]:
    """All paths from an R/E/Input module to an R/E module through adapters."""
    by_name = {m.name: m for m in a.modules}
    paths = []

    def walk(path):
        for l in a.outgoing(path[-1]):
            nxt = by_name[l.dst]
            if l.dst in path:
                raise ArchError(f"adapter cycle through {l.dst}")
            if nxt.role is None:
                walk(path + (l.dst,))
            else:
                paths.append(path + (l.dst,))

    for m in a.modules:
        if m.role is not None:
            walk((m.name,))
    return paths


def _classify(src: ArchModule, dst: ArchModule) -> tuple[str | None, str | None]:
    """(expected link kind, violated rule) for an endpoint pair."""
    delta = dst.level - src.level
    if src.role == "R" and dst.role == "R":
        return None, RR_FEEDBACK if delta <= 0 else UPWARD_R
    if src.role == "E" and dst.role == "E":
        return None, EE_FEEDFORWARD if delta >= 0 else DOWNWARD_E
    if src.role == "R":
        if delta > 0:
            return None, UPWARD_R
        return ("P" if delta < 0 else "LT"), None
    if delta < 0:
        return None, DOWNWARD_E
    return ("PE" if delta > 0 else "LTE"), None


def validate_rb_protocol(a: Architecture) -> ConformanceReport:
    """Representations may only talk to error modules and vice versa;
    errors never project down and representations never project up."""
    by_name = {m.name: m for m in a.modules}
    link_kind = {(l.src, l.dst): l.kind for l in a.links}
    violations, checked = [], []
    for path in endpoint_paths(a):
        src, dst = by_name[path[0]], by_name[path[-1]]
        expected, rule = _classify(src, dst)
        if rule is None:
            kinds = {link_kind[(u, v)] for u, v in zip(path, path[1:])}
            if kinds != {expected}:
                rule = MISLABELED
        if rule is not None:
            violations.append(Violation(rule, path))
        checked.append((path, expected or "violation"))
    return ConformanceReport(violations, checked)


def single_element() -> Architecture:
    """One predictive element: a representation above an error unit with all four link types."""
    mods = [
        ArchModule("Input", "Input", oc=4, layer=0),
        ArchModule("E0", "E", ic=4, oc=8, layer=0),
        ArchModule("R0", "R", cs=1, ic=20, oc=4, layer=0),
        ArchModule("E1", "E", ic=4, oc=8, layer=1),
        ArchModule("R1", "R", cs=1, ic=12, oc=4, layer=1),
    ]
    links = [
        ArchLink("Input", "E0", "LT"),
        ArchLink("R0", "E0", "P"),
        ArchLink("E0", "R0", "PE"),
        ArchLink("R0", "E1", "LT", "pool"),
        ArchLink("E1", "R0", "LTE", "upsample"),
        ArchLink("R1", "E1", "P"),
        ArchLink("E1", "R1", "PE"),
    ]
    return Architecture(mods, links, name="single predictive element")


# -- text format ------------------------------------------------------------
#
#   module <name> kind=<R|E|A|Ahat|Input> cs=<n> k=<n> ic=<n> oc=<n> [layer=<n>]
#   link <src> -> <dst> kind=<P|PE|LT|LTE|other> resize=<none|pool|upsample>
#
# '#' starts a comment. Without layer=, the trailing integer of the module
# name is used (0 if there is none).

_MODULE_KEYS = {"kind", "cs", "k", "ic", "oc", "layer"}
_LINK_KEYS = {"kind", "resize"}


def _kv(tokens: Iterable[str], allowed: set[str], lineno: int) -> dict[str, str]:
    out = {}
    for t in tokens:
        if "=" not in t:
            raise ArchParseError(lineno, f"expected key=value, got {t!r}")
        key, val = t.split("=", 1)
        if key not in allowed:
            raise ArchParseError(lineno, f"unknown key {key!r}")
        out[key] = val
    return out


def _int(d: dict, key: str, lineno: int, default: int | None = None) -> int:
    if key not in d:
        if default is None:
            raise ArchParseError(lineno, f"missing {key}=")
        return default
    try:
        return int(d[key])
    except ValueError:
        raise ArchParseError(lineno, f"{key} must be an integer, got {d[key]!r}") from None


def parse_architecture(text: str, name: str = "") -> Architecture:
    mods, links = [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        try:
            if tok[0] == "module":
                if len(tok) < 2:
                    raise ArchParseError(lineno, "module needs a name")
                kv = _kv(tok[2:], _MODULE_KEYS, lineno)
                if "kind" not in kv:
                    raise ArchParseError(lineno, "missing kind=")
                m = re.search(r"(\d+)$", tok[1])
                mods.append(ArchModule(
                    tok[1], kv["kind"], _int(kv, "cs", lineno, 1), _int(kv, "k", lineno, 3),
                    _int(kv, "ic", lineno), _int(kv, "oc", lineno),
                    _int(kv, "layer", lineno, int(m.group(1)) if m else 0),
                ))
            elif tok[0] == "link":
                if len(tok) < 4 or tok[2] != "->":
                    raise ArchParseError(lineno, "expected 'link <src> -> <dst> ...'")
                kv = _kv(tok[4:], _LINK_KEYS, lineno)
                links.append(ArchLink(tok[1], tok[3], kv.get("kind", "other"), kv.get("resize", "none")))
            else:
                raise ArchParseError(lineno, f"unknown statement {tok[0]!r}")
        except ArchParseError:
            raise
        except ArchError as exc:
            raise ArchParseError(lineno, str(exc)) from None
    try:
        return Architecture(mods, links, name=name)
    except ArchError as exc:
        raise ArchParseError(0, str(exc)) from None


def format_architecture(a: Architecture) -> str:
    lines = [f"# {a.name}"] if a.name else []
    for m in a.modules:
        lines.append(f"module {m.name} kind={m.kind} cs={m.cs} k={m.k} ic={m.ic} oc={m.oc} layer={m.layer}")
    for l in a.links:
        lines.append(f"link {l.src} -> {l.dst} kind={l.kind} resize={l.resize}")
    return "\n".join(lines) + "\n"


def load_architecture(source: str) -> Architecture:
    """A preset name or a path to an architecture file."""
    if source in PRESETS:
        return build_preset(source)
    if not os.path.exists(source):
        raise ArchError(f"{source!r} is neither a preset ({', '.join(PRESETS)}) nor a file")
    with open(source) as fh:
        return parse_architecture(fh.read(), name=os.path.basename(source))
