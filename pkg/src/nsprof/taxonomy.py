"""Priority-ordered rule engine mapping operation names to categories."""

from __future__ import annotations

import enum
import os
import re
import sys
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from .calltree import OpRecord
from .errors import BadPattern, DuplicateCategory, TaxonomyError, UndeclaredCategory
from .trace import Device

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

OTHER = "Other"
BUILTIN_PREFIX = "builtin:"
BUILTINS = ("ml8", "symbolic")
RULES_ENV = "NSPROF_RULES"

ML8_CATEGORIES: Tuple[str, ...] = (
    "DenseMM",
    "SparseMM",
    "Convolution",
    "ElementWise",
    "Regional",
    "Embedding",
    "DataMovement",
    "DataTransformation",
    OTHER,
)
SYMBOLIC_CATEGORIES: Tuple[str, ...] = ("Query", "ScalarArithmetic", "JsonParsing", OTHER)


@dataclass(frozen=True)
class CategoryId:
    taxonomy_name: str
    category_name: str

    def __str__(self) -> str:
        return f"{self.taxonomy_name}:{self.category_name}"


class ShapePredicate(str, enum.Enum):
    ANY = "any"
    HAS_SHAPES = "has"
    NO_SHAPES = "none"


@dataclass(frozen=True)
class Rule:
    pattern: str
    category: CategoryId
    priority: int = 0
    device_filter: Optional[Device] = None
    shape_predicate: ShapePredicate = ShapePredicate.ANY
    ops_per_element: int = 1
    position: int = 0
    regex: "re.Pattern[str]" = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.regex is None:
            object.__setattr__(self, "regex", compile_pattern(self.pattern))

    def applies(self, device: Device, has_shapes: bool) -> bool:
        if self.device_filter is not None and device is not self.device_filter:
            return False
        if self.shape_predicate is ShapePredicate.HAS_SHAPES:
            return has_shapes
        if self.shape_predicate is ShapePredicate.NO_SHAPES:
            return not has_shapes
        return True


def compile_pattern(pattern: str) -> "re.Pattern[str]":
    try:
        return re.compile(pattern, re.IGNORECASE)
    except re.error as exc:
        where = f" at position {exc.pos}" if exc.pos is not None else ""
        raise BadPattern(f"pattern {pattern!r} does not compile{where}: {exc.msg}") from None


_BACKREF = re.compile(r"\\[1-9]|\(\?P=")


@dataclass(frozen=True)
class RuleSet:
    """A taxonomy plus its rules, held in match order.

    Rules are ordered by descending priority, then by file position, so
    every pair of rules has a strict precedence.
    """

    taxonomy_name: str
    categories: Tuple[str, ...]
    rules: Tuple[Rule, ...]
    _cache: Dict[Tuple[str, Device, bool], Optional[int]] = field(
        default_factory=dict, compare=False, repr=False
    )
    _combined: Optional["re.Pattern[str]"] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        cats = tuple(self.categories)
        if len(set(cats)) != len(cats):
            dupes = sorted({c for c in cats if cats.count(c) > 1})
            raise DuplicateCategory(f"taxonomy {self.taxonomy_name!r} declares {dupes} more than once")
        if OTHER not in cats:
            cats = cats + (OTHER,)
        object.__setattr__(self, "categories", cats)
        for rule in self.rules:
            if rule.category.taxonomy_name != self.taxonomy_name or rule.category.category_name not in cats:
                raise UndeclaredCategory(
                    f"rule {rule.pattern!r} targets {rule.category.category_name!r}, "
                    f"which taxonomy {self.taxonomy_name!r} does not declare"
                )
        ordered = tuple(sorted(self.rules, key=lambda r: (-r.priority, r.position)))
        object.__setattr__(self, "rules", ordered)
        object.__setattr__(self, "_combined", self._build_combined(ordered))

    @staticmethod
    def _build_combined(rules: Sequence[Rule]) -> Optional["re.Pattern[str]"]:
        # One alternation tries the rules in order and reports the first
        # whose pattern matches the whole name.
        if not rules or any(_BACKREF.search(r.pattern) for r in rules):
            return None
        body = "|".join(f"(?P<r{i}>(?:{r.pattern}))" for i, r in enumerate(rules))
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error")
                return re.compile(body, re.IGNORECASE)
        except (re.error, DeprecationWarning, FutureWarning):
            return None

    def category(self, name: str) -> CategoryId:
        return CategoryId(self.taxonomy_name, name)

    @property
    def other(self) -> CategoryId:
        return CategoryId(self.taxonomy_name, OTHER)

    def _match_index(self, name: str, device: Device, has_shapes: bool) -> Optional[int]:
        key = (name, device, has_shapes)
        try:
            return self._cache[key]
        except KeyError:
            pass
        start = 0
        if self._combined is not None:
            m = self._combined.fullmatch(name)
            if m is None:
                self._cache[key] = None
                return None
            start = int(m.lastgroup[1:])
        found = None
        for i in range(start, len(self.rules)):
            rule = self.rules[i]
            if rule.regex.fullmatch(name) and rule.applies(device, has_shapes):
                found = i
                break
        self._cache[key] = found
        return found

    def match(self, record: OpRecord) -> Optional[Rule]:
        """The winning rule for ``record``, or ``None`` when nothing matches."""
        i = self._match_index(record.name, record.device, record.shapes is not None)
        return None if i is None else self.rules[i]

    def with_rule(self, rule: Rule) -> "RuleSet":
        """A new rule set with ``rule`` appended after the existing rules."""
        pos = max((r.position for r in self.rules), default=-1) + 1
        added = Rule(rule.pattern, rule.category, rule.priority, rule.device_filter,
                     rule.shape_predicate, rule.ops_per_element, pos, rule.regex)
        return RuleSet(self.taxonomy_name, self.categories, self.rules + (added,))


# ---------------------------------------------------------------------------
# loading

_RULE_KEYS = {"pattern", "category", "priority", "device", "shapes", "ops_per_element"}


def _parse_rules(doc: dict, origin: str) -> RuleSet:
    if not isinstance(doc.get("taxonomy"), dict):
        raise TaxonomyError(f"{origin}: missing [taxonomy] table")
    tax = doc["taxonomy"]
    name = tax.get("name")
    cats = tax.get("categories")
    if not isinstance(name, str) or not name:
        raise TaxonomyError(f"{origin}: [taxonomy] needs a non-empty 'name'")
    if not isinstance(cats, list) or not all(isinstance(c, str) and c for c in cats):
        raise TaxonomyError(f"{origin}: [taxonomy] needs a 'categories' list of names")
    if len(set(cats)) != len(cats):
        dupes = sorted({c for c in cats if cats.count(c) > 1})
        raise DuplicateCategory(f"{origin}: category {dupes} declared more than once")
    declared = set(cats) | {OTHER}

    rules = []
    raw_rules = doc.get("rule", [])
    if not isinstance(raw_rules, list):
        raise TaxonomyError(f"{origin}: 'rule' must be an array of tables ([[rule]])")
    for pos, raw in enumerate(raw_rules):
        extra = set(raw) - _RULE_KEYS
        if extra:
            raise TaxonomyError(f"{origin}: rule {pos}: unknown key(s) {sorted(extra)}")
        pattern = raw.get("pattern")
        category = raw.get("category")
        if not isinstance(pattern, str) or not isinstance(category, str):
            raise TaxonomyError(f"{origin}: rule {pos} needs string 'pattern' and 'category'")
        if category not in declared:
            raise UndeclaredCategory(f"{origin}: rule {pos} ({pattern!r}) uses undeclared category {category!r}")
        priority = raw.get("priority", 0)
        if not isinstance(priority, int) or isinstance(priority, bool):
            raise TaxonomyError(f"{origin}: rule {pos}: priority must be an integer")
        device = raw.get("device")
        try:
            device = None if device is None else Device(str(device).lower())
            shapes = ShapePredicate(raw.get("shapes", "any"))
        except ValueError as exc:
            raise TaxonomyError(f"{origin}: rule {pos}: {exc}") from None
        c = raw.get("ops_per_element", 1)
        if not isinstance(c, int) or isinstance(c, bool) or c < 1:
            raise TaxonomyError(f"{origin}: rule {pos}: ops_per_element must be a positive integer")
        try:
            regex = compile_pattern(pattern)
        except BadPattern as exc:
            raise BadPattern(f"{origin}: rule {pos}: {exc}") from None
        rules.append(Rule(pattern, CategoryId(name, category), priority, device, shapes, c, pos, regex))
    return RuleSet(name, tuple(cats), tuple(rules))


def load_rules(source: Union[bytes, str, "object"], origin: str = "<rules>") -> RuleSet:
    """Parse a rule file (TOML with ``[taxonomy]`` and ``[[rule]]`` tables)."""
    if hasattr(source, "read"):
        source = source.read()
    if isinstance(source, bytes):
        try:
            source = source.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise TaxonomyError(f"{origin}: not UTF-8 text") from exc
    try:
        doc = tomllib.loads(source)
    except tomllib.TOMLDecodeError as exc:
        raise TaxonomyError(f"{origin}: {exc}") from None
    return _parse_rules(doc, origin)


def builtin_rules_text(name: str) -> str:
    if name not in BUILTINS:
        raise TaxonomyError(f"no built-in rule set {name!r}; available: {', '.join(BUILTINS)}")
    return resources.files("nsprof").joinpath("data", "rules", f"{name}.rules").read_text("utf-8")


_BUILTIN_CACHE: Dict[str, RuleSet] = {}


def builtin_rules(name: str) -> RuleSet:
    if name not in _BUILTIN_CACHE:
        _BUILTIN_CACHE[name] = load_rules(builtin_rules_text(name), f"builtin:{name}")
    return _BUILTIN_CACHE[name]


def resolve_rules(source: Optional[str] = None) -> RuleSet:
    """Load ``builtin:<name>`` or a rule-file path; defaults to ``$NSPROF_RULES`` then ml8."""
    source = source or os.environ.get(RULES_ENV) or "builtin:ml8"
    if source.startswith(BUILTIN_PREFIX):
        return builtin_rules(source[len(BUILTIN_PREFIX):])
    path = Path(source)
    try:
        text = path.read_bytes()
    except OSError as exc:
        raise TaxonomyError(f"cannot read rule file {source}: {exc.strerror}") from None
    return load_rules(text, str(path))


# ---------------------------------------------------------------------------
# classification


def classify(record: OpRecord, rules: RuleSet) -> CategoryId:
    rule = rules.match(record)
    return rules.other if rule is None else rule.category


@dataclass
class UnmatchedReport:
    """Distinct names that fell through to Other, heaviest self time first."""

    entries: List[Tuple[str, int]] = field(default_factory=list)

    @property
    def names(self) -> List[str]:
        return [n for n, _ in self.entries]

    def __len__(self) -> int:
        return len(self.entries)

    def summary(self, limit: int = 10) -> str:
        if not self.entries:
            return "all operations matched a rule"
        head = ", ".join(f"{n} ({ns} ns)" for n, ns in self.entries[:limit])
        more = len(self.entries) - limit
        return f"{len(self.entries)} unmatched name(s): {head}" + (f", ... {more} more" if more > 0 else "")


def classify_all(
    records: Iterable[OpRecord], rules: RuleSet, in_place: bool = False
) -> Tuple[List[OpRecord], UnmatchedReport]:
    """Categorise every record; unmatched ones become Other and are reported.

    By default the input records are left alone and categorised copies are
    returned. With ``in_place`` the records' own ``category`` is set, which
    avoids allocating a second record per event on large traces.
    """
    out: List[OpRecord] = []
    unmatched: Dict[str, int] = {}
    other = rules.other
    match = rules._match_index
    ordered = rules.rules
    for rec in records:
        i = match(rec.name, rec.device, rec.shapes is not None)
        if i is None:
            unmatched[rec.name] = unmatched.get(rec.name, 0) + rec.self_ns
            cat = other
        else:
            cat = ordered[i].category
        if in_place:
            rec.category = cat
            out.append(rec)
        else:
            out.append(rec.with_category(cat))
    report = UnmatchedReport(sorted(unmatched.items(), key=lambda kv: (-kv[1], kv[0])))
    return out, report
