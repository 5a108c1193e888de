"""Certifier policies: conjunctions of (type, freshness, data-predicate) clauses.

Text format, one clause per line::

    # comment
    type:passport max_age:365d
    type:bill max_age:90d pred:non_empty
    type:other:utility pred:min_size:1024

``max_age`` takes an integer with an optional unit (``ms``, ``s``, ``m``,
``h``, ``d``; bare integers are milliseconds). ``pred`` is ``non_empty`` or
``min_size:<n>``. Unknown fields are rejected.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable

from . import crypto
from .encoding import canonical_encode, u64
from .errors import PolicyParseError, ValidationError
from .ledger import Query
from .model import Evidence, Timestamp, Tran, check_doc_type

UNITS = {"ms": 1, "s": 1000, "m": 60_000, "h": 3_600_000, "d": 86_400_000}
_DURATION = re.compile(r"(\d+)(ms|s|m|h|d)?")
_MIN_SIZE = re.compile(r"min_size:(\d+)")


def parse_duration(text: str) -> int:
    m = _DURATION.fullmatch(text)
    if not m:
        raise PolicyParseError(f"bad duration {text!r}")
    return int(m.group(1)) * UNITS[m.group(2) or "ms"]


def format_duration(ms: int) -> str:
    for unit in ("d", "h", "m", "s"):
        if ms % UNITS[unit] == 0:
            return f"{ms // UNITS[unit]}{unit}"
    return f"{ms}ms"


def check_predicate(pred: str) -> str:
    if pred == "non_empty" or _MIN_SIZE.fullmatch(pred):
        return pred
    raise ValidationError(f"unknown data predicate {pred!r}")


def predicate_holds(pred: str | None, data: bytes) -> bool:
    if pred is None:
        return True
    if pred == "non_empty":
        return len(data) > 0
    return len(data) >= int(_MIN_SIZE.fullmatch(pred).group(1))


@dataclass(frozen=True)
class Clause:
    required_type: str
    max_age: int | None = None
    predicate: str | None = None

    def __post_init__(self):
        check_doc_type(self.required_type)
        if self.max_age is not None and self.max_age <= 0:
            raise ValidationError("max_age must be positive")
        if self.predicate is not None:
            check_predicate(self.predicate)

    def to_bytes(self) -> bytes:
        return canonical_encode([
            self.required_type.encode(),
            b"" if self.max_age is None else u64(self.max_age),
            (self.predicate or "").encode(),
        ])

    def satisfied_by(self, e: Evidence, now_ms: int) -> bool:
        if e.doc_type != self.required_type:
            return False
        if self.max_age is not None and now_ms - e.etime.ms > self.max_age:
            return False
        return predicate_holds(self.predicate, e.data)

    def to_line(self) -> str:
        parts = [f"type:{self.required_type}"]
        if self.max_age is not None:
            parts.append(f"max_age:{format_duration(self.max_age)}")
        if self.predicate is not None:
            parts.append(f"pred:{self.predicate}")
        return " ".join(parts)


@dataclass(frozen=True)
class Policy:
    """Non-empty clause list held in canonical (sorted) order."""

    clauses: tuple[Clause, ...]

    def __post_init__(self):
        clauses = tuple(sorted(set(self.clauses), key=Clause.to_bytes))
        if not clauses:
            raise ValidationError("a policy needs at least one clause")
        object.__setattr__(self, "clauses", clauses)

    @classmethod
    def of(cls, *clauses: Clause) -> "Policy":
        return cls(tuple(clauses))

    @property
    def policy_id(self) -> bytes:
        return policy_digest(self)

    @property
    def types(self) -> frozenset[str]:
        return frozenset(c.required_type for c in self.clauses)

    def __call__(self, evidence: Iterable[Evidence], now: int | Timestamp) -> bool:
        return policy_evaluate(self, evidence, now)

    def to_text(self) -> str:
        return "".join(c.to_line() + "\n" for c in self.clauses)

    @classmethod
    def parse(cls, text: str) -> "Policy":
        return parse_policy(text)


def policy_digest(policy: Policy) -> bytes:
    return crypto.sha256(canonical_encode([b"kychain-policy"] + [c.to_bytes() for c in policy.clauses]))


def policy_evaluate(policy: Policy, evidence: Iterable[Evidence], now: int | Timestamp) -> bool:
    now_ms = now.ms if isinstance(now, Timestamp) else now
    evidence = list(evidence)
    if not evidence:
        return False
    return all(any(c.satisfied_by(e, now_ms) for e in evidence) for c in policy.clauses)


def parse_policy(text: str) -> Policy:
    clauses = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields: dict[str, str] = {}
        for tok in line.split():
            key, sep, value = tok.partition(":")
            if not sep or key not in ("type", "max_age", "pred"):
                raise PolicyParseError(f"line {lineno}: unknown field {tok!r}")
            if key in fields:
                raise PolicyParseError(f"line {lineno}: duplicate field {key!r}")
            fields[key] = value
        if "type" not in fields:
            raise PolicyParseError(f"line {lineno}: missing type")
        try:
            clauses.append(Clause(
                fields["type"],
                parse_duration(fields["max_age"]) if "max_age" in fields else None,
                fields.get("pred"),
            ))
        except ValidationError as exc:
            raise PolicyParseError(f"line {lineno}: {exc}") from exc
    if not clauses:
        raise PolicyParseError("policy file has no clauses")
    return Policy(tuple(clauses))


def policy_select(policy: Policy, pk: bytes, ledger) -> list[Tran]:
    """Latest-version records of ``pk`` whose type some clause names, oldest first."""
    return ledger.search(Query(by_pk=pk, policy=policy, latest_only=True))
