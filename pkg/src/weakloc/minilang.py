"""Deterministic mini-language corpus with synthetic bug injection.

The generator emits small procedural functions of the shape::

    fn name ( a , b ) { let x = a + b ; if ( x < a ) { ... } return x ; }

Statements are `let` bindings and `if` blocks, expressions are flat
term/operator chains, and every token is mapped to a line number.  Three
single-token mutators produce labeled buggy variants: comparison-strictness
toggles (``bound``), arithmetic operator swaps (``biop``) and in-scope
variable substitutions (``varmisuse``).

Comparison operators are drawn from a context-conditioned distribution:
variable-vs-variable comparisons are almost always strict (``<``/``>``)
while comparisons against a literal are almost always inclusive
(``<=``/``>=``).  A toggled operator therefore lands in a low-probability
context, which is what makes the buggy/clean distinction learnable from
binary labels alone.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

from .exceptions import ConfigError, NoMutationSite
from .validation import check_range, check_span, derive_seed

# Fixed pool of multi-character identifiers; multi-character names keep the
# subtoken alignment path non-trivial.
IDENTIFIER_POOL = (
    "counter", "limit", "total", "index", "value", "size",
    "offset", "length", "result", "bound", "step", "delta",
    "base", "scale", "weight", "depth", "width", "height",
    "buffer", "cursor", "sample", "window", "margin", "level",
)

FUNCTION_NAMES = ("main", "solve", "update", "check", "apply", "scan", "merge", "probe")

COMPARISON_OPS = ("<", "<=", ">", ">=", "==", "!=")

# Strictness toggles: the only comparison operators eligible for `bound` bugs.
BOUND_TOGGLE = {"<": "<=", "<=": "<", ">": ">=", ">=": ">"}

ARITHMETIC_OPS = ("+", "-", "*", "/")

# Type-compatible swap pairs for `biop` bugs.
BIOP_SWAP = {"+": "-", "-": "+", "*": "/", "/": "*"}

BUG_KINDS = ("bound", "biop", "varmisuse")

# Comparison-operator propensities by context: variable-vs-variable
# comparisons are strict, comparisons against a literal are inclusive.  A
# strictness toggle therefore always lands in a context where the resulting
# operator never occurs in clean code, which is what a detector trained on
# binary labels alone can learn at this scale.
_CMP_WEIGHTS = {
    "strict": (("<", 0.48), (">", 0.44), ("==", 0.04), ("!=", 0.04)),
    "inclusive": (("<=", 0.48), (">=", 0.44), ("==", 0.04), ("!=", 0.04)),
}

# Arithmetic operators follow the operand-kind pair, so a type-compatible
# swap is likewise an out-of-context token (each operator stays common
# globally; none is buggy on its own).
_ARITH_BY_CONTEXT = {
    ("var", "var"): "+",
    ("var", "lit"): "-",
    ("lit", "var"): "*",
    ("lit", "lit"): "/",
}


class VarUse(NamedTuple):
    """A variable occurrence inside an expression."""

    pos: int
    in_scope: tuple[str, ...]


@dataclass
class MiniFunction:
    """A generated function plus the position metadata the mutators need."""

    tokens: list[str]
    var_defs: list[int]
    var_uses: list[VarUse]
    cmp_positions: list[int]
    arith_positions: list[int]
    line_map: list[int]

    def mutable_cmp_positions(self) -> list[int]:
        return [p for p in self.cmp_positions if self.tokens[p] in BOUND_TOGGLE]


@dataclass(frozen=True)
class SizeConfig:
    """Inclusive size ranges steering the generator.

    Defaults are tuned so that encoded sequences stay comfortably inside the
    default model position table.
    """

    n_params: tuple[int, int] = (2, 3)
    n_body_stmts: tuple[int, int] = (2, 5)
    n_block_stmts: tuple[int, int] = (1, 2)
    n_expr_terms: tuple[int, int] = (1, 3)
    max_depth: int = 2
    max_tokens: int = 128

    def __post_init__(self):
        check_range("n_params", self.n_params, minimum=2)
        check_range("n_body_stmts", self.n_body_stmts, minimum=2)
        check_range("n_block_stmts", self.n_block_stmts, minimum=1)
        check_range("n_expr_terms", self.n_expr_terms, minimum=1)
        if self.max_depth < 1:
            raise ConfigError(f"max_depth must be >= 1, got {self.max_depth}")
        # Header, both required statements and the return tail must always fit.
        if self.max_tokens < 48:
            raise ConfigError(f"max_tokens must be >= 48, got {self.max_tokens}")


@dataclass
class LabeledExample:
    """A token sequence with a binary bug label and evaluation-only span.

    ``bug_span`` is ground-truth metadata for evaluation and head profiling;
    the detection training path never reads it.
    """

    id: str
    tokens: list[str]
    label: int
    bug_kind: str
    bug_span: tuple[int, int] | None
    origin_id: str
    line_map: list[int]

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")
        if self.bug_kind not in ("none",) + BUG_KINDS:
            raise ValueError(f"unknown bug_kind {self.bug_kind!r}")
        buggy = self.label == 1
        if buggy != (self.bug_kind != "none") or buggy != (self.bug_span is not None):
            raise ValueError("label, bug_kind and bug_span must agree")
        if self.bug_span is not None:
            self.bug_span = check_span(self.bug_span, len(self.tokens))
        if len(self.line_map) != len(self.tokens):
            raise ValueError("line_map must cover every token")

    def to_record(self) -> dict:
        """JSONL record with the fixed field order of the dataset format."""
        return {
            "id": self.id,
            "tokens": list(self.tokens),
            "label": self.label,
            "bug_kind": self.bug_kind,
            "bug_span": list(self.bug_span) if self.bug_span is not None else None,
            "origin_id": self.origin_id,
            "lines": list(self.line_map),
        }

    @classmethod
    def from_record(cls, record: dict) -> "LabeledExample":
        span = record["bug_span"]
        return cls(
            id=record["id"],
            tokens=list(record["tokens"]),
            label=int(record["label"]),
            bug_kind=record["bug_kind"],
            bug_span=tuple(span) if span is not None else None,
            origin_id=record["origin_id"],
            line_map=list(record["lines"]),
        )


@dataclass
class DatasetSplits:
    """Balanced train/valid/test splits, disjoint by origin function."""

    train: list[LabeledExample]
    valid: list[LabeledExample]
    test: list[LabeledExample]
    seed: int
    counts: dict = field(default_factory=dict)

    def split(self, name: str) -> list[LabeledExample]:
        return {"train": self.train, "valid": self.valid, "test": self.test}[name]


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------


def _weighted_choice(rng: random.Random, weighted: Iterable[tuple[str, float]]) -> str:
    items = list(weighted)
    total = sum(w for _, w in items)
    x = rng.random() * total
    for value, w in items:
        x -= w
        if x < 0:
            return value
    return items[-1][0]


class _Builder:
    """Token emitter tracking positions, scope and line numbers."""

    def __init__(self, rng: random.Random, cfg: SizeConfig):
        self.rng = rng
        self.cfg = cfg
        self.tokens: list[str] = []
        self.line_map: list[int] = []
        self.line = 0
        self.scope: list[str] = []
        self.var_defs: list[int] = []
        self.var_uses: list[VarUse] = []
        self.cmp_positions: list[int] = []
        self.arith_positions: list[int] = []
        self.open_blocks = 0
        self.pending_reserve = 0

    def emit(self, token: str) -> int:
        self.tokens.append(token)
        self.line_map.append(self.line)
        return len(self.tokens) - 1

    def newline(self):
        self.line += 1

    def room_for(self, n: int) -> bool:
        # Reserve the widest `return expr ;` + function brace (8 tokens), one
        # closing brace per open block, and space for required statements
        # that have not been emitted yet.
        budget = self.cfg.max_tokens - 8 - self.open_blocks - self.pending_reserve
        return len(self.tokens) + n <= budget

    # -- expressions --------------------------------------------------------

    def emit_literal(self):
        r = self.rng.random()
        if r < 0.25:
            value = 0
        elif r < 0.70:
            value = self.rng.randint(1, 9)
        elif r < 0.90:
            value = self.rng.randint(10, 99)
        else:
            value = self.rng.randint(100, 999)
        self.emit(str(value))

    def pick_variable(self, exclude: str | None = None) -> str:
        # Recency-biased: most uses touch the latest definitions, so a
        # uniformly drawn misused variable tends to look stale.
        pool = [v for v in self.scope if v != exclude] or list(self.scope)
        r = self.rng.random()
        if r < 0.45:
            return pool[-1]
        if r < 0.70 and len(pool) >= 2:
            return pool[-2]
        return self.rng.choice(pool)

    def emit_var_use(self, exclude: str | None = None):
        name = self.pick_variable(exclude)
        pos = self.emit(name)
        self.var_uses.append(VarUse(pos, tuple(self.scope)))

    def emit_term(self, kind: str, exclude: str | None = None):
        if kind == "var":
            self.emit_var_use(exclude)
        else:
            self.emit_literal()

    def draw_term_kind(self, var_prob: float = 0.75) -> str:
        return "var" if self.scope and self.rng.random() < var_prob else "lit"

    def emit_expr(self, min_terms: int | None = None):
        lo, hi = self.cfg.n_expr_terms
        n_terms = self.rng.randint(max(lo, min_terms or lo), hi)
        kinds = [self.draw_term_kind() for _ in range(n_terms)]
        self.emit_term(kinds[0])
        for i in range(1, n_terms):
            op = _ARITH_BY_CONTEXT[(kinds[i - 1], kinds[i])]
            self.arith_positions.append(self.emit(op))
            self.emit_term(kinds[i])

    # -- statements ---------------------------------------------------------

    def emit_let(self, min_terms: int | None = None):
        self.emit("let")
        fresh = [n for n in IDENTIFIER_POOL if n not in self.scope]
        name = self.rng.choice(fresh) if fresh else self.rng.choice(IDENTIFIER_POOL)
        self.var_defs.append(self.emit(name))
        self.emit("=")
        self.emit_expr(min_terms=min_terms)
        self.emit(";")
        self.newline()
        if name not in self.scope:
            self.scope.append(name)

    def emit_comparison(self, force_mutable: bool = False):
        """Emit `lhs cmp rhs` inside an if-condition."""
        lhs = self.pick_variable()
        pos = self.emit(lhs)
        self.var_uses.append(VarUse(pos, tuple(self.scope)))
        rhs_is_var = self.rng.random() < 0.55
        context = "strict" if rhs_is_var else "inclusive"
        weighted = _CMP_WEIGHTS[context]
        if force_mutable:
            weighted = [(op, w) for op, w in weighted if op in BOUND_TOGGLE]
        op = _weighted_choice(self.rng, weighted)
        self.cmp_positions.append(self.emit(op))
        if rhs_is_var:
            self.emit_var_use(exclude=lhs)
        else:
            self.emit_literal()

    def emit_if(self, depth: int, force_mutable: bool = False):
        self.emit("if")
        self.emit("(")
        self.emit_comparison(force_mutable=force_mutable)
        self.emit(")")
        self.emit("{")
        self.open_blocks += 1
        self.newline()
        n_inner = self.rng.randint(*self.cfg.n_block_stmts)
        for _ in range(n_inner):
            if not self.room_for(9):
                break
            if depth < self.cfg.max_depth and self.rng.random() < 0.25 and self.room_for(8):
                self.emit_if(depth + 1)
            else:
                self.emit_let()
        self.open_blocks -= 1
        self.emit("}")
        self.newline()

    def build(self, name: str) -> MiniFunction:
        self.emit("fn")
        self.emit(name)
        self.emit("(")
        n_params = self.rng.randint(*self.cfg.n_params)
        params = self.rng.sample(IDENTIFIER_POOL, n_params)
        for i, param in enumerate(params):
            if i:
                self.emit(",")
            self.var_defs.append(self.emit(param))
            self.scope.append(param)
        self.emit(")")
        self.emit("{")
        self.newline()

        n_stmts = self.rng.randint(*self.cfg.n_body_stmts)
        # One `if` with a toggleable comparison and one `let` with an
        # arithmetic operator are required so every mutator has a site; the
        # pending reserve keeps the budget from starving them.
        required = [("let_arith", 9), ("if_mutable", 8)]
        self.rng.shuffle(required)
        self.pending_reserve = sum(cost for _, cost in required)
        for kind, cost in required:
            self.pending_reserve -= cost
            if kind == "let_arith":
                self.emit_let(min_terms=2)
            else:
                self.emit_if(depth=1, force_mutable=True)
        for _ in range(max(0, n_stmts - len(required))):
            if self.rng.random() < 0.40:
                if not self.room_for(8):
                    break
                self.emit_if(depth=1)
            else:
                if not self.room_for(9):
                    break
                self.emit_let()

        self.emit("return")
        self.emit_expr()
        self.emit(";")
        self.newline()
        self.emit("}")

        return MiniFunction(
            tokens=self.tokens,
            var_defs=self.var_defs,
            var_uses=self.var_uses,
            cmp_positions=self.cmp_positions,
            arith_positions=self.arith_positions,
            line_map=self.line_map,
        )


def generate_function(seed: int, size_cfg: SizeConfig | None = None) -> MiniFunction:
    """Generate one grammar-valid function, a pure function of (seed, config)."""
    cfg = size_cfg if size_cfg is not None else SizeConfig()
    rng = random.Random(f"minilang/fn/{seed}")
    builder = _Builder(rng, cfg)
    name = rng.choice(FUNCTION_NAMES)
    fn = builder.build(name)
    if len(fn.tokens) > cfg.max_tokens:
        raise AssertionError(f"generator exceeded max_tokens: {len(fn.tokens)}")
    return fn


# ---------------------------------------------------------------------------
# Bug injection
# ---------------------------------------------------------------------------


def inject_bound_error(
    f: MiniFunction, seed: int, example_id: str = "", origin_id: str = ""
) -> LabeledExample:
    """Toggle the strictness of one comparison operator (< <-> <=, > <-> >=)."""
    sites = f.mutable_cmp_positions()
    if not sites:
        raise NoMutationSite("no toggleable comparison operator")
    rng = random.Random(f"mutate/bound/{seed}")
    pos = rng.choice(sites)
    tokens = list(f.tokens)
    tokens[pos] = BOUND_TOGGLE[tokens[pos]]
    return LabeledExample(
        id=example_id or f"bound-{seed}",
        tokens=tokens,
        label=1,
        bug_kind="bound",
        bug_span=(pos, pos),
        origin_id=origin_id,
        line_map=list(f.line_map),
    )


def inject_biop_misuse(
    f: MiniFunction, seed: int, example_id: str = "", origin_id: str = ""
) -> LabeledExample:
    """Swap one arithmetic operator for its type-compatible counterpart."""
    if not f.arith_positions:
        raise NoMutationSite("no arithmetic operator")
    rng = random.Random(f"mutate/biop/{seed}")
    pos = rng.choice(f.arith_positions)
    tokens = list(f.tokens)
    tokens[pos] = BIOP_SWAP[tokens[pos]]
    return LabeledExample(
        id=example_id or f"biop-{seed}",
        tokens=tokens,
        label=1,
        bug_kind="biop",
        bug_span=(pos, pos),
        origin_id=origin_id,
        line_map=list(f.line_map),
    )


def inject_var_misuse(
    f: MiniFunction, seed: int, example_id: str = "", origin_id: str = ""
) -> LabeledExample:
    """Replace one variable use with a different in-scope variable."""
    sites = [u for u in f.var_uses if len(set(u.in_scope)) >= 2]
    if not sites:
        raise NoMutationSite("no variable use with >= 2 in-scope variables")
    rng = random.Random(f"mutate/varmisuse/{seed}")
    use = sites[rng.randrange(len(sites))]
    current = f.tokens[use.pos]
    replacements = [v for v in use.in_scope if v != current]
    tokens = list(f.tokens)
    tokens[use.pos] = rng.choice(replacements)
    return LabeledExample(
        id=example_id or f"varmisuse-{seed}",
        tokens=tokens,
        label=1,
        bug_kind="varmisuse",
        bug_span=(use.pos, use.pos),
        origin_id=origin_id,
        line_map=list(f.line_map),
    )


_INJECTORS = {
    "bound": inject_bound_error,
    "biop": inject_biop_misuse,
    "varmisuse": inject_var_misuse,
}


def clean_example(f: MiniFunction, example_id: str, origin_id: str) -> LabeledExample:
    return LabeledExample(
        id=example_id,
        tokens=list(f.tokens),
        label=0,
        bug_kind="none",
        bug_span=None,
        origin_id=origin_id,
        line_map=list(f.line_map),
    )


# ---------------------------------------------------------------------------
# Dataset building
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DatasetConfig:
    """Sizes, bug-mix weights and the master seed for a dataset build."""

    train_size: int = 8000
    valid_size: int = 1000
    test_size: int = 1000
    mix: dict = field(default_factory=lambda: {"bound": 1.0})
    seed: int = 0
    size_cfg: SizeConfig = field(default_factory=SizeConfig)

    def __post_init__(self):
        for name, n in (("train", self.train_size), ("valid", self.valid_size), ("test", self.test_size)):
            if n < 2:
                raise ConfigError(f"{name}_size must be >= 2, got {n}")
        if not self.mix:
            raise ConfigError("mix must name at least one bug kind")
        for kind, weight in self.mix.items():
            if kind not in BUG_KINDS:
                raise ConfigError(f"unknown bug kind in mix: {kind!r}")
            if weight <= 0:
                raise ConfigError(f"mix weight for {kind!r} must be > 0")


def _build_split(name: str, n: int, cfg: DatasetConfig) -> list[LabeledExample]:
    n_buggy = n // 2
    kinds = sorted(cfg.mix)
    weights = [cfg.mix[k] for k in kinds]
    pick_rng = random.Random(f"dataset/{cfg.seed}/{name}/kinds")
    examples = []
    for i in range(n):
        fn_seed = derive_seed(cfg.seed, name, i)
        origin_id = f"{name}-fn-{i:06d}"
        example_id = f"{name}-ex-{i:06d}"
        fn = generate_function(fn_seed, cfg.size_cfg)
        if i < n_buggy:
            kind = pick_rng.choices(kinds, weights=weights)[0]
            example = _INJECTORS[kind](fn, fn_seed, example_id=example_id, origin_id=origin_id)
        else:
            example = clean_example(fn, example_id, origin_id)
        examples.append(example)
    shuffle_rng = random.Random(f"dataset/{cfg.seed}/{name}/order")
    shuffle_rng.shuffle(examples)
    return examples


def build_dataset(config: DatasetConfig) -> DatasetSplits:
    """Build balanced, origin-disjoint splits; byte-identical for a fixed config."""
    splits = {
        name: _build_split(name, size, config)
        for name, size in (
            ("train", config.train_size),
            ("valid", config.valid_size),
            ("test", config.test_size),
        )
    }
    counts = {
        name: {
            "total": len(examples),
            "buggy": sum(e.label for e in examples),
            "clean": sum(1 - e.label for e in examples),
        }
        for name, examples in splits.items()
    }
    return DatasetSplits(seed=config.seed, counts=counts, **splits)


# ---------------------------------------------------------------------------
# JSONL serialization
# ---------------------------------------------------------------------------


def dumps_example(example: LabeledExample) -> str:
    return json.dumps(example.to_record(), ensure_ascii=False, separators=(",", ":"))


def write_jsonl(examples: Iterable[LabeledExample], path: str | Path):
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for example in examples:
            fh.write(dumps_example(example))
            fh.write("\n")


def read_jsonl(path: str | Path) -> list[LabeledExample]:
    examples = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                examples.append(LabeledExample.from_record(json.loads(line)))
    return examples


def read_training_jsonl(path: str | Path) -> tuple[list[list[str]], list[int]]:
    """Read only the (tokens, label) columns used for training.

    Deliberately span-blind: a file whose bug_span fields were nulled out
    loads identically to the fully annotated one.
    """
    tokens, labels = [], []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                record = json.loads(line)
                tokens.append(list(record["tokens"]))
                labels.append(int(record["label"]))
    return tokens, labels
