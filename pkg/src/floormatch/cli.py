"""Command-line entry point: ``floormatch <subcommand> [--config FILE] [--out DIR] ...``.

One JSON config schema serves every subcommand::

    {"seed": 0,                                   # required
     "problem": {"kind": "pair", ...},            # required: problem.kind
     "data": {...}, "train": {...}, "eval": {...}, "interpret": {...}}

Flags override the config and the config overrides defaults. Exit codes:
0 success, 1 invalid configuration or usage (one JSON line on stderr for
configuration errors), 2 runtime failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, List, Optional, Sequence, Tuple

from .errors import ConfigError
from .harness.config import DataConfig, TrainConfig
from .matchers import MatchProblem
from .synthgen.generator import ROOM_TYPES

SUBCOMMANDS = ("gen", "train", "eval", "sweep-fusion", "sweep-finetune", "cross-eval",
               "rfviz", "localize", "place", "retrieve")
REQUIRED = ("seed", "problem.kind")

log = logging.getLogger("floormatch")


@dataclass
class EvalSection:
    checkpoint: Optional[str] = None

    def errors(self) -> List[Tuple[str, str]]:
        return []


@dataclass
class InterpretSection:
    checkpoint: Optional[str] = None
    apartment: int = 0  # position in the test split
    room_type: str = "bathroom"
    window: int = 11
    stride: int = 1
    samples_per_window: int = 5
    fraction: float = 0.8
    top_n: int = 10
    corpus_size: int = 100

    def errors(self) -> List[Tuple[str, str]]:
        errs = []
        if self.apartment < 0:
            errs.append(("interpret.apartment", f"must be >= 0, got {self.apartment}"))
        if self.room_type not in ROOM_TYPES:
            errs.append(("interpret.room_type", f"must be one of {list(ROOM_TYPES)}, got {self.room_type!r}"))
        if self.window < 1 or self.window % 2 == 0:
            errs.append(("interpret.window", f"must be a positive odd integer, got {self.window}"))
        if self.stride < 1:
            errs.append(("interpret.stride", f"must be >= 1, got {self.stride}"))
        if self.samples_per_window < 1:
            errs.append(("interpret.samples_per_window", f"must be >= 1, got {self.samples_per_window}"))
        if not 0 < self.fraction <= 1:
            errs.append(("interpret.fraction", f"must be in (0, 1], got {self.fraction}"))
        if self.top_n < 1:
            errs.append(("interpret.top_n", f"must be >= 1, got {self.top_n}"))
        if self.corpus_size < 1:
            errs.append(("interpret.corpus_size", f"must be >= 1, got {self.corpus_size}"))
        return errs


@dataclass
class RunConfig:
    """A validated, default-filled configuration."""

    seed: int
    train: TrainConfig
    eval: EvalSection = field(default_factory=EvalSection)
    interpret: InterpretSection = field(default_factory=InterpretSection)

    def to_dict(self) -> dict:
        t = self.train.to_dict()
        return {
            "seed": self.seed,
            "problem": t.pop("problem"),
            "data": t.pop("data"),
            "train": {k: v for k, v in t.items() if k != "seed"},
            "eval": dataclasses.asdict(self.eval),
            "interpret": dataclasses.asdict(self.interpret),
        }


# ---------------------------------------------------------------------------
# validation


def _check_types(prefix: str, cls, d: Any, errs: List[Tuple[str, str]], skip: Sequence[str] = ()) -> dict:
    """Unknown keys and scalar types against a dataclass's defaults; returns the cleaned dict."""
    if not isinstance(d, dict):
        errs.append((prefix, f"must be an object, got {type(d).__name__}"))
        return {}
    fields = {f.name: f for f in dataclasses.fields(cls) if f.name not in skip}
    out = {}
    for key, value in d.items():
        name = f"{prefix}.{key}"
        if key not in fields:
            errs.append((name, "unknown field"))
            continue
        f = fields[key]
        default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
        if default is dataclasses.MISSING or default is None:
            out[key] = value  # optional fields: checked by the section's own validation
        elif dataclasses.is_dataclass(default):
            out[key] = _check_types(name, type(default), value, errs)
        elif isinstance(default, bool):
            if isinstance(value, bool):
                out[key] = value
            else:
                errs.append((name, f"must be a boolean, got {value!r}"))
        elif isinstance(default, int):
            if isinstance(value, int) and not isinstance(value, bool):
                out[key] = value
            else:
                errs.append((name, f"must be an integer, got {value!r}"))
        elif isinstance(default, float):
            if isinstance(value, (int, float)) and not isinstance(value, bool):
                out[key] = float(value)
            else:
                errs.append((name, f"must be a number, got {value!r}"))
        elif isinstance(default, str):
            if isinstance(value, str):
                out[key] = value
            else:
                errs.append((name, f"must be a string, got {value!r}"))
        elif isinstance(default, (tuple, list)):
            if isinstance(value, (list, tuple)) and len(value) == len(default):
                out[key] = list(value)
            else:
                errs.append((name, f"must be a list of {len(default)} values, got {value!r}"))
        elif isinstance(default, dict):
            if isinstance(value, dict):
                out[key] = value
            else:
                errs.append((name, f"must be an object, got {value!r}"))
        else:
            out[key] = value
    return out


def _lookup(d: dict, dotted: str) -> bool:
    cur: Any = d
    for part in dotted.split("."):
        if not isinstance(cur, dict) or part not in cur:
            return False
        cur = cur[part]
    return True


def normalize_config(raw: Any) -> RunConfig:
    """Fill defaults and validate; raises :class:`ConfigError` naming every bad field."""
    if not isinstance(raw, dict):
        raise ConfigError([("<root>", f"config must be a JSON object, got {type(raw).__name__}")])
    errs: List[Tuple[str, str]] = []
    for key in raw:
        if key not in ("seed", "problem", "data", "train", "eval", "interpret"):
            errs.append((key, "unknown field"))
    missing = [(req, "required field is missing") for req in REQUIRED if not _lookup(raw, req)]
    seed = raw.get("seed", 0)
    if "seed" in raw and (not isinstance(seed, int) or isinstance(seed, bool) or seed < 0):
        errs.append(("seed", f"must be a non-negative integer, got {seed!r}"))
    problem = _check_types("problem", MatchProblem, raw.get("problem", {}), errs)
    data = _check_types("data", DataConfig, raw.get("data", {}), errs)
    train = _check_types("train", TrainConfig, raw.get("train", {}), errs, skip=("seed", "problem", "data"))
    ev = _check_types("eval", EvalSection, raw.get("eval", {}), errs)
    it = _check_types("interpret", InterpretSection, raw.get("interpret", {}), errs)
    if errs:
        raise ConfigError(missing + errs)
    errs = missing  # the defaults stand in for missing fields so every other error is reported too
    try:
        tc = TrainConfig.from_dict({**train, "seed": seed, "problem": problem, "data": data})
        rc = RunConfig(seed, tc, EvalSection(**ev), InterpretSection(**it))
        errs.extend(tc.errors())
        errs.extend(rc.interpret.errors())
    except (TypeError, ValueError, KeyError) as exc:
        errs.append(("<root>", f"malformed config: {exc}"))
    if errs:
        raise ConfigError(errs)
    return rc


def read_config(path: Optional[str]) -> dict:
    """Parse the JSON file at ``path`` (an empty file is an empty config)."""
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError([("--config", f"cannot read {path}: {exc.strerror or exc}")]) from exc
    if not text.strip():
        return {}
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([("--config", f"invalid JSON: {exc}")]) from exc


def validate_config(path: Optional[str], overrides: Optional[dict] = None) -> RunConfig:
    """Read, apply flag overrides, fill defaults and validate; no side effects."""
    raw = read_config(path)
    if isinstance(raw, dict):
        raw = {**raw, **(overrides or {})}
    return normalize_config(raw)


# ---------------------------------------------------------------------------
# subcommands


def _write(path: Path, text: str) -> Path:
    path.write_text(text)
    log.info("wrote %s", path)
    return path


def _dataset(rc: RunConfig, jobs: int = 1):
    from .harness.train import get_dataset
    from .synthgen import build_dataset

    data = rc.train.data
    if data.manifest is None and jobs > 1:
        seed = data.seed if data.seed is not None else rc.seed
        return build_dataset(seed, data.generator, data.n_train, data.n_test, jobs=jobs)
    return get_dataset(data, rc.seed)


def _report_csv(report, seed: int) -> str:
    import csv
    import io

    buf = io.StringIO()
    buf.write(f"# seed={seed}\n")
    row = report.to_row()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(row))
    w.writerow([v if isinstance(v, int) else format(float(v), ".6f") for v in row.values()])
    return buf.getvalue()


def _curve_csv(curve: Sequence[float], seed: int) -> str:
    lines = [f"# seed={seed}", "epoch,mean_loss"]
    lines += [f"{e},{loss:.6f}" for e, loss in enumerate(curve, start=1)]
    return "\n".join(lines) + "\n"


def cmd_gen(rc: RunConfig, out: Path, jobs: int) -> None:
    from .synthgen import save_dataset

    ds = _dataset(rc, jobs)
    save_dataset(ds, out / "dataset")
    log.info("generated %d apartments under %s", len(ds.apartments), out / "dataset")


def cmd_train(rc: RunConfig, out: Path, jobs: int) -> None:
    from .harness.train import train

    ds = _dataset(rc, jobs)
    result = train(rc.train, ds, checkpoint=out / "model.npz", progress=True)
    _write(out / "loss_curve.csv", _curve_csv(result.loss_curve, rc.seed))
    _write(out / "config.json", json.dumps(rc.to_dict(), indent=2, sort_keys=True) + "\n")


def _load_checkpoint(path: Optional[str], section: str):
    from .harness.train import load_model

    if not path:
        raise ConfigError([(f"{section}.checkpoint", "required by this subcommand")])
    model, _ = load_model(path)
    return model


def cmd_eval(rc: RunConfig, out: Path, jobs: int) -> None:
    from .harness.evaluate import evaluate

    model = _load_checkpoint(rc.eval.checkpoint, "eval")
    report = evaluate(model, _dataset(rc, jobs).test, rc.train.problem, seed=rc.seed)
    _write(out / "metrics.csv", _report_csv(report, rc.seed))


def _sweep(kind: str):
    def run(rc: RunConfig, out: Path, jobs: int) -> None:
        from .harness import experiments

        driver = {"fusion": experiments.fusion_sweep, "finetune": experiments.finetune_sweep,
                  "cross": experiments.cross_eval}[kind]
        ds = _dataset(rc) if jobs <= 1 else None
        driver(rc.train, ds, jobs=jobs, out_dir=out)
    return run


def _interpret_inputs(rc: RunConfig):
    model = _load_checkpoint(rc.interpret.checkpoint, "interpret")
    test = _dataset(rc).test
    if rc.interpret.apartment >= len(test):
        raise ConfigError([("interpret.apartment", f"test split has {len(test)} apartments")])
    return model, test, test.apartment(rc.interpret.apartment)


def _rf_config(rc: RunConfig):
    from .interpret import RfConfig

    it = rc.interpret
    return RfConfig(it.window, it.stride, it.samples_per_window)


def cmd_rfviz(rc: RunConfig, out: Path, jobs: int) -> None:
    from .interpret import rf_map

    model, _, apt = _interpret_inputs(rc)
    room = rc.interpret.room_type
    heat = rf_map(model, apt.floorplan, apt.photos[room], room, _rf_config(rc), seed=rc.seed)
    _write(out / "heatmap.csv", heat.to_csv())
    heat.save_png(out / "heatmap.png", apt.floorplan)


def cmd_localize(rc: RunConfig, out: Path, jobs: int) -> None:
    from .interpret import simplify_localize

    model, _, apt = _interpret_inputs(rc)
    res = simplify_localize(model, apt, rc.interpret.room_type, fraction=rc.interpret.fraction)
    res.seed = rc.seed
    _write(out / "localize.json", res.to_json())


def cmd_place(rc: RunConfig, out: Path, jobs: int) -> None:
    from .interpret import place_photos, placement_json

    model, _, apt = _interpret_inputs(rc)
    rooms = sorted(model.photo.encoders)  # every room type the photo arm can encode
    placements = place_photos(model, apt.floorplan, {r: apt.photos[r] for r in rooms}, _rf_config(rc), rc.seed)
    _write(out / "placement.json", placement_json(placements, rc.seed))


def cmd_retrieve(rc: RunConfig, out: Path, jobs: int) -> None:
    from .interpret import ranking_csv, retrieve

    model, test, apt = _interpret_inputs(rc)
    room = rc.interpret.room_type
    n = min(rc.interpret.corpus_size, len(test))
    corpus = [(f"apt_{int(test.ids[i]):06d}", test.apartment(i).photos[room]) for i in range(n)]
    ranking = retrieve(model, apt.floorplan, corpus, room, rc.interpret.top_n)
    _write(out / "ranking.csv", ranking_csv(ranking, rc.seed))


COMMANDS = {
    "gen": cmd_gen, "train": cmd_train, "eval": cmd_eval,
    "sweep-fusion": _sweep("fusion"), "sweep-finetune": _sweep("finetune"), "cross-eval": _sweep("cross"),
    "rfviz": cmd_rfviz, "localize": cmd_localize, "place": cmd_place, "retrieve": cmd_retrieve,
}


# ---------------------------------------------------------------------------
# entry point


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="floormatch", description="Floorplan/photograph matching experiments.")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}")
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", default="floormatch-out", help="output directory (created if absent)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for generation and sweeps")
        p.add_argument("--verbose", action="store_true", help="log progress to stderr")
    return parser


def _fail(kind: str, payload: dict, code: int) -> int:
    print(json.dumps({"error": kind, **payload}, sort_keys=True), file=sys.stderr)
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    if not argv or argv[0] not in SUBCOMMANDS:
        parser.print_usage(sys.stderr)
        if argv and not argv[0].startswith("-"):
            print(f"floormatch: error: unknown subcommand {argv[0]!r}", file=sys.stderr)
        return 1
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    overrides = {"seed": args.seed} if args.seed is not None else {}
    try:
        if args.jobs < 1:
            raise ConfigError([("--jobs", f"must be >= 1, got {args.jobs}")])
        rc = validate_config(args.config, overrides)
    except ConfigError as exc:
        return _fail("config", {"errors": [{"field": f, "reason": r} for f, r in exc.errors]}, 1)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](rc, out, args.jobs)
    except ConfigError as exc:
        return _fail("config", {"errors": [{"field": f, "reason": r} for f, r in exc.errors]}, 1)
    except Exception as exc:  # noqa: BLE001 — every runtime failure maps to exit code 2
        log.debug("runtime failure", exc_info=True)
        return _fail("runtime", {"type": type(exc).__name__, "message": str(exc)}, 2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
