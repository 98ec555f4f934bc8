"""Command-line entry point.

Every command reads one JSON config (``-c``) whose sections mirror the
pipeline stages; ``--set section.key=value`` overrides single entries and
``--seed``/``--workdir`` override the top-level keys. Artifacts live in the
work directory and each one carries the config hash and seed.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import io
import json
import logging
import os
import random
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path
from typing import Any

from . import coffeeshop
from .cpd import CpdBundle, FeatureEncoder, FitConfig
from .doc import dumps
from .metrics import (
    planning_metrics,
    render_budget_table,
    render_survival_table,
    render_transition_table,
    transition_metrics,
)
from .oracle import LiveOracle, OracleError, RecordingOracle, ScriptedOracle, replay
from .planner import HybridWorldModel, PlanConfig, SimulatorModel, run_episode
from .program import ProgramError, TransitionProgram, error_count
from .refine import RefineConfig, refine, split_train_val
from .schema import (
    IngestionError,
    ObservationSchema,
    SchemaError,
    dump_trajectories,
    flatten,
    load_trajectories,
)
from .structure import (
    DagStructure,
    FitCache,
    FlatPrior,
    OraclePrior,
    SearchConfig,
    SearchError,
    StructureError,
    search,
    write_trace,
)

log = logging.getLogger("hybridwm")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_ORACLE, EXIT_INTERNAL = 0, 2, 3, 4, 5

DEFAULTS: dict[str, Any] = {
    "workdir": None,
    "seed": None,
    "data": {"env": "coffeeshop", "policy": "epsilon_random", "episodes": 100, "horizon": 50,
             "epsilon": 0.3, "train_fraction": 0.9},
    "oracle": {"kind": "scripted", "fixture": None, "strict": False, "record": None},
    "refine": {"k_candidates": 3, "validation_set_size": 300, "train_size": 300, "train_mix": 1.0,
               "vs_threshold": 0.0},
    "structure": {"steps_per_chain": 50, "chains": 5, "lambda1": 10.0, "lambda2": 100.0, "alpha": 0.99,
                  "probe_moves": 20, "probe_accept": 0.5, "prior": "oracle", "prior_mode": "per_node"},
    "fit": {"hidden": 32, "epochs": 200, "batch_size": 64, "lr": 1e-3, "ablations": True},
    "plan": {"agents": ["full", "independent", "random_dag", "wait"], "episodes": 36, "days": 50,
             "horizon": 3, "iterations": 90, "rollouts_per_node": 4, "actions_per_node": 100,
             "exploration_c": 1.4142135623730951, "workers": 1},
    "eval": {"samples": 10},
}
REQUIRED = ("workdir", "seed")
# keys left out of the config hash: they name places, not computations
UNHASHED = ("workdir", "oracle.record", "plan.workers")

AGENTS = ("full", "independent", "random_dag", "oracle", "wait", "heuristic")


class ConfigError(Exception):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


class DataError(Exception):
    pass


# config


def _merge(base: dict, over: dict, path: str, problems: list[str]) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        where = f"{path}{k}"
        if k not in base:
            problems.append(f"unknown key {where!r}")
        elif isinstance(base[k], dict):
            if not isinstance(v, dict):
                problems.append(f"{where!r} must be an object")
            else:
                out[k] = _merge(base[k], v, where + ".", problems)
        else:
            out[k] = v
    return out


def _parse_override(text: str, problems: list[str]) -> tuple[list[str], Any] | None:
    if "=" not in text:
        problems.append(f"override {text!r} is not key=value")
        return None
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.split("."), value


def resolve_config(path: str | None, overrides: list[str] = (), seed: int | None = None,
                   workdir: str | None = None) -> dict:
    """Defaults, then the file, then overrides. Every problem is reported at once."""
    problems: list[str] = []
    raw: dict = {}
    if path is not None:
        try:
            raw = json.loads(_read_config_text(path))
        except FileNotFoundError:
            raise ConfigError([f"config file {path!r} not found"]) from None
        except json.JSONDecodeError as e:
            raise ConfigError([f"config file {path!r} is not JSON: {e}"]) from None
        if not isinstance(raw, dict):
            raise ConfigError(["config root must be an object"])
    for text in overrides:
        parsed = _parse_override(text, problems)
        if parsed is None:
            continue
        keys, value = parsed
        node = raw
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                problems.append(f"override {text!r} descends into a non-object")
                break
        else:
            node[keys[-1]] = value
    if seed is not None:
        raw["seed"] = seed
    if workdir is not None:
        raw["workdir"] = workdir
    cfg = _merge(DEFAULTS, raw, "", problems)
    for k in REQUIRED:
        if cfg.get(k) is None:
            problems.append(f"missing required key {k!r}")
    if cfg.get("seed") is not None and not isinstance(cfg["seed"], int):
        problems.append("'seed' must be an integer")
    bad = [a for a in cfg["plan"]["agents"] if a not in AGENTS]
    if bad:
        problems.append(f"unknown plan agents {bad}; choose from {list(AGENTS)}")
    if cfg["oracle"]["kind"] not in ("scripted", "live", "replay"):
        problems.append(f"oracle.kind must be scripted, live or replay, not {cfg['oracle']['kind']!r}")
    if cfg["data"]["env"] != "coffeeshop":
        problems.append(f"data.env {cfg['data']['env']!r} has no generator (only 'coffeeshop')")
    if cfg["structure"]["prior"] not in ("oracle", "flat"):
        problems.append("structure.prior must be 'oracle' or 'flat'")
    if problems:
        raise ConfigError(problems)
    return cfg


def _read_config_text(path: str) -> str:
    if os.path.exists(path):
        return Path(path).read_text(encoding="utf-8")
    bundled = resources.files("hybridwm") / "configs" / f"{path}.json"
    if bundled.is_file():
        return bundled.read_text(encoding="utf-8")
    raise FileNotFoundError(path)


def config_hash(cfg: dict) -> str:
    trimmed = copy.deepcopy(cfg)
    for dotted in UNHASHED:
        *parents, leaf = dotted.split(".")
        node = trimmed
        for p in parents:
            node = node.get(p, {})
        node.pop(leaf, None)
    blob = json.dumps(trimmed, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# io


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_text(obj: Any) -> str:
    return dumps(obj, indent=2, sort_keys=True) + "\n"


class Run:
    """Resolved config plus helpers shared by the commands."""

    def __init__(self, cfg: dict):
        self.cfg = cfg
        self.seed: int = cfg["seed"]
        self.dir = Path(cfg["workdir"])
        self.meta = {"config_hash": config_hash(cfg), "seed": self.seed}
        self._oracle = None
        self._recorder: RecordingOracle | None = None

    def path(self, name: str) -> Path:
        return self.dir / name

    def need(self, name: str) -> Path:
        p = self.path(name)
        if not p.exists():
            raise DataError(f"{p} is missing; run the command that produces it first")
        return p

    def schema(self) -> ObservationSchema:
        try:
            return ObservationSchema.load(self.need("schema.json"))
        except (SchemaError, json.JSONDecodeError) as e:
            raise DataError(f"bad schema file: {e}") from None

    def records(self, name: str) -> list:
        return flatten(load_trajectories(self.need(name), self.schema()))

    def program(self, name: str) -> TransitionProgram:
        try:
            return TransitionProgram.load(self.need(name))
        except (ProgramError, json.JSONDecodeError) as e:
            raise DataError(f"bad program bundle {name}: {e}") from None

    def oracle(self):
        if self._oracle is not None:
            return self._oracle
        oc = self.cfg["oracle"]
        if oc["kind"] == "live":
            inner = LiveOracle()
        else:
            fixture = Path(oc["fixture"]) if oc["fixture"] else self.path("oracle_fixture.json")
            if not fixture.exists():
                raise DataError(f"oracle fixture {fixture} is missing")
            inner = replay(fixture) if oc["kind"] == "replay" else ScriptedOracle.load(fixture, oc["strict"])
        if oc["record"]:
            self._recorder = inner = RecordingOracle(inner)
        self._oracle = inner
        return inner

    def finish(self) -> None:
        if self._recorder is not None:
            # several commands may append to one recording
            self._recorder.save(self.cfg["oracle"]["record"], merge=True)

    def write_json(self, name: str, obj: dict) -> Path:
        p = self.path(name)
        write_atomic(p, _json_text({**obj, "meta": {**obj.get("meta", {}), **self.meta}}))
        return p

    def fit_config(self) -> FitConfig:
        f = self.cfg["fit"]
        return FitConfig(hidden=f["hidden"], epochs=f["epochs"], batch_size=f["batch_size"], lr=f["lr"],
                         seed=self.seed)


def _say(msg: str) -> None:
    print(msg, flush=True)


# commands


def cmd_gen_data(run: Run) -> None:
    d = run.cfg["data"]
    trajectories = coffeeshop.generate_dataset(d["policy"], d["episodes"], d["horizon"], run.seed,
                                               epsilon=d["epsilon"])
    train, test = coffeeshop.split_episodes(trajectories, d["train_fraction"])
    schema = coffeeshop.coffee_schema()
    run.write_json("schema.json", schema.to_json())
    for name, part in (("train.jsonl", train), ("test.jsonl", test)):
        buf = io.StringIO()
        dump_trajectories(part, buf, run.meta)
        write_atomic(run.path(name), buf.getvalue())
    write_atomic(run.path("manual.txt"), schema.environment_doc)
    run.write_json("oracle_fixture.json", coffeeshop.oracle_fixture())
    write_atomic(run.path("reference_program.json"), coffeeshop.reference_program().dumps(run.meta) + "\n")
    _say(f"wrote {len(train)} train and {len(test)} test trajectories to {run.dir}")


def cmd_init_model(run: Run) -> None:
    program = run.oracle().init_program(run.schema())
    write_atomic(run.path("program_init.json"), program.dumps(run.meta) + "\n")
    _say(f"initial program with {len(program.functions)} functions -> {run.path('program_init.json')}")


def cmd_refine(run: Run) -> None:
    schema = run.schema()
    program = run.program("program_init.json")
    records = run.records("train.jsonl")
    if not records:
        raise DataError("training split is empty")
    r = run.cfg["refine"]
    rcfg = RefineConfig(k_candidates=r["k_candidates"], validation_set_size=r["validation_set_size"],
                        train_size=r["train_size"], train_mix=r["train_mix"], vs_threshold=r["vs_threshold"],
                        seed=run.seed)
    train, val = split_train_val(records, rcfg)
    before = error_count(program, records)
    refined, rlog = refine(program, train, val, run.oracle(), rcfg, schema.environment_doc)
    after = error_count(refined, records)
    write_atomic(run.path("program.json"), refined.dumps(run.meta) + "\n")
    write_atomic(run.path("refine_log.jsonl"), json.dumps({"_meta": run.meta}, sort_keys=True) + "\n" + rlog.dumps())
    _say(f"applied {len(rlog.accepted)} edits; training errors {before} -> {after}")


def _encoded(run: Run, schema: ObservationSchema):
    records = run.records("train.jsonl")
    if not records:
        raise DataError("training split is empty")
    enc = FeatureEncoder.fit(schema, records)
    return enc, enc.dataset(records)


def cmd_learn_structure(run: Run) -> None:
    schema = run.schema()
    _, data = _encoded(run, schema)
    s = run.cfg["structure"]
    scfg = SearchConfig(lambda1=s["lambda1"], lambda2=s["lambda2"], alpha=s["alpha"],
                        steps_per_chain=s["steps_per_chain"], chains=s["chains"], seed=run.seed,
                        probe_moves=s["probe_moves"], probe_accept=s["probe_accept"], fit=run.fit_config())
    fits = FitCache(schema, data, scfg.fit)
    oracle = run.oracle()
    prior = OraclePrior(oracle, schema, s["prior_mode"]) if s["prior"] == "oracle" else FlatPrior()
    result = search(schema, fits, oracle, prior, scfg)
    run.write_json("dag.json", {**result.dag.to_json(), "score": result.score.to_json()})
    buf = io.StringIO()
    buf.write(json.dumps({"_meta": run.meta}, sort_keys=True) + "\n")
    write_trace(result.trace, buf)
    write_atomic(run.path("trace.jsonl"), buf.getvalue())
    edges = ", ".join(f"{p}->{c}" for p, c in result.dag.sorted_edges()) or "(none)"
    _say(f"J = {result.score.total:.4f} with {fits.fits} fits; edges: {edges}")


def random_dag(template: DagStructure, n_edges: int, rng: random.Random) -> DagStructure:
    """A DAG with ``n_edges`` edges drawn uniformly from those allowed by a random node order."""
    order = list(template.modeled)
    rng.shuffle(order)
    pairs = [(c, n) for n in order for c in template.conditioning]
    pairs += [(order[i], order[j]) for j in range(len(order)) for i in range(j)]
    pairs.sort()
    picked = rng.sample(pairs, min(n_edges, len(pairs)))
    return template.with_edges(picked)


def _bundle(fits: FitCache, enc, dag: DagStructure, meta: dict) -> CpdBundle:
    parents = dag.parent_map()
    models = {n: fits.model(n, parents.get(n, ())) for n in enc.node_names}
    return CpdBundle(enc, models, {**meta, "edges": dag.sorted_edges()})


def cmd_fit(run: Run) -> None:
    schema = run.schema()
    try:
        dag = DagStructure.load(run.need("dag.json"))
    except (StructureError, json.JSONDecodeError) as e:
        raise DataError(f"bad DAG file: {e}") from None
    enc, data = _encoded(run, schema)
    fits = FitCache(schema, data, run.fit_config())
    outputs = {"cpd.json": dag}
    if run.cfg["fit"]["ablations"]:
        outputs["cpd_independent.json"] = dag.with_edges(())
        rnd = random_dag(dag, len(dag.edges), random.Random(run.seed))
        run.write_json("random_dag.json", rnd.to_json())
        outputs["cpd_random_dag.json"] = rnd
    for name, g in outputs.items():
        write_atomic(run.path(name), _bundle(fits, enc, g, run.meta).dumps() + "\n")
        _say(f"{name}: {len(g.edges)} edges")
    _say(f"{fits.fits} node models trained")


_MODEL_FILES = {"full": "cpd.json", "independent": "cpd_independent.json", "random_dag": "cpd_random_dag.json"}


def _episode_job(args) -> dict:
    agent, workdir, cfg, index = args
    run = Run(cfg)
    p = cfg["plan"]
    seed = run.seed * 100_003 + index
    pcfg = PlanConfig(horizon=p["horizon"], iterations=p["iterations"], rollouts_per_node=p["rollouts_per_node"],
                      actions_per_node=p["actions_per_node"], exploration_c=p["exploration_c"], seed=seed)
    env = coffeeshop.CoffeeShopEnv(seed)
    model, policy = None, None
    if agent == "wait":
        policy = coffeeshop.wait_policy
    elif agent == "heuristic":
        policy = coffeeshop.heuristic_action
    elif agent == "oracle":
        model = SimulatorModel(coffeeshop.step, coffeeshop.is_valid)
    else:
        model = HybridWorldModel(run.schema(), run.program("program.json"),
                                 CpdBundle.load(run.need(_MODEL_FILES[agent])))
    res = run_episode(env, model, pcfg, days=p["days"], policy=policy)
    return {"agent": agent, "episode": index, "seed": seed, **res.to_json()}


def cmd_plan(run: Run) -> None:
    p = run.cfg["plan"]
    for agent in p["agents"]:
        if agent in _MODEL_FILES:
            run.need(_MODEL_FILES[agent])
            run.need("program.json")
    summary = {}
    for agent in p["agents"]:
        jobs = [(agent, str(run.dir), run.cfg, i) for i in range(p["episodes"])]
        if p["workers"] > 1:
            with ProcessPoolExecutor(p["workers"]) as pool:
                rows = list(pool.map(_episode_job, jobs))
        else:
            rows = [_episode_job(j) for j in jobs]
        text = json.dumps({"_meta": run.meta}, sort_keys=True) + "\n"
        text += "".join(dumps(r, sort_keys=True) + "\n" for r in rows)
        write_atomic(run.path(f"episodes/{agent}.jsonl"), text)
        rep = planning_metrics([r["final_money"] for r in rows])
        summary[agent] = rep
        _say(f"{agent}: mean final budget {rep['mean']:.1f} over {rep['n']} episodes")
    run.write_json("plan_summary.json", {"agents": summary})


def load_episodes(path: Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                if "_meta" not in obj:
                    rows.append(obj)
    return rows


def cmd_eval(run: Run) -> None:
    schema = run.schema()
    report: dict[str, Any] = {}
    timing: dict[str, float] = {}
    if run.path("program.json").exists():
        test = run.records("test.jsonl")
        cpd = CpdBundle.load(run.path("cpd.json")) if run.path("cpd.json").exists() else None
        tr = transition_metrics(run.program("program.json"), cpd, test, schema, seed=run.seed,
                                samples=run.cfg["eval"]["samples"])
        timing["ms_per_record"] = tr.pop("ms_per_record")
        report["transition"] = tr
    planning = {}
    for agent in AGENTS:
        p = run.path(f"episodes/{agent}.jsonl")
        if p.exists():
            rows = load_episodes(p)
            if rows:
                traj = [[d["money"] for d in r["log"]] for r in rows]
                planning[agent] = planning_metrics([r["final_money"] for r in rows], traj)
    report["planning"] = planning
    if not report.get("transition") and not planning:
        raise DataError(f"nothing to evaluate in {run.dir}")
    run.write_json("report.json", report)
    write_atomic(run.path("timing.json"), _json_text(timing))
    if planning:
        _say(render_budget_table(planning, run.cfg["plan"]["days"]))
        _say("")
        _say(render_survival_table(planning))
    if "transition" in report:
        _say("")
        _say(render_transition_table({**report["transition"], "ms_per_record": timing["ms_per_record"]}))


def cmd_replay_oracle(run: Run, fixture: str | None, check: bool) -> None:
    """Show a recorded fixture; with ``--check`` replay init-model and refine against it."""
    path = Path(fixture) if fixture else Path(run.cfg["oracle"]["record"] or run.path("oracle_recording.json"))
    if not path.exists():
        raise DataError(f"fixture {path} is missing")
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DataError(f"fixture {path} is not JSON: {e}") from None
    kinds: dict[str, int] = {}
    for req in obj.get("requests", {}).values():
        kinds[req["kind"]] = kinds.get(req["kind"], 0) + 1
    _say(f"{path}: {len(obj.get('responses', {}))} recorded responses")
    for k in sorted(kinds):
        _say(f"  {k:<20}{kinds[k]:>6}")
    if not check:
        return
    cfg = copy.deepcopy(run.cfg)
    cfg["oracle"] = {"kind": "replay", "fixture": str(path), "strict": True, "record": None}
    with tempfile.TemporaryDirectory() as tmp:
        for name in ("schema.json", "train.jsonl"):
            Path(tmp, name).write_bytes(run.need(name).read_bytes())
        cfg["workdir"] = tmp
        shadow = Run(cfg)
        cmd_init_model(shadow)
        cmd_refine(shadow)
        mismatched = []
        for name in ("program_init.json", "program.json"):
            mine = run.path(name)
            if mine.exists() and TransitionProgram.load(mine) != TransitionProgram.load(shadow.path(name)):
                mismatched.append(name)
    if mismatched:
        raise OracleError(f"replay diverged from recorded artifacts: {mismatched}")
    _say("replay reproduces the recorded programs")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "init-model": cmd_init_model,
    "refine": cmd_refine,
    "learn-structure": cmd_learn_structure,
    "fit": cmd_fit,
    "plan": cmd_plan,
    "eval": cmd_eval,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hybridwm", description="Hybrid world-model pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in list(COMMANDS) + ["replay-oracle"]:
        p = sub.add_parser(name)
        p.add_argument("-c", "--config", help="JSON config file or bundled name (e.g. quickstart)")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config entry, e.g. structure.chains=3")
        p.add_argument("--seed", type=int)
        p.add_argument("--workdir")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "replay-oracle":
            p.add_argument("--fixture", help="recorded fixture (default: oracle.record)")
            p.add_argument("--check", action="store_true", help="replay init-model and refine and compare")
    return parser


def _fail(code: int, kind: str, message: str, extra: dict | None = None) -> int:
    err = {"error": kind, "message": message, "exit_code": code, **(extra or {})}
    sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")
    return code


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args.config, args.overrides, args.seed, args.workdir)
        run = Run(cfg)
        run.dir.mkdir(parents=True, exist_ok=True)
        if args.command == "replay-oracle":
            cmd_replay_oracle(run, args.fixture, args.check)
        else:
            COMMANDS[args.command](run)
        run.finish()
    except ConfigError as e:
        return _fail(EXIT_CONFIG, "config", str(e), {"problems": e.problems})
    except OracleError as e:
        return _fail(EXIT_ORACLE, "oracle", str(e))
    except (DataError, IngestionError, SchemaError, StructureError, SearchError, FileNotFoundError) as e:
        return _fail(EXIT_DATA, "data", str(e))
    except Exception as e:  # anything else is a bug
        log.exception("internal error")
        return _fail(EXIT_INTERNAL, "internal", f"{type(e).__name__}: {e}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
