"""Command-line interface.

Subcommands: kb-gen, episode, validate, datagen, grpo-check, eval, stats.
Option values resolve with the precedence: explicit flag, then the
SEARCHAGENT_* environment variable, then the --config JSON file, then the
built-in default. Exit code 0 means the command completed (negative
findings included); 2 means a harness or configuration error. Outputs are
deterministic: the same flags and inputs produce identical bytes.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import datagen as dg
from . import evaluation as ev
from . import grpo as rl
from . import simtools as st
from .engine import (
    Budget,
    EngineError,
    ScriptedPolicy,
    directive_to_dict,
    dumps_episode,
    read_episodes_jsonl,
    run_episode,
)
from .tags import parse_turn

ENV_PREFIX = "SEARCHAGENT_"


class CliError(RuntimeError):
    """Configuration or input problem that should exit with status 2."""


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise CliError(f"cannot read config file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise CliError("config file must hold a JSON object")
    return data


class Resolver:
    """Per-command option resolution: flag, environment, config file, default."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.config = _load_config(getattr(args, "config", None))

    def get(self, option: str, default, cast):
        dest = option.replace(".", "_").replace("-", "_")
        value = getattr(self.args, dest, None)
        if value is not None:
            return value
        env_name = ENV_PREFIX + dest.upper()
        if env_name in os.environ:
            return self._cast(option, os.environ[env_name], cast)
        if option in self.config:
            return self._cast(option, self.config[option], cast)
        return default

    def require(self, option: str, cast):
        value = self.get(option, None, cast)
        if value is None:
            raise CliError(f"missing required option --{option}")
        return value

    @staticmethod
    def _cast(option: str, raw, cast):
        try:
            return cast(raw)
        except (TypeError, ValueError) as exc:
            raise CliError(f"bad value for {option}: {raw!r}") from exc


def _budget(resolver: Resolver) -> Budget:
    try:
        return Budget(
            max_image_searches=resolver.get("budget.max_image_searches", 1, int),
            max_total_tool_calls=resolver.get("budget.max_total_tool_calls", 10, int),
            max_response_tokens=resolver.get("budget.max_response_tokens", 8192, int),
            max_turns=resolver.get("budget.max_turns", 12, int),
        )
    except ValueError as exc:
        raise CliError(str(exc)) from exc


def _write_output(resolver: Resolver, text: str) -> None:
    path = resolver.get("output", None, str)
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _dump(data: object) -> str:
    return json.dumps(data, ensure_ascii=False, separators=(",", ":")) + "\n"


def _load_kb(resolver: Resolver) -> st.KnowledgeBase:
    path = resolver.require("kb", str)
    try:
        return st.load_kb(path)
    except OSError as exc:
        raise CliError(f"cannot read knowledge base: {exc}") from exc
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise CliError(f"malformed knowledge base: {exc}") from exc


def _load_policy(descriptor: str) -> ScriptedPolicy:
    if not descriptor.startswith("scripted:"):
        raise CliError(f"unknown policy {descriptor!r}; expected scripted:<turns.json>")
    path = descriptor[len("scripted:") :]
    try:
        with open(path, "r", encoding="utf-8") as fh:
            turns = json.load(fh)
    except OSError as exc:
        raise CliError(f"cannot read policy script: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"policy script is not valid JSON: {exc}") from exc
    if not isinstance(turns, list) or not all(isinstance(t, str) for t in turns):
        raise CliError("policy script must be a JSON array of strings")
    return ScriptedPolicy(turns)


# --- subcommand handlers ------------------------------------------------------


def _cmd_kb_gen(args: argparse.Namespace) -> int:
    resolver = Resolver(args)
    kb = st.generate_kb(
        seed=resolver.get("seed", 0, int),
        entity_count=resolver.get("entities", 12, int),
        scene_count=resolver.get("scenes", 8, int),
        docs_per_entity=resolver.get("docs-per-entity", 3, int),
        filler_docs=resolver.get("filler-docs", 6, int),
        distractor_rate=resolver.get("distractor-rate", 0.0, float),
        regions_per_scene=resolver.get("regions-per-scene", 2, int),
    )
    _write_output(resolver, _dump(st.kb_to_dict(kb)))
    return 0


def _cmd_episode(args: argparse.Namespace) -> int:
    resolver = Resolver(args)
    kb = _load_kb(resolver)
    policy = _load_policy(resolver.require("policy", str))
    budget = _budget(resolver)
    question = resolver.require("question", str)
    image_ref = resolver.require("image-ref", str)
    tools = st.SimulatedToolSuite(kb)
    try:
        episode = run_episode(policy, tools, budget, question, image_ref)
    except EngineError as exc:
        raise CliError(str(exc)) from exc
    _write_output(resolver, dumps_episode(episode) + "\n")
    return 0


def _cmd_validate(args: argparse.Namespace) -> int:
    resolver = Resolver(args)
    lines = []
    for number, line in enumerate(sys.stdin):
        line = line.strip()
        if not line:
            continue
        try:
            raw = json.loads(line)
            if not isinstance(raw, str):
                raise ValueError("expected a JSON string")
        except ValueError as exc:
            lines.append(_dump({"line": number, "ok": False, "error": str(exc)}))
            continue
        outcome = parse_turn(raw)
        action = None
        if outcome.action is not None:
            action = {
                "reason": outcome.action.reason,
                "directive": directive_to_dict(outcome.action.directive),
            }
        lines.append(
            _dump(
                {
                    "line": number,
                    "ok": outcome.ok,
                    "action": action,
                    "diagnostics": [
                        {
                            "position": d.position,
                            "kind": d.kind.value,
                            "error": d.is_error,
                            "message": d.message,
                        }
                        for d in outcome.diagnostics
                    ],
                }
            )
        )
    _write_output(resolver, "".join(lines))
    return 0


def _cmd_datagen(args: argparse.Namespace) -> int:
    resolver = Resolver(args)
    kb = _load_kb(resolver)
    items_path = resolver.require("items", str)
    try:
        items = dg.read_seed_items(items_path)
    except OSError as exc:
        raise CliError(f"cannot read items: {exc}") from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(f"malformed seed item: {exc}") from exc
    target_size = resolver.require("target-size", int)
    search_ratio = resolver.get("search-ratio", 0.5, float)
    seed = resolver.get("seed", 0, int)
    budget = _budget(resolver)
    taxonomy = None
    taxonomy_path = resolver.get("taxonomy", None, str)
    if taxonomy_path is not None:
        try:
            with open(taxonomy_path, "r", encoding="utf-8") as fh:
                taxonomy = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read taxonomy: {exc}") from exc

    tools = st.SimulatedToolSuite(kb)
    rejections = {"A": 0, "B": 0, "C": 0}
    filtered_out = 0
    pool: list[tuple[dg.MaskedConversation, dg.SeedItem]] = []
    for item in items:
        result = dg.generate_example(item, tools, budget)
        if isinstance(result, dg.Rejection):
            rejections[result.check] += 1
            continue
        if not dg.filter_by_ground_truth(result, item, ev.judge):
            filtered_out += 1
            continue
        pool.append((result, item))

    try:
        corpus = dg.balance_sample(
            pool, target_size, search_ratio, seed=seed, taxonomy=taxonomy
        )
    except (dg.InsufficientPool, ValueError) as exc:
        raise CliError(str(exc)) from exc
    output = resolver.get("output", None, str)
    if output is None:
        raise CliError("datagen requires --output for the corpus file")
    dg.emit_sft_corpus(corpus, output)

    report = {
        "input_items": len(items),
        "rejections": rejections,
        "filtered_out": filtered_out,
        "kept": len(pool),
        "emitted": len(corpus),
    }
    report_path = resolver.get("report", None, str)
    if report_path is not None:
        Path(report_path).write_text(_dump(report), encoding="utf-8")
    else:
        sys.stdout.write(_dump(report))
    return 0


def _cmd_grpo_check(args: argparse.Namespace) -> int:
    resolver = Resolver(args)
    groups_path = resolver.require("groups", str)
    try:
        groups = rl.read_groups_jsonl(groups_path)
    except OSError as exc:
        raise CliError(f"cannot read groups: {exc}") from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(f"malformed rollout group: {exc}") from exc
    try:
        config = rl.GrpoConfig(
            clip_epsilon=resolver.get("clip-epsilon", 0.2, float),
            kl_beta=resolver.get("kl-beta", 0.001, float),
            lambda_fmt=resolver.get("lambda-fmt", 0.1, float),
            group_size=resolver.get("group-size", 8, int),
        )
    except ValueError as exc:
        raise CliError(str(exc)) from exc

    rows = []
    for group in groups:
        try:
            report = rl.grpo_objective(group, config)
        except ValueError as exc:
            raise CliError(f"group {group.prompt_id!r}: {exc}") from exc
        rows.append(
            {
                "prompt_id": group.prompt_id,
                "objective": report.objective,
                "surrogate": report.surrogate,
                "kl": report.kl,
                "token_count": report.token_count,
                "clip_fraction": report.clip_fraction,
                "advantages": list(report.advantages),
            }
        )
    payload = {
        "config": {
            "clip_epsilon": config.clip_epsilon,
            "kl_beta": config.kl_beta,
            "lambda_fmt": config.lambda_fmt,
            "group_size": config.group_size,
        },
        "groups": rows,
    }
    _write_output(resolver, _dump(payload))
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    resolver = Resolver(args)
    episodes_path = resolver.require("episodes", str)
    items_path = resolver.require("items", str)
    try:
        episodes = read_episodes_jsonl(episodes_path)
        items = dg.read_seed_items(items_path)
    except OSError as exc:
        raise CliError(f"cannot read input: {exc}") from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(f"malformed input record: {exc}") from exc

    alias_table = None
    alias_path = resolver.get("aliases", None, str)
    if alias_path is not None:
        try:
            alias_table = ev.load_alias_table(alias_path)
        except (OSError, ValueError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read alias table: {exc}") from exc
    unit_table = None
    units_path = resolver.get("units", None, str)
    if units_path is not None:
        try:
            unit_table = ev.load_unit_table(units_path)
        except (OSError, KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read unit table: {exc}") from exc

    def judge_fn(question: str, prediction: str, references):
        return ev.judge(
            question, prediction, references, alias_table=alias_table, unit_table=unit_table
        )

    try:
        report = ev.evaluate(episodes, items, judge_fn)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    output = resolver.get("output", None, str)
    if output is not None:
        Path(output).write_text(_dump(ev.report_to_dict(report)), encoding="utf-8")
        sys.stdout.write(ev.render_report(report) + "\n")
    else:
        sys.stdout.write(_dump(ev.report_to_dict(report)))
    return 0


def _cmd_stats(args: argparse.Namespace) -> int:
    resolver = Resolver(args)
    episodes_path = resolver.require("episodes", str)
    try:
        episodes = read_episodes_jsonl(episodes_path)
    except OSError as exc:
        raise CliError(f"cannot read episodes: {exc}") from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(f"malformed episode record: {exc}") from exc
    stats = ev.aggregate_stats(episodes)
    payload = {
        "total": stats.total,
        "no_search": stats.no_search,
        "text_only": stats.text_only,
        "image_only": stats.image_only,
        "mixed": stats.mixed,
        "any_tool_fraction": stats.any_tool_fraction,
        "multi_text_search_fraction": stats.multi_text_search_fraction,
        "cropped_search_fraction": stats.cropped_search_fraction,
    }
    _write_output(resolver, _dump(payload))
    return 0


# --- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="JSON file of option defaults")
    shared.add_argument("--seed", type=int, help="random seed (default 0)")
    shared.add_argument("--output", help="output file (default: stdout)")

    parser = argparse.ArgumentParser(
        prog="searchagent",
        description="Deterministic harness for multimodal search agents.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("kb-gen", parents=[shared], help="generate a synthetic knowledge base")
    p.add_argument("--entities", type=int)
    p.add_argument("--scenes", type=int)
    p.add_argument("--docs-per-entity", type=int, dest="docs_per_entity")
    p.add_argument("--filler-docs", type=int, dest="filler_docs")
    p.add_argument("--distractor-rate", type=float, dest="distractor_rate")
    p.add_argument("--regions-per-scene", type=int, dest="regions_per_scene")
    p.set_defaults(handler=_cmd_kb_gen)

    p = sub.add_parser("episode", parents=[shared], help="run one scripted episode")
    p.add_argument("--kb")
    p.add_argument("--question")
    p.add_argument("--image-ref", dest="image_ref")
    p.add_argument("--policy", help="scripted:<turns.json>")
    _add_budget_flags(p)
    p.set_defaults(handler=_cmd_episode)

    p = sub.add_parser(
        "validate", parents=[shared], help="parse raw turns (one JSON string per stdin line)"
    )
    p.set_defaults(handler=_cmd_validate)

    p = sub.add_parser(
        "datagen", parents=[shared], help="generate a balanced masked training corpus"
    )
    p.add_argument("--kb")
    p.add_argument("--items")
    p.add_argument("--target-size", type=int, dest="target_size")
    p.add_argument("--search-ratio", type=float, dest="search_ratio")
    p.add_argument("--taxonomy", help="JSON array of category names")
    p.add_argument("--report", help="write the rejection report to this file")
    _add_budget_flags(p)
    p.set_defaults(handler=_cmd_datagen)

    p = sub.add_parser(
        "grpo-check", parents=[shared], help="evaluate the objective over recorded groups"
    )
    p.add_argument("--groups")
    p.add_argument("--clip-epsilon", type=float, dest="clip_epsilon")
    p.add_argument("--kl-beta", type=float, dest="kl_beta")
    p.add_argument("--lambda-fmt", type=float, dest="lambda_fmt")
    p.add_argument("--group-size", type=int, dest="group_size")
    p.set_defaults(handler=_cmd_grpo_check)

    p = sub.add_parser("eval", parents=[shared], help="judge episodes against items")
    p.add_argument("--episodes")
    p.add_argument("--items")
    p.add_argument("--aliases", help="JSON alias table")
    p.add_argument("--units", help="JSON unit table")
    p.set_defaults(handler=_cmd_eval)

    p = sub.add_parser("stats", parents=[shared], help="tool usage statistics for episodes")
    p.add_argument("--episodes")
    p.set_defaults(handler=_cmd_stats)

    return parser


def _add_budget_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--budget.max_image_searches", type=int, dest="budget_max_image_searches"
    )
    parser.add_argument(
        "--budget.max_total_tool_calls", type=int, dest="budget_max_total_tool_calls"
    )
    parser.add_argument(
        "--budget.max_response_tokens", type=int, dest="budget_max_response_tokens"
    )
    parser.add_argument("--budget.max_turns", type=int, dest="budget_max_turns")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
