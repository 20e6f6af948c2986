"""Command-line interface: subcommands, option precedence, exit codes."""

from __future__ import annotations

import io
import json

import pytest

from searchagent import (
    Answer,
    TextSearch,
    generate_kb,
    judge,
    kb_to_dict,
    loads_episode,
)
from searchagent.cli import main
from searchagent.datagen import (
    SeedItem,
    audit_sft_corpus,
    load_sft_corpus,
    synthesize_items,
    write_seed_items,
)
from searchagent.engine import write_episodes_jsonl
from searchagent.grpo import write_groups_jsonl
from searchagent.simtools import load_kb, save_kb

from conftest import HERON_QUESTION, HERON_SCRIPT, make_scene_kb, run_scripted, turn
from test_grpo import oracle_objective, random_group


@pytest.fixture
def kb_file(tmp_path):
    path = tmp_path / "kb.json"
    save_kb(make_scene_kb(), path)
    return str(path)


def write_script(tmp_path, turns, name="script.json"):
    path = tmp_path / name
    path.write_text(json.dumps(list(turns)), encoding="utf-8")
    return str(path)


class TestKbGen:
    def test_seeded_generation_matches_the_library(self, tmp_path, capsys):
        out = tmp_path / "kb.json"
        assert main(["kb-gen", "--seed", "3", "--output", str(out)]) == 0
        assert json.loads(out.read_text(encoding="utf-8")) == kb_to_dict(generate_kb(3))

    def test_two_runs_are_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        main(["kb-gen", "--seed", "8", "--output", str(a)])
        main(["kb-gen", "--seed", "8", "--output", str(b)])
        assert a.read_bytes() == b.read_bytes()

    def test_shape_flags(self, tmp_path):
        out = tmp_path / "kb.json"
        main(["kb-gen", "--seed", "1", "--entities", "4", "--scenes", "2", "--output", str(out)])
        kb = load_kb(out)
        assert len(kb.entities) == 4
        assert len(kb.scenes) == 2

    def test_stdout_default(self, capsys):
        assert main(["kb-gen", "--seed", "2"]) == 0
        data = json.loads(capsys.readouterr().out)
        assert data == kb_to_dict(generate_kb(2))


class TestEpisode:
    def run_episode_cli(self, tmp_path, kb_file, script, extra=(), name="ep.jsonl"):
        script_path = write_script(tmp_path, script)
        out = tmp_path / name
        code = main(
            [
                "episode",
                "--kb", kb_file,
                "--policy", f"scripted:{script_path}",
                "--question", HERON_QUESTION,
                "--image-ref", "pier-001",
                "--output", str(out),
                *extra,
            ]
        )
        return code, out

    def test_scripted_run_round_trips(self, tmp_path, kb_file):
        code, out = self.run_episode_cli(tmp_path, kb_file, HERON_SCRIPT)
        assert code == 0
        episode = loads_episode(out.read_text(encoding="utf-8").strip())
        assert episode.status.__class__.__name__ == "Answered"
        assert episode.ledger.image_searches_used == 1
        assert episode.ledger.text_searches_used == 2

    def test_budget_flag_is_honored(self, tmp_path, kb_file):
        script = [turn(TextSearch("amber heron height")),
                  turn(TextSearch("heron casting bronze")),
                  turn(Answer("12 meters"))]
        code, out = self.run_episode_cli(
            tmp_path, kb_file, script, extra=["--budget.max_total_tool_calls", "1"]
        )
        assert code == 0  # budget exhaustion is data, not a harness error
        episode = loads_episode(out.read_text(encoding="utf-8").strip())
        assert episode.status.__class__.__name__ == "BudgetExhausted"
        assert episode.ledger.total_tool_calls == 1

    def test_two_runs_are_byte_identical(self, tmp_path, kb_file):
        _, a = self.run_episode_cli(tmp_path, kb_file, HERON_SCRIPT, name="a.jsonl")
        _, b = self.run_episode_cli(tmp_path, kb_file, HERON_SCRIPT, name="b.jsonl")
        assert a.read_bytes() == b.read_bytes()

    def test_missing_kb_is_a_harness_error(self, tmp_path, capsys):
        script_path = write_script(tmp_path, HERON_SCRIPT)
        code = main(
            [
                "episode",
                "--kb", str(tmp_path / "missing.json"),
                "--policy", f"scripted:{script_path}",
                "--question", "q",
                "--image-ref", "pier-001",
            ]
        )
        assert code == 2
        assert "knowledge base" in capsys.readouterr().err

    def test_unknown_policy_scheme(self, kb_file, capsys):
        code = main(
            [
                "episode",
                "--kb", kb_file,
                "--policy", "neural:latest",
                "--question", "q",
                "--image-ref", "pier-001",
            ]
        )
        assert code == 2

    def test_missing_required_option(self, kb_file, capsys):
        code = main(["episode", "--kb", kb_file, "--question", "q", "--image-ref", "x"])
        assert code == 2
        assert "--policy" in capsys.readouterr().err


class TestValidate:
    def feed(self, monkeypatch, *raw_turns):
        text = "".join(json.dumps(t) + "\n" for t in raw_turns)
        monkeypatch.setattr("sys.stdin", io.StringIO(text))

    def test_mixed_stream_stays_exit_zero(self, monkeypatch, capsys):
        self.feed(
            monkeypatch,
            "<reason>r</reason><answer>x</answer>",
            "<answer>broken",
        )
        assert main(["validate"]) == 0
        lines = [json.loads(l) for l in capsys.readouterr().out.splitlines()]
        assert [l["ok"] for l in lines] == [True, False]
        assert lines[0]["action"]["directive"] == {"kind": "answer", "text": "x"}
        assert any(d["error"] for d in lines[1]["diagnostics"])

    def test_non_json_line_is_reported_not_fatal(self, monkeypatch, capsys):
        monkeypatch.setattr("sys.stdin", io.StringIO("not json at all\n"))
        assert main(["validate"]) == 0
        line = json.loads(capsys.readouterr().out)
        assert line["ok"] is False
        assert "error" in line


class TestDatagen:
    def prepare(self, tmp_path, count=24):
        kb = generate_kb(6, entity_count=8, scene_count=4)
        kb_path = tmp_path / "kb.json"
        save_kb(kb, kb_path)
        items = synthesize_items(kb, count, ["alpha", "beta"], seed=2)
        items_path = tmp_path / "items.jsonl"
        write_seed_items(items_path, items)
        return str(kb_path), str(items_path)

    def test_pipeline_emits_an_audited_corpus(self, tmp_path, capsys):
        kb_path, items_path = self.prepare(tmp_path)
        corpus = tmp_path / "corpus.jsonl"
        code = main(
            [
                "datagen",
                "--kb", kb_path,
                "--items", items_path,
                "--target-size", "16",
                "--output", str(corpus),
            ]
        )
        assert code == 0
        report = json.loads(capsys.readouterr().out)
        assert report["input_items"] == 24
        assert report["emitted"] == 16
        assert audit_sft_corpus(corpus) == 16
        samples = load_sft_corpus(corpus)
        assert len(samples) == 16

    def test_report_file_and_determinism(self, tmp_path):
        kb_path, items_path = self.prepare(tmp_path)
        outs = []
        for name in ("one", "two"):
            corpus = tmp_path / f"{name}.jsonl"
            report = tmp_path / f"{name}-report.json"
            code = main(
                [
                    "datagen",
                    "--kb", kb_path,
                    "--items", items_path,
                    "--target-size", "16",
                    "--seed", "5",
                    "--output", str(corpus),
                    "--report", str(report),
                ]
            )
            assert code == 0
            outs.append((corpus.read_bytes(), report.read_bytes()))
        assert outs[0] == outs[1]

    def test_missing_output_is_a_harness_error(self, tmp_path, capsys):
        kb_path, items_path = self.prepare(tmp_path)
        code = main(
            ["datagen", "--kb", kb_path, "--items", items_path, "--target-size", "8"]
        )
        assert code == 2
        assert "--output" in capsys.readouterr().err

    def test_unreachable_target_is_a_harness_error(self, tmp_path, capsys):
        kb_path, items_path = self.prepare(tmp_path, count=6)
        code = main(
            [
                "datagen",
                "--kb", kb_path,
                "--items", items_path,
                "--target-size", "500",
                "--output", str(tmp_path / "corpus.jsonl"),
            ]
        )
        assert code == 2


class TestGrpoCheck:
    def test_objectives_match_the_brute_force_oracle(self, tmp_path, capsys):
        groups = [random_group(s) for s in range(3)]
        path = tmp_path / "groups.jsonl"
        write_groups_jsonl(path, groups)
        assert main(["grpo-check", "--groups", str(path)]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["config"]["clip_epsilon"] == 0.2
        assert payload["config"]["kl_beta"] == 0.001
        from searchagent import GrpoConfig

        for group, row in zip(groups, payload["groups"]):
            expected = oracle_objective(group, GrpoConfig())
            assert abs(row["objective"] - expected["objective"]) < 1e-10
            assert row["token_count"] == expected["token_count"]

    def test_constant_flags_are_echoed(self, tmp_path, capsys):
        groups = [random_group(1)]
        path = tmp_path / "groups.jsonl"
        write_groups_jsonl(path, groups)
        assert main(["grpo-check", "--groups", str(path), "--clip-epsilon", "0.1"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["config"]["clip_epsilon"] == 0.1

    def test_malformed_group_file(self, tmp_path, capsys):
        path = tmp_path / "groups.jsonl"
        path.write_text('{"prompt_id": "x", "trajectories": [{"logprobs_current": [0.0]}]}\n',
                        encoding="utf-8")
        assert main(["grpo-check", "--groups", str(path)]) == 2


def build_eval_inputs(tmp_path):
    kb = make_scene_kb()
    episodes = [
        run_scripted(kb, HERON_SCRIPT, HERON_QUESTION, "pier-001"),
        run_scripted(kb, [turn(Answer("55 meters"))], HERON_QUESTION, "pier-001"),
        run_scripted(kb, [turn(Answer("12 meters"))], HERON_QUESTION, "pier-001"),
        run_scripted(kb, [turn(Answer("12 meters"))], HERON_QUESTION, "pier-001"),
    ]
    items = [
        SeedItem(HERON_QUESTION, "pier-001", ("12 meters",), "landmarks", True)
        for _ in episodes
    ]
    episodes_path = tmp_path / "episodes.jsonl"
    items_path = tmp_path / "items.jsonl"
    write_episodes_jsonl(episodes_path, episodes)
    write_seed_items(items_path, items)
    return str(episodes_path), str(items_path)


class TestEval:
    def test_three_of_four_report(self, tmp_path, capsys):
        episodes_path, items_path = build_eval_inputs(tmp_path)
        assert main(["eval", "--episodes", episodes_path, "--items", items_path]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["accuracy"] == 0.75
        assert payload["stats"]["total"] == 4

    def test_output_file_plus_table(self, tmp_path, capsys):
        episodes_path, items_path = build_eval_inputs(tmp_path)
        out = tmp_path / "report.json"
        code = main(
            ["eval", "--episodes", episodes_path, "--items", items_path,
             "--output", str(out)]
        )
        assert code == 0
        table = capsys.readouterr().out
        assert "accuracy" in table.lower()
        assert json.loads(out.read_text(encoding="utf-8"))["accuracy"] == 0.75

    def test_alias_table_flag(self, tmp_path, capsys):
        kb = make_scene_kb()
        episodes = [run_scripted(kb, [turn(Answer("Big Apple"))], HERON_QUESTION, "pier-001")]
        items = [SeedItem(HERON_QUESTION, "pier-001", ("new york city",), "places", False)]
        episodes_path = tmp_path / "e.jsonl"
        items_path = tmp_path / "i.jsonl"
        write_episodes_jsonl(episodes_path, episodes)
        write_seed_items(items_path, items)
        aliases = tmp_path / "aliases.json"
        aliases.write_text(json.dumps({"big apple": "new york city"}), encoding="utf-8")

        assert main(["eval", "--episodes", str(episodes_path), "--items", str(items_path)]) == 0
        assert json.loads(capsys.readouterr().out)["accuracy"] == 0.0
        assert main(
            ["eval", "--episodes", str(episodes_path), "--items", str(items_path),
             "--aliases", str(aliases)]
        ) == 0
        assert json.loads(capsys.readouterr().out)["accuracy"] == 1.0

    def test_misaligned_inputs_are_a_harness_error(self, tmp_path, capsys):
        episodes_path, items_path = build_eval_inputs(tmp_path)
        items = [SeedItem("different question", "pier-001", ("x",), "c", False)] * 4
        write_seed_items(items_path, items)
        assert main(["eval", "--episodes", episodes_path, "--items", items_path]) == 2

    def test_byte_identical_reruns(self, tmp_path):
        episodes_path, items_path = build_eval_inputs(tmp_path)
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        main(["eval", "--episodes", episodes_path, "--items", items_path, "--output", str(a)])
        main(["eval", "--episodes", episodes_path, "--items", items_path, "--output", str(b)])
        assert a.read_bytes() == b.read_bytes()


class TestStats:
    def test_stats_payload(self, tmp_path, capsys):
        episodes_path, _ = build_eval_inputs(tmp_path)
        assert main(["stats", "--episodes", episodes_path]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["total"] == 4
        assert payload["no_search"] == 3
        assert payload["mixed"] == 1

    def test_empty_episode_file(self, tmp_path, capsys):
        path = tmp_path / "empty.jsonl"
        path.write_text("", encoding="utf-8")
        assert main(["stats", "--episodes", str(path)]) == 0
        assert json.loads(capsys.readouterr().out)["total"] == 0


class TestPrecedence:
    def test_flag_beats_env_beats_config_beats_default(self, tmp_path, monkeypatch, capsys):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"seed": 5}), encoding="utf-8")

        main(["kb-gen", "--config", str(config)])
        assert json.loads(capsys.readouterr().out) == kb_to_dict(generate_kb(5))

        monkeypatch.setenv("SEARCHAGENT_SEED", "7")
        main(["kb-gen", "--config", str(config)])
        assert json.loads(capsys.readouterr().out) == kb_to_dict(generate_kb(7))

        main(["kb-gen", "--config", str(config), "--seed", "9"])
        assert json.loads(capsys.readouterr().out) == kb_to_dict(generate_kb(9))

    def test_default_seed_is_zero(self, capsys):
        main(["kb-gen"])
        assert json.loads(capsys.readouterr().out) == kb_to_dict(generate_kb(0))

    def test_dotted_budget_option_via_env(self, tmp_path, kb_file, monkeypatch):
        script = [turn(TextSearch("amber heron height")),
                  turn(TextSearch("heron casting bronze")),
                  turn(Answer("12 meters"))]
        script_path = write_script(tmp_path, script)
        out = tmp_path / "ep.jsonl"
        base = [
            "episode", "--kb", kb_file, "--policy", f"scripted:{script_path}",
            "--question", HERON_QUESTION, "--image-ref", "pier-001",
            "--output", str(out),
        ]
        monkeypatch.setenv("SEARCHAGENT_BUDGET_MAX_TOTAL_TOOL_CALLS", "1")
        assert main(base) == 0
        episode = loads_episode(out.read_text(encoding="utf-8").strip())
        assert episode.status.__class__.__name__ == "BudgetExhausted"

        # An explicit flag overrides the environment.
        assert main(base + ["--budget.max_total_tool_calls", "10"]) == 0
        episode = loads_episode(out.read_text(encoding="utf-8").strip())
        assert episode.status.__class__.__name__ == "Answered"

    def test_bad_env_value_is_a_harness_error(self, kb_file, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("SEARCHAGENT_SEED", "not-a-number")
        assert main(["kb-gen"]) == 2
        assert "bad value" in capsys.readouterr().err

    def test_malformed_config_file(self, tmp_path, capsys):
        config = tmp_path / "config.json"
        config.write_text("{broken", encoding="utf-8")
        assert main(["kb-gen", "--config", str(config)]) == 2


class TestParserBehavior:
    def test_unknown_subcommand_exits_two(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_no_subcommand_exits_two(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2
