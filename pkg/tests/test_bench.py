from __future__ import annotations

import json
import math
from pathlib import Path

import pytest

from oversight.bench import (
    BenchBackend,
    BenchCase,
    BenchConfig,
    BenchError,
    IntentSetMismatch,
    compare_methods,
    load_bench_config,
    render_comparison,
    run_benchmark,
)

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


@pytest.fixture(scope="module")
def bench_config() -> BenchConfig:
    return load_bench_config(FIXTURES / "bench.toml")


def tree_bytes(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


class TestConfigLoading:
    def test_fixture_config(self, bench_config):
        assert [c.name for c in bench_config.cases] == ["case_a", "case_b"]
        assert bench_config.cadence == 1
        assert bench_config.seed == 7
        assert bench_config.backend.kind == "scripted"
        assert bench_config.backend.playbooks.exists()
        assert all(c.intent.exists() and c.oracle.exists() and c.rubrics.exists()
                   for c in bench_config.cases)

    def test_missing_file(self, tmp_path):
        with pytest.raises(BenchError):
            load_bench_config(tmp_path / "nope.toml")

    def test_case_needs_intent(self, tmp_path):
        path = tmp_path / "b.toml"
        path.write_text("[[cases]]\nname = \"x\"\n")
        with pytest.raises(BenchError):
            load_bench_config(path)

    def test_duplicate_case_names(self):
        case = BenchCase(name="a", intent=FIXTURES / "intents" / "case_a.md")
        with pytest.raises(BenchError):
            BenchConfig(cases=(case, case),
                        backend=BenchBackend(
                            playbooks=FIXTURES / "playbooks" / "flat_five.json",
                            init_tree=FIXTURES / "trees" / "flat_five.json"))

    def test_scripted_backend_needs_playbooks(self):
        with pytest.raises(BenchError):
            BenchBackend(kind="scripted")

    def test_unknown_backend_kind(self):
        with pytest.raises(BenchError):
            BenchBackend(kind="imaginary")


@pytest.fixture(scope="module")
def report_and_dir(tmp_path_factory, bench_config):
    out_dir = tmp_path_factory.mktemp("bench") / "run1"
    report = run_benchmark(bench_config, out_dir=out_dir)
    return report, out_dir


class TestRunBenchmark:
    def test_all_cases_ok(self, report_and_dir):
        report, _ = report_and_dir
        assert [c["status"] for c in report["cases"]] == ["ok", "ok"]
        assert report["aggregate"]["ok"] == 2
        assert report["aggregate"]["failed"] == 0

    def test_header_records_seed(self, report_and_dir):
        report, _ = report_and_dir
        assert report["header"]["seed"] == 7
        assert report["header"]["cases"] == ["case_a", "case_b"]
        assert report["header"]["generated_at"] == 0.0

    def test_monotone_checkpoint_curve(self, report_and_dir):
        report, _ = report_and_dir
        for case in report["cases"]:
            overalls = [p["overall"] for p in case["checkpoints"]]
            assert len(overalls) == 5  # cadence 1 on a five-node tree
            assert overalls == sorted(overalls)
            assert overalls[-1] == 1.0
            assert [p["k"] for p in case["checkpoints"]] == [1, 2, 3, 4, 5]

    def test_alignment_and_rewards(self, report_and_dir):
        report, _ = report_and_dir
        case = report["cases"][0]
        assert case["alignment"]["overall"] == 1.0
        assert case["rewards"] == {"user_reward": 0.0, "outcome_reward": 1.0}
        assert case["metrics"]["total_turns"] == 5

    def test_aggregate_matches_brute_force(self, report_and_dir):
        report, _ = report_and_dir
        scored = [c for c in report["cases"] if c["status"] == "ok"]
        expected = math.fsum(c["alignment"]["overall"] for c in scored) / len(scored)
        assert report["aggregate"]["overall_mean"] == expected
        for module, mean in report["aggregate"]["per_module_mean"].items():
            values = [c["alignment"]["per_module"][module] for c in scored]
            assert mean == math.fsum(values) / len(values)

    def test_bundle_files(self, report_and_dir):
        report, out_dir = report_and_dir
        assert json.loads((out_dir / "report.json").read_text()) == report
        markdown = (out_dir / "report.md").read_text()
        assert "| **mean** |" in markdown
        assert "k=5: 1.000" in markdown
        for case in ("case_a", "case_b"):
            store = out_dir / "cases" / case / "sessions"
            assert any(store.iterdir())

    def test_bit_reproducible(self, tmp_path, bench_config, report_and_dir):
        _, first_dir = report_and_dir
        second_dir = tmp_path / "run2"
        run_benchmark(bench_config, out_dir=second_dir)
        assert tree_bytes(first_dir) == tree_bytes(second_dir)


class TestPartialFailure:
    def test_bad_case_reported_not_raised(self, tmp_path, bench_config):
        broken = BenchCase(name="broken", intent=tmp_path / "missing.md",
                           oracle=None, rubrics=None)
        config = BenchConfig(
            cases=(bench_config.cases[0], broken),
            backend=bench_config.backend,
            cadence=0, seed=1, workers=1)
        report = run_benchmark(config, out_dir=tmp_path / "out")
        statuses = {c["name"]: c["status"] for c in report["cases"]}
        assert statuses == {"case_a": "ok", "broken": "failed"}
        failed = next(c for c in report["cases"] if c["name"] == "broken")
        assert "FileNotFoundError" in failed["error"]
        assert report["aggregate"]["ok"] == 1
        # Aggregates skip the failed case instead of tanking.
        assert report["aggregate"]["overall_mean"] == 1.0


class TestCompare:
    def make_report(self, names, overall, per_module=None):
        per_module = per_module or {m: overall for m in (
            "Product Overview", "Core Functional Modules",
            "Non-functional Requirements", "User Experience Design",
            "Business Rules")}
        return {
            "header": {"cases": list(names)},
            "aggregate": {"overall_mean": overall, "per_module_mean": per_module},
        }

    def test_identical_reports_zero_deltas(self):
        report = self.make_report(["a", "b"], 0.8)
        result = compare_methods([report, report], labels=["base", "same"])
        for row in result["rows"]:
            assert all(d == 0.0 for d in row["deltas"].values())

    def test_hand_computed_deltas(self):
        base = self.make_report(["a"], 0.5)
        better = self.make_report(["a"], 0.75)
        result = compare_methods([base, better], labels=["base", "better"])
        better_row = result["rows"][1]
        assert better_row["deltas"]["Overall"] == pytest.approx(0.25)
        assert result["best"]["Overall"] == "better"
        assert result["baseline"] == "base"

    def test_disjoint_intents(self):
        with pytest.raises(IntentSetMismatch):
            compare_methods([self.make_report(["a"], 0.5),
                             self.make_report(["b"], 0.5)])

    def test_case_order_does_not_matter(self):
        first = self.make_report(["a", "b"], 0.5)
        second = self.make_report(["b", "a"], 0.6)
        result = compare_methods([first, second])
        assert result["best"]["Overall"] == "report1"

    def test_needs_two_reports(self):
        with pytest.raises(BenchError):
            compare_methods([self.make_report(["a"], 0.5)])

    def test_markdown_marks_best(self):
        base = self.make_report(["a"], 0.5)
        better = self.make_report(["a"], 0.75)
        text = render_comparison(
            compare_methods([base, better], labels=["base", "better"]))
        assert "**0.750 (+0.250)**" in text
        assert "| base |" in text


class TestMain:
    def test_module_entry(self, tmp_path, capsys):
        from oversight.bench import main

        code = main([str(FIXTURES / "bench.toml"), "--out", str(tmp_path / "r")])
        assert code == 0
        out = json.loads(capsys.readouterr().out)
        assert out == {"ok": 2, "failed": 0, "overall_mean": 1.0}

    def test_bad_config_exit(self, tmp_path, capsys):
        from oversight.bench import main

        code = main([str(tmp_path / "missing.toml")])
        assert code == 1
        err = json.loads(capsys.readouterr().err)
        assert err["code"] == "BenchError"
