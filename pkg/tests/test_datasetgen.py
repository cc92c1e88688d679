import json
from collections import Counter

import pytest

from conftest import make_catalog, make_history, make_slate
from rerankeval.datasetgen import (DpoPair, SftSample, make_dpo_pair,
                                   make_positive_sample, summarize_overview,
                                   write_training_files)
from rerankeval.errors import GenerationOrderDrift
from rerankeval.llm_client import ScriptedBackend
from rerankeval.rerank import parse_ranking


class CountingBackend(ScriptedBackend):
    def __init__(self, *args, **kw):
        super().__init__(*args, **kw)
        self.calls = 0

    def complete(self, request):
        self.calls += 1
        return super().complete(request)


class TestSummarizeOverview:
    def test_short_overview_passes_through_without_call(self):
        backend = CountingBackend(default="unused")
        text = "Five words is plenty here."
        assert summarize_overview(backend, text) == text
        assert backend.calls == 0

    def test_persistently_long_answer_truncated(self):
        long_answer = " ".join(f"w{i}" for i in range(20))
        backend = CountingBackend(default=long_answer)
        long_overview = " ".join(f"src{i}" for i in range(30))
        result = summarize_overview(backend, long_overview)
        assert result == " ".join(f"w{i}" for i in range(15))
        assert backend.calls == 2

    def test_good_answer_accepted_first_try(self):
        backend = CountingBackend(default="A concise summary.")
        long_overview = " ".join(f"src{i}" for i in range(30))
        assert summarize_overview(backend, long_overview) == "A concise summary."
        assert backend.calls == 1

    def test_empty_overview_rejected(self):
        with pytest.raises(ValueError):
            summarize_overview(CountingBackend(), "  ")


class TestMakePositiveSample:
    def test_offline_sample_round_trips(self, catalog):
        history = make_history("u", [1, 2])
        ranking = [str(i) for i in range(3, 18)]
        sample = make_positive_sample(None, history, ranking, catalog)
        parsed = parse_ranking(sample.completion, make_slate("u", ranking),
                               catalog=catalog, lenient=True)
        assert [r.item for r in parsed.ranked] == ranking
        assert len(sample.completion.splitlines()) == 15

    def test_echo_backend_keeps_order(self, catalog):
        history = make_history("u", [1])
        ranking = ["3", "4", "5"]
        backend = ScriptedBackend()  # echoes candidates in given order
        sample = make_positive_sample(backend, history, ranking, catalog)
        parsed = parse_ranking(sample.completion, make_slate("u", ranking),
                               catalog=catalog, lenient=True)
        assert [r.item for r in parsed.ranked] == ranking

    def test_reordering_backend_raises_drift(self, catalog):
        history = make_history("u", [1])
        ranking = ["3", "4", "5"]
        backend = ScriptedBackend(default="Rank 1: 5 - x\nRank 2: 4 - y\nRank 3: 3 - z")
        with pytest.raises(GenerationOrderDrift):
            make_positive_sample(backend, history, ranking, catalog)


class TestMakeDpoPair:
    def test_two_items_forced_swap(self):
        positive = SftSample(prompt="p", completion="Rank 1: a - x\nRank 2: b - y")
        pair = make_dpo_pair(positive, seed=5)
        assert pair.rejected == "Rank 1: b - y\nRank 2: a - x"
        assert pair.chosen == positive.completion

    def test_multiset_equality(self, catalog):
        ranking = [str(i) for i in range(1, 11)]
        positive = make_positive_sample(None, make_history("u", [11]), ranking,
                                        catalog)
        pair = make_dpo_pair(positive, seed=3)
        chosen_items = [l.split(":", 1)[1].split(" - ")[0].strip()
                        for l in pair.chosen.splitlines()]
        rejected_items = [l.split(":", 1)[1].split(" - ")[0].strip()
                          for l in pair.rejected.splitlines()]
        assert Counter(chosen_items) == Counter(rejected_items)
        assert chosen_items != rejected_items

    def test_single_item_rejected(self):
        with pytest.raises(ValueError):
            make_dpo_pair(SftSample(prompt="p", completion="Rank 1: a - x"), seed=1)

    def test_deterministic(self):
        positive = SftSample(prompt="p", completion="\n".join(
            f"Rank {k}: i{k} - r{k}" for k in range(1, 8)))
        assert make_dpo_pair(positive, seed=2) == make_dpo_pair(positive, seed=2)


class TestWriteTrainingFiles:
    def test_counts_and_round_trip(self, tmp_path):
        samples = [SftSample(prompt=f"p{i}", completion=f"Rank 1: a - {i}\nRank 2: b - x")
                   for i in range(3)]
        pairs = [make_dpo_pair(s, seed=i) for i, s in enumerate(samples)]
        manifest = write_training_files(samples, pairs, tmp_path)
        assert manifest["sft"]["count"] == 3
        assert manifest["dpo"]["count"] == 3

        sft_lines = (tmp_path / "sft.jsonl").read_text().splitlines()
        assert len(sft_lines) == 3
        obj = json.loads(sft_lines[1])
        assert obj == {"prompt": "p1", "completion": samples[1].completion}

        dpo_lines = (tmp_path / "dpo.jsonl").read_text().splitlines()
        back = json.loads(dpo_lines[0])
        assert DpoPair(**back) == pairs[0]

    def test_empty_build(self, tmp_path):
        manifest = write_training_files([], [], tmp_path)
        assert manifest["sft"]["count"] == 0
        assert (tmp_path / "sft.jsonl").read_text() == ""
        assert json.loads((tmp_path / "manifest.json").read_text())["dpo"]["count"] == 0

    def test_hash_stable(self, tmp_path):
        samples = [SftSample(prompt="p", completion="Rank 1: a - x\nRank 2: b - y")]
        m1 = write_training_files(samples, [], tmp_path / "a")
        m2 = write_training_files(samples, [], tmp_path / "b")
        assert m1["sft"]["sha256"] == m2["sft"]["sha256"]
