"""End-to-end acceptance suite: one test per release criterion, each printing
a single pass/fail line and enforcing its runtime budget."""
import json
import random
import sys
import time
from contextlib import contextmanager

import numpy as np
import pytest
from fastapi.testclient import TestClient

from hiercls.grpo import (TrainConfig, grpo_loss, group_advantages,
                          make_separable_task, optimal_mean_reward, sample_group,
                          train, trajectory_log_probs)
from hiercls.metrics import EvalRecord, evaluate
from hiercls.rewards import RewardConfig, Scorer, format_reward, step_reward, total_reward
from hiercls.service import create_app
from hiercls.taxonomy import LabelPath, Taxonomy, weights_from_counts
from hiercls.trace import parse_trace, render_trace

from conftest import IPC_LEVELS
from test_dataset import big_taxonomy, make_corpus
from test_grpo import make_group, numeric_gradient, random_policy, small_setup
from test_metrics import confusion_matrix_oracle
from test_rewards import trace_for


@contextmanager
def criterion(number, description, budget_seconds):
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"[FAIL] criterion {number}: {description}", file=sys.stderr)
        raise
    elapsed = time.perf_counter() - start
    assert elapsed < budget_seconds, (
        f"criterion {number} took {elapsed:.2f}s, budget {budget_seconds}s")
    print(f"[PASS] criterion {number}: {description} ({elapsed:.2f}s)")


def test_criterion_1_weight_formula():
    with criterion(1, "level weights match arbitrary-precision oracle, base-invariant", 1.0):
        import mpmath
        mpmath.mp.dps = 50
        counts = (8, 129, 639)
        logs = [mpmath.log(k) for k in counts]
        oracle = [float(x / sum(logs)) for x in logs]
        got = weights_from_counts(counts)
        for g, o in zip(got, oracle):
            assert abs(g - o) < 1e-12
        rng = random.Random(0)
        for _ in range(100):
            n = rng.randint(1, 6)
            ks = [rng.randint(2, 100_000) for _ in range(n)]
            w = weights_from_counts(ks)
            assert abs(sum(w) - 1.0) < 1e-12
            import math
            logs10 = [math.log10(k) for k in ks]
            w10 = [x / sum(logs10) for x in logs10]
            assert all(abs(a - b) < 1e-12 for a, b in zip(w, w10))


def test_criterion_2_reward_stack():
    with criterion(2, "reward formulas match hand derivation; 10k-case properties", 10.0):
        cfg = RewardConfig()
        gold = LabelPath(("H", "H03", "H03L"))
        w = weights_from_counts((8, 129, 639))

        # worked examples, 1e-12
        two_of_three, _ = step_reward(trace_for(["H", "H03", "H03K"]), gold, w)
        import math
        expected = (math.log(8) + math.log(129)) / sum(math.log(k) for k in (8, 129, 639))
        assert abs(two_of_three - expected) < 1e-12
        assert abs(format_reward(64, cfg) - (-0.5)) < 1e-12
        assert abs(format_reward(448, cfg) - (-0.5)) < 1e-12
        empty = total_reward(None, gold, cfg, w, raw_text="")
        assert abs(empty.total - (-0.1)) < 1e-12

        # randomized bounds / monotonicity / continuity, >= 10,000 cases
        rng = random.Random(1)
        names = ["Section", "Class", "Subclass"]
        cases = 0
        for _ in range(2500):
            counts = [rng.randint(2, 1000) for _ in range(3)]
            weights = weights_from_counts(counts)
            decisions = [rng.choice([g, "X" + g]) for g in gold.codes]
            trace = trace_for(decisions)
            object.__setattr__(trace, "token_length", rng.randint(0, 1500))
            c = RewardConfig(lam=rng.random(), omega=rng.random() * 2,
                             beta=rng.random() * 0.5)
            bd = total_reward(trace, gold, c, weights)
            assert 0.0 <= bd.main <= 1.0 + 1e-12
            assert -c.omega - 1e-12 <= bd.format <= max(c.beta, 0) + 1e-12
            assert -c.lam * c.omega - 1e-9 <= bd.total <= 1 + c.lam * max(c.beta, 0) + 1e-9
            cases += 1
            # monotonicity: flipping one wrong level adds exactly w_i
            wrong = [i for i, d in enumerate(decisions) if d != gold.codes[i]]
            if wrong:
                i = rng.choice(wrong)
                flipped = list(decisions)
                flipped[i] = gold.codes[i]
                lo, _ = step_reward(trace_for(decisions), gold, weights)
                hi, _ = step_reward(trace_for(flipped), gold, weights)
                assert abs((hi - lo) - weights[i]) < 1e-12
                cases += 1
            # continuity at the band edges when beta = 0
            c0 = RewardConfig(lam=c.lam, omega=c.omega, beta=0.0)
            assert abs(format_reward(c0.l0, c0)) < 1e-12
            assert abs(format_reward(c0.h0, c0)) < 1e-12
            assert format_reward(c0.h_max, c0) == format_reward(c0.h_max + 500, c0)
            cases += 3
        assert cases >= 10_000


def test_criterion_3_parser_round_trip():
    with criterion(3, "1,000 randomized traces round-trip exactly", 5.0):
        rng = random.Random(2)
        alphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789."
        for _ in range(1000):
            n = rng.randint(1, 5)
            names = [f"Level {i + 1}" for i in range(n)]
            codes = ["".join(rng.choice(alphabet) for _ in range(rng.randint(1, 8)))
                     for _ in range(n)]
            justs = [" ".join("word%d" % rng.randrange(50)
                              for _ in range(rng.randint(1, 20)))
                     for _ in range(n)]
            text = render_trace(codes, names, justs)
            report = parse_trace(text, names, mode="strict")
            assert report.trace is not None, report.violations
            assert [s.decision for s in report.trace.steps] == codes
            assert [s.level_name for s in report.trace.steps] == names


def test_criterion_4_gradient_check():
    with criterion(4, "analytic GRPO gradient matches finite differences on 50 instances", 30.0):
        for seed in range(50):
            rng = np.random.default_rng(seed)
            depth = int(rng.integers(1, 4))
            branching = int(rng.integers(2, 6))
            features = int(rng.integers(1, min(4, branching ** depth + 1)))
            _, space = small_setup(depth=depth, branching=branching,
                                   features=features)
            policy = random_policy(space, features, rng, scale=0.5)
            old = random_policy(space, features, rng, scale=0.5)
            ref = random_policy(space, features, rng, scale=0.5)
            cfg = TrainConfig(clip_eps=0.2, kl_coef=0.01)
            feature = int(rng.integers(features))
            group = make_group(space, old, feature, 6, seed, rng)
            _, grad = grpo_loss(group, policy, old, ref, cfg)
            num = numeric_gradient(
                lambda: grpo_loss(group, policy, old, ref, cfg)[0], policy, h=1e-5)
            for a, n in zip(grad, num):
                mask = np.abs(a) > 1e-8
                if mask.any():
                    rel = np.abs(a[mask] - n[mask]) / np.abs(a[mask])
                    assert rel.max() < 1e-4


def test_criterion_5_toy_training():
    with criterion(5, "toy GRPO reaches >= 0.90 of optimal, bit-identical under seed", 120.0):
        task = make_separable_task(num_features=32, depth=3, branching=4)
        cfg = TrainConfig(group_size=8, kl_coef=0.001, sampling_temperature=1.0,
                          iterations=500, seed=0)
        reward_cfg = RewardConfig()
        policy1, log1 = train(task, cfg, reward_cfg)
        scorer = Scorer(task.taxonomy, reward_cfg)
        optimal = optimal_mean_reward(task, scorer, cfg.trace_target_tokens)
        assert log1.final_mean_reward >= 0.90 * optimal
        policy2, log2 = train(task, cfg, reward_cfg)
        assert log1.records == log2.records  # bit-identical
        for a, b in zip(policy1.tables, policy2.tables):
            assert np.array_equal(a, b)


def test_criterion_6_dataset_protocol():
    with criterion(6, "balanced split yields 22,500/2,500 with 45/5 per subclass; OOD capped", 30.0):
        from hiercls.dataset import build_balanced_split, build_ood_set

        tax = big_taxonomy(n_sections=8, classes_per=8, subclasses_per=8)  # 512 leaves
        subs = sorted(tax.levels[-1].codes)[:500]
        corpus = []
        i = 0
        for sub in subs:
            for _ in range(55):
                from hiercls.dataset import Document
                corpus.append(Document(f"d{i}", "t", sub, "synth", 2015, "Accepted"))
                i += 1
        manifest = build_balanced_split(corpus, tax, min_instances=50,
                                        per_class=50, test_fraction=0.1, seed=0)
        assert len(manifest.train_ids) == 22_500
        assert len(manifest.test_ids) == 2_500
        counts = manifest.per_subclass_counts()
        assert len(counts) == 500
        assert all(c == {"train": 45, "test": 5} for c in counts.values())

        train_labels = {sub for _, sub in manifest.assignments.values()}
        ood_corpus = []
        for j, sub in enumerate(sorted(tax.levels[-1].codes)):
            n = 3 if j % 2 else 25
            for k in range(n):
                from hiercls.dataset import Document
                ood_corpus.append(Document(f"e{j}_{k}", "t", sub, "epo", 2024, ""))
        ids = build_ood_set(ood_corpus, tax, train_labels, cap_per_class=10, seed=1)
        by_doc = {d.doc_id: d.main_label for d in ood_corpus}
        per_label: dict = {}
        for d in ids:
            per_label[by_doc[d]] = per_label.get(by_doc[d], 0) + 1
        assert set(per_label) <= train_labels
        assert all(v <= 10 for v in per_label.values())


def test_criterion_7_metrics_oracle():
    with criterion(7, "evaluate matches confusion-matrix oracle on 1,000 random sets", 10.0):
        tax = Taxonomy("ipc-mini", IPC_LEVELS)
        leaves = sorted(tax.levels[-1].codes)
        rng = random.Random(3)
        for _ in range(1000):
            n = rng.randint(1, 30)
            records = []
            for i in range(n):
                gold = tax.path_to(3, rng.choice(leaves))
                if rng.random() < 0.15:
                    predicted = None
                else:
                    predicted = tax.path_to(3, rng.choice(leaves)).codes
                records.append(EvalRecord(f"d{i}", gold, predicted))
            report = evaluate(records, tax)
            for li, m in enumerate(report.per_level):
                golds = [r.gold.codes[li] for r in records]
                preds = [r.predicted[li] if r.predicted else "<none>" for r in records]
                acc, mf1 = confusion_matrix_oracle(golds, preds, set(golds))
                assert abs(m.accuracy - acc) < 1e-12
                assert abs(m.macro_f1 - mf1) < 1e-12
                assert m.micro_f1 == m.accuracy  # exact identity


def test_criterion_8_service_parity():
    with criterion(8, "500 randomized wire requests bit-identical to library scoring", 30.0):
        tax = Taxonomy("ipc-mini", IPC_LEVELS)
        cfg = RewardConfig()
        scorer = Scorer(tax, cfg)
        client = TestClient(create_app(tax, cfg))
        rng = random.Random(4)
        leaves = sorted(tax.levels[-1].codes)
        for _ in range(500):
            gold = rng.choice(leaves)
            kind = rng.random()
            if kind < 0.2:
                raw = "unstructured text %d" % rng.randrange(1000)
            elif kind < 0.3:
                raw = ""
            else:
                path = tax.path_to(3, rng.choice(leaves))
                justs = [" ".join("t%d" % rng.randrange(20)
                                  for _ in range(rng.randint(1, 60)))
                         for _ in path.codes]
                raw = render_trace(path.codes, tax.level_names, justs)
            got = client.post("/score", json={
                "items": [{"raw_output": raw, "gold_code": gold}],
            }).json()["items"][0]
            want = scorer.score(raw, gold)
            assert got["main"] == want.main
            assert got["format"] == want.format
            assert got["total"] == want.total
            assert got["per_level_correct"] == list(want.per_level_correct)
