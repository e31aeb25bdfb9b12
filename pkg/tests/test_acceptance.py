"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criteria 4-6 share one seeded synthetic benchmark (40 categories, noisy
1-shot visuals, informative semantics) and its per-seed trained models; the
benchmark fixture trains every variant once and the criteria assert on the
collected numbers. Run with -s to see the per-criterion lines.
"""

import math
import time
import numpy as np
import pytest

from protomix.cli import main as cli_main
from protomix.data import (
    CategoryLabel,
    EmbeddingTable,
    LabelEmbeddings,
    SyntheticTaskSpec,
    generate_synthetic_crossmodal,
    parse_embedding_file,
    resolve_label_embedding,
    split_categories,
)
from protomix.episodes import Episode, EpisodeConfig, episode_stream
from protomix.model import ConditioningMode, CrossModalModel, ModelConfig
from protomix.training import TrainConfig, evaluate, harmonic_accuracy, train

from reference import (
    episode_loss_bruteforce,
    fd_error_for_param,
    mean_ci95,
    min_relu_preactivation,
    protonet_probabilities,
)


def report(criterion: str, passed: bool, detail: str = "") -> None:
    status = "PASS" if passed else "FAIL"
    print(f"[{status}] {criterion}" + (f" ({detail})" if detail else ""))
    assert passed, f"{criterion}: {detail}"


# ---------------------------------------------------------------------------
# shared synthetic benchmark (criteria 4-6)

BENCHMARK_SEEDS = (0, 1, 2, 3, 4)


def benchmark_data(seed):
    spec = SyntheticTaskSpec(
        n_categories=40,
        visual_dim=12,
        semantic_dim=12,
        visual_spread=0.8,
        visual_separation=3.0,
        semantic_separation=3.0,
        samples_per_category=40,
        seed=seed,
    )
    dataset, table = generate_synthetic_crossmodal(spec)
    train_split, _, test_split = split_categories(dataset, (0.6, 0.2, 0.2), seed=seed)
    embeddings = LabelEmbeddings(dataset, table, seed=seed)
    return dataset, train_split, test_split, embeddings


def benchmark_run(dataset, train_split, test_split, embeddings, k_shot, seed, lambda_fixed=None):
    model = CrossModalModel(
        ModelConfig(
            visual_dim=12, semantic_dim=12, embed_dim=12, encoder_hidden=(16,),
            transform_hidden=32, mixer_hidden=16, dropout_keep=1.0,
            lambda_fixed=lambda_fixed, seed=seed,
        )
    )
    config = TrainConfig(
        episode_config=EpisodeConfig(5, k_shot, 5),
        iterations=800,
        initial_lr=0.02,
        momentum=0.9,
        anneal_steps=(560,),
        tasks_per_batch=2,
        seed=seed,
    )
    train(model, dataset, train_split, config, embeddings)
    rep = evaluate(
        model, dataset, test_split, EpisodeConfig(5, k_shot, 1), 150, 20, seed + 1000, embeddings
    )
    return rep


@pytest.fixture(scope="module")
def benchmark(request):
    t0 = time.time()
    results = {}
    for seed in BENCHMARK_SEEDS:
        dataset, tr, te, embs = benchmark_data(seed)
        row = {}
        for k in (1, 5, 10):
            rep = benchmark_run(dataset, tr, te, embs, k, seed)
            row[f"am3@{k}"] = rep.mean_accuracy
            row[f"lambda@{k}"] = rep.lambda_mean
        for k in (1, 5):
            row[f"control@{k}"] = benchmark_run(dataset, tr, te, embs, k, seed, 1.0).mean_accuracy
        # Eq.7-style fixed mixture at 1-shot: lambda = K/(K+1) = 0.5
        row["alignment@1"] = benchmark_run(dataset, tr, te, embs, 1, seed, 0.5).mean_accuracy
        results[seed] = row
    results["elapsed"] = time.time() - t0
    return results


# ---------------------------------------------------------------------------
# criteria


class TestCriterion1GradientFidelity:
    def test_gradients_match_finite_differences_on_toy_episodes(self):
        t0 = time.time()
        rng = np.random.default_rng(2024)
        checked = 0
        attempts = 0
        worst = 0.0
        while checked < 20:
            attempts += 1
            assert attempts < 200, "could not assemble 20 kink-free toy episodes"
            model = CrossModalModel(
                ModelConfig(
                    visual_dim=4, semantic_dim=4, embed_dim=3, encoder_hidden=(5,),
                    transform_hidden=6, mixer_hidden=4, dropout_keep=1.0,
                    seed=int(rng.integers(1 << 30)),
                )
            )
            support = rng.normal(size=(2, 4))
            query = rng.normal(size=(4, 4))
            episode = Episode(
                category_ids=(0, 1),
                support_x=support,
                support_y=np.array([0, 1]),
                query_x=query,
                query_y=np.array([0, 0, 1, 1]),
                support_rows=((0, 0), (1, 0)),
                query_rows=((0, 1), (0, 2), (1, 1), (1, 2)),
            )
            sem = rng.normal(size=(2, 4))
            table = EmbeddingTable(dimension=4)
            table.entries["cat000"] = sem[0]
            table.entries["cat001"] = sem[1]
            spec = SyntheticTaskSpec(2, 4, 4, 0.5, 2.0, 1.0, 3, seed=0)
            dataset, _ = generate_synthetic_crossmodal(spec)
            embs = LabelEmbeddings(dataset, table, seed=0)
            # Finite differences are undefined within the step of a ReLU kink;
            # the criterion excludes those points, so degenerate draws are skipped.
            if min_relu_preactivation(model, episode, embs.matrix((0, 1))) < 1e-4:
                continue
            loss = lambda: model.episode_loss(episode, embs)
            for param in model.parameters():
                worst = max(worst, fd_error_for_param(param, loss, step=1e-6))
            checked += 1
        elapsed = time.time() - t0
        report(
            "criterion 1: gradient fidelity on 20 toy episodes",
            worst < 1e-4 and elapsed < 10.0,
            f"max rel err {worst:.2e}, {elapsed:.1f}s",
        )


class TestCriterion2BackboneEquivalence:
    def test_lambda_one_equals_independent_prototypical_network(self):
        t0 = time.time()
        spec = SyntheticTaskSpec(12, 6, 6, 0.8, 3.0, 2.0, 12, seed=7)
        dataset, table = generate_synthetic_crossmodal(spec)
        embs = LabelEmbeddings(dataset, table, seed=7)
        model = CrossModalModel(
            ModelConfig(
                visual_dim=6, semantic_dim=6, embed_dim=5, encoder_hidden=(8,),
                transform_hidden=8, mixer_hidden=8, dropout_keep=1.0,
                lambda_fixed=1.0, seed=11,
            )
        )
        max_gap = 0.0
        argmax_matches = 0
        total = 0
        for episode in episode_stream(dataset, set(range(12)), EpisodeConfig(4, 2, 3), 99, 500):
            mine = model.evaluate_episode(episode, embs)
            ref = protonet_probabilities(
                model.encoder, episode.support_x, episode.support_y, episode.query_x
            )
            max_gap = max(max_gap, float(np.abs(mine.probabilities - ref).max()))
            argmax_matches += int(np.array_equal(mine.predictions, ref.argmax(axis=1)))
            total += 1
        elapsed = time.time() - t0
        report(
            "criterion 2: lambda=1 backbone equivalence over 500 episodes",
            max_gap < 1e-10 and argmax_matches == total and elapsed < 30.0,
            f"max prob gap {max_gap:.2e}, argmax {argmax_matches}/{total}, {elapsed:.1f}s",
        )


class TestCriterion3LossOracle:
    def test_episode_loss_matches_bruteforce_on_micro_episodes(self):
        rng = np.random.default_rng(5150)
        worst = 0.0
        cases = 0
        variants = [
            dict(mode=ConditioningMode.W),
            dict(mode=ConditioningMode.E),
            dict(mode=ConditioningMode.P),
            dict(mode=ConditioningMode.WQ),
            dict(mode=ConditioningMode.W, distance="euclid"),
            dict(mode=ConditioningMode.W, lambda_fixed=1.0),
            dict(mode=ConditioningMode.W, lambda_fixed=0.5),
            dict(mode=ConditioningMode.W, encoder_hidden=()),
            dict(mode=ConditioningMode.P, distance="euclid"),
            dict(mode=ConditioningMode.WQ, lambda_fixed=0.25),
        ]
        for index, overrides in enumerate(variants):
            n_way = 2 + index % 2
            k_shot = 1 + index % 2
            base = dict(
                visual_dim=3, semantic_dim=3, embed_dim=2, encoder_hidden=(4,),
                transform_hidden=4, mixer_hidden=3, dropout_keep=1.0, seed=100 + index,
            )
            base.update(overrides)
            model = CrossModalModel(ModelConfig(**base))
            episode = Episode(
                category_ids=tuple(range(n_way)),
                support_x=rng.normal(size=(n_way * k_shot, 3)),
                support_y=np.repeat(np.arange(n_way), k_shot),
                query_x=rng.normal(size=(n_way * 2, 3)),
                query_y=np.repeat(np.arange(n_way), 2),
                support_rows=tuple((c, i) for c in range(n_way) for i in range(k_shot)),
                query_rows=tuple((c, 50 + i) for c in range(n_way) for i in range(2)),
            )
            table = EmbeddingTable(dimension=3)
            for c in range(n_way):
                table.entries[f"cat{c:03d}"] = rng.normal(size=3)
            spec = SyntheticTaskSpec(n_way, 3, 3, 0.5, 2.0, 1.0, 3, seed=index)
            dataset, _ = generate_synthetic_crossmodal(spec)
            embs = LabelEmbeddings(dataset, table, seed=index)
            mine = model.episode_loss(episode, embs).item()
            ref = episode_loss_bruteforce(model, episode, embs.matrix(episode.category_ids))
            worst = max(worst, abs(mine - ref))
            cases += 1
        report(
            "criterion 3: loss equals brute-force evaluation on 10 micro-episodes",
            cases == 10 and worst < 1e-10,
            f"{cases} cases, max abs gap {worst:.2e}",
        )


class TestCriterion4BenchmarkGap:
    def test_adaptive_mixing_beats_visual_only_control(self, benchmark):
        gaps1 = [benchmark[s]["am3@1"] - benchmark[s]["control@1"] for s in BENCHMARK_SEEDS]
        gaps5 = [benchmark[s]["am3@5"] - benchmark[s]["control@5"] for s in BENCHMARK_SEEDS]
        mean_gap1 = float(np.mean(gaps1))
        mean_gap5 = float(np.mean(gaps5))
        elapsed = benchmark["elapsed"]
        report(
            "criterion 4: 1-shot gap >= 5 points and smaller 5-shot gap",
            mean_gap1 >= 0.05 and mean_gap5 < mean_gap1 and elapsed < 300.0,
            f"gap@1 {mean_gap1:.3f}, gap@5 {mean_gap5:.3f}, benchmark {elapsed:.0f}s",
        )


class TestCriterion5LambdaTrend:
    def test_lambda_mean_increases_with_shots(self, benchmark):
        hits = 0
        for seed in BENCHMARK_SEEDS:
            row = benchmark[seed]
            if row["lambda@1"] < row["lambda@5"] <= row["lambda@10"]:
                hits += 1
        report(
            "criterion 5: lambda(K=1) < lambda(K=5) <= lambda(K=10)",
            hits >= 4,
            f"{hits}/5 seeds",
        )


class TestCriterion6AlignmentOrdering:
    def test_fixed_alignment_lands_between_control_and_adaptive(self, benchmark):
        hits = 0
        for seed in BENCHMARK_SEEDS:
            row = benchmark[seed]
            if row["control@1"] < row["alignment@1"] < row["am3@1"]:
                hits += 1
        report(
            "criterion 6: control < fixed alignment < adaptive at 1-shot",
            hits >= 4,
            f"{hits}/5 seeds",
        )


class TestCriterion7EmbeddingRules:
    def test_multiword_fallback_and_caching(self):
        table = parse_embedding_file(
            ["golden 1.0 0.0 3.0", "retriever 0.0 2.0 1.0", "cat 5.0 5.0 5.0"]
        )
        ok = True
        detail = []

        averaged = resolve_label_embedding(CategoryLabel(("golden retriever",)), table)
        gap = float(np.abs(averaged - np.array([0.5, 1.0, 2.0])).max())
        ok &= gap < 1e-12
        detail.append(f"multi-word avg gap {gap:.1e}")

        second = resolve_label_embedding(CategoryLabel(("golden unicorn", "cat")), table)
        ok &= bool(np.array_equal(second, table.entries["cat"]))

        oov = CategoryLabel(("zzqx qq",))
        a = resolve_label_embedding(oov, table, seed=3)
        b = resolve_label_embedding(oov, table, seed=3)
        inside = bool(np.all(a > -1.0) and np.all(a < 1.0))
        cached = bool(np.array_equal(a, b))
        ok &= inside and cached
        detail.append(f"fallback inside (-1,1): {inside}, repeatable: {cached}")
        report("criterion 7: label-embedding resolution rules", ok, "; ".join(detail))


class TestCriterion8Statistics:
    def test_ci95_harmonic_and_chance_level(self):
        rng = np.random.default_rng(77)
        values = list(rng.uniform(0.4, 0.9, size=31))
        mean, half = mean_ci95(values)
        my_half = 1.96 * float(np.std(values, ddof=1)) / math.sqrt(len(values))
        ci_ok = abs(my_half - half) < 1e-12

        h_ok = all(
            abs(harmonic_accuracy(s, u) - (0.0 if s + u == 0 else 2 * s * u / (s + u))) < 1e-12
            for s, u in [(0.0, 0.0), (0.25, 0.75), (1.0, 1.0), (0.5, 1.0)]
        )

        spec = SyntheticTaskSpec(10, 8, 8, 1.0, 0.0, 0.0, 30, seed=13)
        dataset, table = generate_synthetic_crossmodal(spec)
        embs = LabelEmbeddings(dataset, table, seed=13)
        model = CrossModalModel(
            ModelConfig(visual_dim=8, semantic_dim=8, embed_dim=8, encoder_hidden=(16,),
                        transform_hidden=16, mixer_hidden=8, dropout_keep=1.0, seed=21)
        )
        rep = evaluate(
            model, dataset, set(range(10)), EpisodeConfig(5, 1, 1), 500, 20, 3, embs
        )
        chance_ok = 0.15 <= rep.mean_accuracy <= 0.25
        report(
            "criterion 8: ci95/harmonic oracles and chance-level evaluation",
            ci_ok and h_ok and chance_ok,
            f"ci_ok={ci_ok}, harmonic_ok={h_ok}, chance acc {rep.mean_accuracy:.3f}",
        )


class TestCriterion9Determinism:
    def test_cli_train_eval_twice_is_byte_identical(self, tmp_path, capsys):
        data_dir = tmp_path / "data"
        code = cli_main([
            "synth-gen", "--out-dir", str(data_dir), "--seed", "4",
            "--categories", "15", "--visual-dim", "8", "--semantic-dim", "8",
            "--visual-spread", "0.7", "--visual-separation", "3.0",
            "--semantic-separation", "3.0", "--samples-per-category", "20",
        ])
        assert code == 0
        capsys.readouterr()
        checkpoints, evals = [], []
        for name in ("r1", "r2"):
            run_dir = tmp_path / name
            code = cli_main([
                "train", "--dataset", str(data_dir / "dataset"),
                "--embeddings", str(data_dir / "embeddings.txt"),
                "--out-dir", str(run_dir), "--seed", "8", "--iterations", "50",
                "--lr", "0.02", "--n-way", "3", "--k-shot", "1", "--k-query", "3",
                "--embed-dim", "8", "--encoder-hidden", "8", "--transform-hidden", "8",
                "--mixer-hidden", "8", "--dropout-keep", "0.8",
            ])
            assert code == 0
            capsys.readouterr()
            code = cli_main([
                "eval", "--checkpoint", str(run_dir / "checkpoint.json"),
                "--dataset", str(data_dir / "dataset"),
                "--embeddings", str(data_dir / "embeddings.txt"),
                "--episodes", "25", "--queries-per-episode", "6", "--n-way", "3",
                "--seed", "6", "--out-dir", str(run_dir),
            ])
            assert code == 0
            capsys.readouterr()
            checkpoints.append((run_dir / "checkpoint.json").read_bytes())
            evals.append((run_dir / "eval.csv").read_bytes())
            trace = (run_dir / "loss_trace.csv").read_bytes()
            if name == "r1":
                first_trace = trace
        same = checkpoints[0] == checkpoints[1] and evals[0] == evals[1] and first_trace == (
            tmp_path / "r2" / "loss_trace.csv"
        ).read_bytes()
        report(
            "criterion 9: byte-identical checkpoints and CSVs across reruns",
            same,
        )
