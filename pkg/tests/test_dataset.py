import threading

import numpy as np
import pytest

from splateval.dataset import (
    BatchElement,
    DatasetError,
    EpisodeDataset,
    MixtureSpec,
    StepData,
    mixed_sampler,
    mixture_stats,
)


def make_steps(rng, n, with_images=False):
    steps = []
    for k in range(n):
        images = {}
        if with_images:
            images["cam"] = (rng.uniform(0, 1, (8, 8, 3)) * 255).astype(np.uint8)
        steps.append(StepData(action=rng.uniform(-1, 1, 8), proprio=rng.uniform(-1, 1, 8), images=images))
    return steps


@pytest.fixture
def datasets(tmp_path, rng):
    pre = EpisodeDataset(tmp_path / "pre", source="pretrain")
    sim = EpisodeDataset(tmp_path / "sim", source="sim")
    for k in range(3):
        pre.write_episode(make_steps(rng, 20 + k), instruction=f"pre task {k}")
    for k in range(4):
        sim.write_episode(make_steps(rng, 10 + k), instruction=f"sim task {k}")
    return pre, sim


class TestEpisodeStore:
    def test_round_trip(self, tmp_path, rng):
        ds = EpisodeDataset(tmp_path / "ds", source="sim")
        steps = make_steps(rng, 50, with_images=True)
        ep_id = ds.write_episode(steps, instruction="move it")
        back = ds.read_episode(ep_id)
        assert len(back) == 50
        for orig, rt in zip(steps, back):
            assert np.array_equal(orig.action, rt.action)
            assert np.array_equal(orig.proprio, rt.proprio)
            assert set(rt.image_refs) == {"cam"}
            img = ds.load_image(rt.image_refs["cam"])
            assert np.array_equal(img, orig.images["cam"])

    def test_zero_step_rejected(self, tmp_path):
        ds = EpisodeDataset(tmp_path / "ds")
        with pytest.raises(DatasetError):
            ds.write_episode([], instruction="empty")

    def test_dimension_mismatch_rejected(self, tmp_path, rng):
        ds = EpisodeDataset(tmp_path / "ds")
        steps = make_steps(rng, 3)
        steps[1] = StepData(action=np.zeros(5), proprio=steps[1].proprio)
        with pytest.raises(DatasetError, match="dimensions"):
            ds.write_episode(steps)

    def test_concurrent_writers(self, tmp_path, rng):
        ds = EpisodeDataset(tmp_path / "ds")
        seeds = [np.random.default_rng(i) for i in range(8)]
        errors = []

        def work(r):
            try:
                ds.write_episode(make_steps(r, 5))
            except Exception as exc:  # noqa: BLE001 (collect for assertion)
                errors.append(exc)

        threads = [threading.Thread(target=work, args=(r,)) for r in seeds]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert not errors
        metas = ds.episodes()
        assert len(metas) == 8
        assert len({m.episode_id for m in metas}) == 8
        for m in metas:
            assert len(ds.read_episode(m.episode_id)) == 5

    def test_missing_blob_detected(self, tmp_path, rng):
        ds = EpisodeDataset(tmp_path / "ds")
        ep_id = ds.write_episode(make_steps(rng, 2, with_images=True))
        for blob in (ds.root / "blobs").iterdir():
            blob.unlink()
        with pytest.raises(DatasetError, match="blob"):
            ds.read_episode(ep_id)


class TestMixedSampler:
    def test_lambda_zero_all_pretrain(self, datasets):
        pre, sim = datasets
        stream = mixed_sampler(pre, sim, MixtureSpec(0.0, 16, seed=1))
        stats = mixture_stats(stream, 200)
        assert stats.source_counts.get("sim", 0) == 0
        assert stats.source_counts["pretrain"] == 200

    def test_lambda_one_all_sim(self, datasets):
        pre, sim = datasets
        stream = mixed_sampler(pre, sim, MixtureSpec(1.0, 16, seed=1))
        stats = mixture_stats(stream, 200)
        assert stats.source_counts.get("pretrain", 0) == 0

    def test_determinism(self, datasets):
        pre, sim = datasets
        a = [el for _ in range(5) for el in next(mixed_sampler(pre, sim, MixtureSpec(0.3, 8, seed=42)))]
        b = [el for _ in range(5) for el in next(mixed_sampler(pre, sim, MixtureSpec(0.3, 8, seed=42)))]
        assert a[:8] == b[:8]
        s1 = mixed_sampler(pre, sim, MixtureSpec(0.3, 8, seed=42))
        s2 = mixed_sampler(pre, sim, MixtureSpec(0.3, 8, seed=42))
        for _ in range(10):
            assert next(s1) == next(s2)

    def test_empty_source_errors(self, tmp_path, datasets):
        pre, sim = datasets
        empty = EpisodeDataset(tmp_path / "empty", source="sim")
        with pytest.raises(DatasetError):
            mixed_sampler(pre, empty, MixtureSpec(0.5, 4, seed=0))
        with pytest.raises(DatasetError):
            mixed_sampler(empty, sim, MixtureSpec(0.5, 4, seed=0))  # empty as pretrain

    def test_source_tags_match_dataset(self, datasets):
        pre, sim = datasets
        sim_ids = {m.episode_id for m in sim.episodes()}
        pre_ids = {m.episode_id for m in pre.episodes()}
        stream = mixed_sampler(pre, sim, MixtureSpec(0.5, 32, seed=9))
        for _ in range(20):
            for el in next(stream):
                ids = sim_ids if el.source == "sim" else pre_ids
                assert el.episode_id in ids

    def test_binomial_concentration(self, datasets):
        pre, sim = datasets
        lam, n = 0.1, 100_000
        stream = mixed_sampler(pre, sim, MixtureSpec(lam, 500, seed=7))
        stats = mixture_stats(stream, n)
        sigma = np.sqrt(lam * (1 - lam) / n)
        assert abs(stats.sim_fraction - lam) <= 3 * sigma

    def test_within_source_uniform_over_steps(self, datasets):
        from scipy.stats import chisquare

        pre, sim = datasets
        stream = mixed_sampler(pre, sim, MixtureSpec(0.5, 1000, seed=3))
        stats = mixture_stats(stream, 100_000)
        sim_total = sum(m.steps for m in sim.episodes())
        counts, expect = [], []
        total_sim_drawn = stats.source_counts["sim"]
        for m in sim.episodes():
            counts.append(stats.episode_counts.get(("sim", m.episode_id), 0))
            expect.append(total_sim_drawn * m.steps / sim_total)
        res = chisquare(counts, expect)
        assert res.pvalue > 0.01
