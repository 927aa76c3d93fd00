"""Task-embedding subsystem: language vectors, frame subsampling, the
human-analog augmentation, paired batches, the joint objective, retrieval."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deskbot import nn, policy as policy_mod
from deskbot.embeddings import (
    EmbeddingError,
    EncoderDataset,
    ObsLayout,
    RobotDemo,
    TaskEmbedding,
    TrajectoryClip,
    apply_analog_transform,
    augment_human_analog,
    average_task_embedding,
    build_encoder_dataset,
    clip_from_episode,
    encode_backward,
    encode_batch,
    encode_clip,
    encoder_loss,
    encoder_preactivation_margin,
    export_embedding_table,
    init_encoder,
    language_embedding,
    load_embedding_table,
    load_encoder,
    one_hot_embedding,
    retrieval_accuracy,
    sample_encoder_batch,
    save_encoder,
    subsample_frames,
    train_encoder,
)
from deskbot.sim import collect_expert_dataset, load_tasks

OBS_DIM = 34  # default roster: 4 gripper fields + 6 objects * 3 + 4 zones * 3


@pytest.fixture(scope="module")
def demo_world():
    roster, tasks = load_tasks(None)
    by_id = {t.task_id: t for t in tasks}
    picked = [by_id["place-apple-tray"], by_id["grasp-pepper"], by_id["push-sponge"]]
    episodes = collect_expert_dataset(roster, picked, 3, seed0=500)
    layout = ObsLayout(n_objects=len(roster.object_ids), n_zones=len(roster.zone_ids))
    commands = {t.task_id: t.command for t in picked}
    return roster, picked, episodes, layout, commands


@pytest.fixture(scope="module")
def demo_dataset(demo_world):
    _, _, episodes, layout, commands = demo_world
    return build_encoder_dataset(episodes, commands, layout, dim=16, seed=7)


def random_frames(n, dim=OBS_DIM, seed=0):
    rng = nn.rng_stream(seed, "frames")
    return [rng.normal(size=dim) for _ in range(n)]


# --------------------------------------------------------------------------
# Language and one-hot embeddings
# --------------------------------------------------------------------------

class TestLanguageEmbedding:
    def test_deterministic_and_unit_norm(self):
        a = language_embedding("place the apple in the tray", dim=32, seed=7)
        b = language_embedding("place the apple in the tray", dim=32, seed=7)
        assert np.array_equal(a.vec, b.vec)
        assert a.provenance == "language"
        assert abs(np.linalg.norm(a.vec) - 1.0) <= 1e-9

    def test_seed_changes_vectors(self):
        a = language_embedding("wipe the tray", seed=7)
        b = language_embedding("wipe the tray", seed=8)
        assert not np.allclose(a.vec, b.vec)

    def test_shared_tokens_raise_similarity(self):
        base = language_embedding("place the apple in the tray", dim=64)
        near = language_embedding("place the banana in the tray", dim=64)
        far = language_embedding("wipe counters now", dim=64)
        assert float(base.vec @ near.vec) > float(base.vec @ far.vec)

    def test_empty_command_rejected(self):
        with pytest.raises(EmbeddingError):
            language_embedding("   ")

    def test_token_order_irrelevant_for_sum(self):
        a = language_embedding("apple tray", dim=16)
        b = language_embedding("tray apple", dim=16)
        assert np.allclose(a.vec, b.vec)


class TestOneHot:
    def test_basic(self):
        ids = ["t-a", "t-b", "t-c"]
        emb = one_hot_embedding("t-b", ids, dim=8)
        expect = np.zeros(8)
        expect[1] = 1.0
        assert np.array_equal(emb.vec, expect)
        assert emb.provenance == "one-hot"

    def test_errors(self):
        with pytest.raises(EmbeddingError):
            one_hot_embedding("nope", ["a"], dim=4)
        with pytest.raises(EmbeddingError):
            one_hot_embedding("a", ["a", "b", "c"], dim=2)


# --------------------------------------------------------------------------
# Subsampling
# --------------------------------------------------------------------------

class TestSubsample:
    def test_two_frame_clip_pads_with_last(self):
        f = random_frames(2, dim=6)
        out = subsample_frames(f, k=20)
        assert out.shape == (20, 6)
        assert np.array_equal(out[0], f[0])
        for row in out[1:]:
            assert np.array_equal(row, f[1])

    def test_exact_length_passthrough(self):
        f = random_frames(20, dim=4)
        out = subsample_frames(f, k=20)
        assert np.array_equal(out, np.asarray(f))

    def test_inference_stride_100_frames(self):
        # Independent oracle: floor(k * 99 / 19 + 0.5), computed by hand.
        expect = [0, 5, 10, 16, 21, 26, 31, 36, 42, 47,
                  52, 57, 63, 68, 73, 78, 83, 89, 94, 99]
        frames = [np.full(3, float(i)) for i in range(100)]
        out = subsample_frames(frames, k=20, mode="inference")
        assert [int(row[0]) for row in out] == expect

    def test_training_mode_keeps_ends_and_sorts(self):
        frames = [np.full(2, float(i)) for i in range(50)]
        rng = nn.rng_stream(3, "sub")
        out = subsample_frames(frames, k=20, mode="train", rng=rng)
        picked = [int(row[0]) for row in out]
        assert picked[0] == 0 and picked[-1] == 49
        interior = picked[1:-1]
        assert interior == sorted(interior)
        assert len(set(interior)) == 18
        assert all(1 <= i <= 48 for i in interior)

    def test_training_mode_varies_with_rng(self):
        frames = [np.full(1, float(i)) for i in range(80)]
        a = subsample_frames(frames, k=10, mode="train", rng=nn.rng_stream(1, "s"))
        b = subsample_frames(frames, k=10, mode="train", rng=nn.rng_stream(2, "s"))
        assert not np.array_equal(a, b)

    def test_too_short_rejected(self):
        with pytest.raises(EmbeddingError):
            subsample_frames([np.zeros(4)], k=20)

    def test_train_mode_needs_rng(self):
        with pytest.raises(EmbeddingError):
            subsample_frames(random_frames(40), k=20, mode="train")

    @given(st.integers(min_value=2, max_value=90), st.integers(min_value=0, max_value=50))
    @settings(max_examples=40, deadline=None)
    def test_ends_always_kept(self, length, seed):
        frames = [np.full(1, float(i)) for i in range(length)]
        out = subsample_frames(frames, k=20, mode="inference")
        assert out.shape[0] == 20
        assert int(out[0][0]) == 0
        if length >= 20:
            assert int(out[-1][0]) == length - 1
        else:
            assert int(out[-1][0]) == length - 1  # pad repeats the last frame


# --------------------------------------------------------------------------
# Human-analog augmentation
# --------------------------------------------------------------------------

def tiny_layout():
    return ObsLayout(n_objects=1, n_zones=1)  # obs dim 10


class TestAugment:
    def test_reflect_x_is_involution(self):
        layout = tiny_layout()
        frames = tuple(random_frames(4, dim=layout.dim, seed=11))
        zero = np.zeros(layout.dim)
        once = apply_analog_transform(frames, layout, True, False, zero)
        twice = apply_analog_transform(once, layout, True, False, zero)
        for orig, back in zip(frames, twice):
            assert np.allclose(orig, back, atol=1e-12)

    def test_reflect_y_is_involution(self):
        layout = tiny_layout()
        frames = tuple(random_frames(3, dim=layout.dim, seed=12))
        zero = np.zeros(layout.dim)
        twice = apply_analog_transform(
            apply_analog_transform(frames, layout, False, True, zero),
            layout, False, True, zero)
        for orig, back in zip(frames, twice):
            assert np.allclose(orig, back, atol=1e-12)

    def test_reflect_x_moves_x_coordinates_only(self):
        layout = tiny_layout()
        frame = np.arange(layout.dim, dtype=float) / layout.dim
        out = apply_analog_transform((frame, frame), layout, True, False,
                                     np.zeros(layout.dim))[0]
        for i in layout.x_indices:
            assert out[i] == pytest.approx(1.0 - frame[i])
        for i in layout.y_indices:
            assert out[i] == frame[i]
        assert out[3] == frame[3]  # aperture untouched

    def test_offsets_identical_across_frames(self):
        # The aperture and presence channels are never reflected, so the
        # applied offset shows up directly there; one transform per clip
        # means that offset is exactly constant across frames.
        layout = tiny_layout()
        frames = tuple(random_frames(6, dim=layout.dim, seed=13))
        clip = TrajectoryClip(frames=frames, modality="robot", task_id="t")
        rng = nn.rng_stream(4, "aug")
        aug = augment_human_analog(clip, rng, layout, noise_sigma=0.01)
        assert aug.modality == "human-analog"
        assert aug.task_id == "t"
        diffs = [np.asarray(a) - np.asarray(o) for a, o in zip(aug.frames, frames)]
        for channel in (3, 6):  # aperture, object-presence
            vals = [d[channel] for d in diffs]
            # one shared offset vector; only float reconstruction error varies
            assert max(vals) - min(vals) < 1e-12
            assert abs(vals[0]) > 1e-6  # noise actually applied

    def test_sigma_zero_no_reflect_is_identity(self):
        layout = tiny_layout()
        frames = tuple(random_frames(3, dim=layout.dim, seed=14))
        out = apply_analog_transform(frames, layout, False, False, np.zeros(layout.dim))
        for a, b in zip(frames, out):
            assert np.array_equal(np.asarray(a), b)

    def test_requires_robot_modality(self):
        layout = tiny_layout()
        clip = TrajectoryClip(frames=tuple(random_frames(2, dim=layout.dim)),
                              modality="human-analog", task_id="t")
        with pytest.raises(EmbeddingError):
            augment_human_analog(clip, nn.rng_stream(0, "a"), layout)

    def test_transform_distribution_covers_reflections(self):
        layout = tiny_layout()
        frames = tuple(random_frames(2, dim=layout.dim, seed=15))
        clip = TrajectoryClip(frames=frames, modality="robot", task_id="t")
        rng = nn.rng_stream(9, "many")
        flipped_x = 0
        for _ in range(200):
            aug = augment_human_analog(clip, rng, layout, noise_sigma=0.0)
            if not np.isclose(aug.frames[0][0], frames[0][0]):
                flipped_x += 1
        assert 60 <= flipped_x <= 140  # fair coin over 200 draws


# --------------------------------------------------------------------------
# Clips and validation
# --------------------------------------------------------------------------

class TestClipTypes:
    def test_clip_needs_two_frames(self):
        with pytest.raises(EmbeddingError):
            TrajectoryClip(frames=(np.zeros(4),), modality="robot", task_id="t")

    def test_bad_modality(self):
        with pytest.raises(EmbeddingError):
            TrajectoryClip(frames=tuple(random_frames(2)), modality="video", task_id="t")

    def test_embedding_must_be_unit(self):
        with pytest.raises(EmbeddingError):
            TaskEmbedding(vec=np.ones(4), provenance="language")

    def test_clip_from_episode(self, demo_world):
        _, _, episodes, _, _ = demo_world
        clip = clip_from_episode(episodes[0])
        assert clip.modality == "robot"
        assert clip.task_id == episodes[0].task_id
        assert len(clip.frames) == len(episodes[0].frames)


# --------------------------------------------------------------------------
# Encoder forward/backward
# --------------------------------------------------------------------------

class TestEncoder:
    def test_output_unit_norm(self):
        rng = nn.rng_stream(0, "enc")
        enc = init_encoder(rng, obs_dim=6, frames_k=5, dim=8, hidden=(12,))
        x = nn.rng_stream(1, "x").normal(size=(7, 30))
        z, _ = encode_batch(enc, x)
        assert z.shape == (7, 8)
        assert np.allclose(np.linalg.norm(z, axis=1), 1.0, atol=1e-9)

    def test_layer_shapes(self):
        enc = init_encoder(nn.rng_stream(0, "e"), obs_dim=6, frames_k=5, dim=8,
                           hidden=(12, 10))
        dims = [(l.in_dim, l.out_dim, l.activation) for l in enc.layers]
        assert dims == [(30, 12, "relu"), (12, 10, "relu"),
                        (10, 32, "relu"), (32, 8, "identity")]

    def test_input_width_checked(self):
        enc = init_encoder(nn.rng_stream(0, "e"), obs_dim=6, frames_k=5, dim=8)
        with pytest.raises(nn.NumericError):
            encode_batch(enc, np.zeros((2, 29)))

    def test_gradient_matches_finite_differences(self):
        for attempt in range(10):
            rng = nn.rng_stream(20 + attempt, "gc-enc")
            enc = init_encoder(rng, obs_dim=4, frames_k=3, dim=5, hidden=(8,))
            x = rng.normal(size=(2, 12))
            if encoder_preactivation_margin(enc, x) > 1e-4:
                break
        else:
            pytest.fail("could not find a kink-free sample")
        target = nn.l2_normalize(rng.normal(size=(2, 5)))

        def loss_fn():
            z, cache = encode_batch(enc, x)
            loss = float(np.sum((z - target) ** 2))
            grads, _ = encode_backward(enc, 2.0 * (z - target), cache)
            return loss, grads

        worst = nn.grad_check(loss_fn, enc.params(), max_coords_per_param=6,
                              rng=nn.rng_stream(0, "pick"))
        assert worst < 1e-4

    def test_encode_clip_deterministic(self):
        enc = init_encoder(nn.rng_stream(1, "e"), obs_dim=6, frames_k=4, dim=8)
        clip = TrajectoryClip(frames=tuple(random_frames(11, dim=6, seed=3)),
                              modality="robot", task_id="t")
        a = encode_clip(enc, clip)
        b = encode_clip(enc, clip)
        assert np.array_equal(a.vec, b.vec)
        assert a.provenance == "trajectory"


class TestAveraging:
    def test_matches_direct_sum(self):
        enc = init_encoder(nn.rng_stream(2, "e"), obs_dim=6, frames_k=4, dim=8)
        clips = [TrajectoryClip(frames=tuple(random_frames(9, dim=6, seed=s)),
                                modality="robot", task_id="t") for s in range(5)]
        avg = average_task_embedding(enc, clips)
        manual = nn.l2_normalize(sum(encode_clip(enc, c).vec for c in clips))
        assert np.allclose(avg.vec, manual, atol=1e-12)
        assert avg.provenance == "averaged"
        assert abs(np.linalg.norm(avg.vec) - 1.0) <= 1e-9

    def test_empty_rejected(self):
        enc = init_encoder(nn.rng_stream(2, "e"), obs_dim=6, frames_k=4, dim=8)
        with pytest.raises(EmbeddingError):
            average_task_embedding(enc, [])


# --------------------------------------------------------------------------
# Dataset + batch sampling
# --------------------------------------------------------------------------

class TestDatasetAndSampling:
    def test_build_groups_by_task(self, demo_dataset):
        ds = demo_dataset
        assert ds.task_ids == sorted(ds.task_ids)
        assert set(ds.task_ids) == {"grasp-pepper", "place-apple-tray", "push-sponge"}
        for tid in ds.task_ids:
            assert len(ds.robot[tid]) == 3
            assert len(ds.human[tid]) == 3
            assert all(d.labels for d in ds.robot[tid])
            assert all(c.modality == "human-analog" for c in ds.human[tid])
            assert abs(np.linalg.norm(ds.lang[tid].vec) - 1.0) <= 1e-9

    def test_paired_batch_structure(self, demo_dataset):
        rng = nn.rng_stream(5, "batch")
        triples = sample_encoder_batch(demo_dataset, 8, rng)
        assert len(triples) == 8
        for tr in triples:
            assert tr.human_clip.modality == "human-analog"
            assert tr.robot_demo.clip.modality == "robot"
            assert tr.human_clip.task_id == tr.robot_demo.clip.task_id
            assert tr.lang is demo_dataset.lang[tr.human_clip.task_id]

    def test_task_counts_binomial(self, demo_dataset):
        rng = nn.rng_stream(6, "binom")
        counts = {tid: 0 for tid in demo_dataset.task_ids}
        draws = 3000
        for _ in range(draws // 5):
            for tr in sample_encoder_batch(demo_dataset, 5, rng):
                counts[tr.human_clip.task_id] += 1
        expect = draws / 3
        for tid, c in counts.items():
            assert abs(c - expect) < 150, (tid, c)

    def test_uniform_scheme_tracks_clip_counts(self, demo_dataset):
        ds = demo_dataset
        skew = EncoderDataset(
            task_ids=ds.task_ids, lang=ds.lang, robot=ds.robot,
            human={tid: list(ds.human[tid]) * (9 if i == 0 else 1)
                   for i, tid in enumerate(ds.task_ids)})
        rng = nn.rng_stream(7, "skew")
        counts = {tid: 0 for tid in ds.task_ids}
        for _ in range(400):
            for tr in sample_encoder_batch(skew, 5, rng, scheme="uniform-clips"):
                counts[tr.human_clip.task_id] += 1
        heavy = counts[ds.task_ids[0]]
        light = sum(counts[t] for t in ds.task_ids[1:])
        # pool is 27:3:3, so the heavy task should take roughly 27/33 of draws
        assert heavy > 3 * light / 2

    def test_missing_demos_rejected(self, demo_dataset):
        ds = demo_dataset
        broken = EncoderDataset(task_ids=ds.task_ids, lang=ds.lang,
                                robot={**ds.robot, ds.task_ids[0]: []},
                                human=ds.human)
        with pytest.raises(EmbeddingError):
            broken.validate()
        with pytest.raises(EmbeddingError):
            sample_encoder_batch(broken, 50, nn.rng_stream(0, "x"))

    def test_bad_scheme(self, demo_dataset):
        with pytest.raises(EmbeddingError):
            sample_encoder_batch(demo_dataset, 2, nn.rng_stream(0, "x"), scheme="nope")


# --------------------------------------------------------------------------
# Joint objective
# --------------------------------------------------------------------------

def small_policy(z_dim=16):
    return policy_mod.init_policy(nn.rng_stream(3, "pol"), obs_dim=OBS_DIM,
                                  z_dim=z_dim, torso_widths=(16, 16),
                                  head_widths=(8,), horizon=10)


def small_encoder(dim=16, hidden=(24,), seed=4):
    return init_encoder(nn.rng_stream(seed, "enc"), obs_dim=OBS_DIM,
                        frames_k=20, dim=dim, hidden=hidden)


class TestEncoderLoss:
    def test_cosine_terms_match_direct_computation(self, demo_dataset):
        enc = small_encoder()
        pol = small_policy()
        triples = sample_encoder_batch(demo_dataset, 4, nn.rng_stream(8, "b"))
        loss, _, _ = encoder_loss(triples, enc, pol, nn.rng_stream(9, "l"),
                                  bc_weight=0.0, subsample_mode="inference")
        manual = 0.0
        for tr in triples:
            z_h = encode_clip(enc, tr.human_clip).vec
            z_e = encode_clip(enc, tr.robot_demo.clip).vec
            manual += nn.cosine_distance(z_h, tr.lang.vec)
            manual += nn.cosine_distance(z_e, tr.lang.vec)
        assert loss == pytest.approx(manual / 4, rel=1e-12)

    def test_full_loss_at_least_cosine_terms(self, demo_dataset):
        enc = small_encoder()
        pol = small_policy()
        triples = sample_encoder_batch(demo_dataset, 4, nn.rng_stream(10, "b"))
        cos_only, _, _ = encoder_loss(triples, enc, pol, nn.rng_stream(11, "l"),
                                      bc_weight=0.0, subsample_mode="inference")
        full, _, _ = encoder_loss(triples, enc, pol, nn.rng_stream(11, "l"),
                                  bc_weight=1.0, subsample_mode="inference")
        assert full >= cos_only

    def test_permutation_invariant(self, demo_dataset):
        enc = small_encoder()
        pol = small_policy()
        triples = sample_encoder_batch(demo_dataset, 6, nn.rng_stream(12, "b"))
        a, _, _ = encoder_loss(triples, enc, pol, nn.rng_stream(0, "l"),
                               bc_weight=0.0, subsample_mode="inference")
        b, _, _ = encoder_loss(triples[::-1], enc, pol, nn.rng_stream(0, "l"),
                               bc_weight=0.0, subsample_mode="inference")
        assert a == pytest.approx(b, rel=1e-12)

    def test_grads_reach_both_networks(self, demo_dataset):
        enc = small_encoder()
        pol = small_policy()
        triples = sample_encoder_batch(demo_dataset, 3, nn.rng_stream(13, "b"))
        _, enc_grads, pol_grads = encoder_loss(triples, enc, pol,
                                               nn.rng_stream(14, "l"))
        assert any(np.any(g != 0) for g in enc_grads.values())
        assert any(np.any(g != 0) for g in pol_grads.values())
        assert set(enc_grads) == set(enc.params())
        assert set(pol_grads) == set(pol.params())

    def test_dim_mismatch_rejected(self, demo_dataset):
        enc = small_encoder(dim=16)
        pol = small_policy(z_dim=8)
        triples = sample_encoder_batch(demo_dataset, 2, nn.rng_stream(15, "b"))
        with pytest.raises(nn.NumericError):
            encoder_loss(triples, enc, pol, nn.rng_stream(0, "l"))

    def test_gradient_matches_finite_differences(self, demo_dataset):
        from deskbot.embeddings import EncoderTriple
        for attempt in range(12):
            enc = small_encoder(dim=8, hidden=(10,), seed=30 + attempt)
            pol = policy_mod.init_policy(nn.rng_stream(40 + attempt, "pol"),
                                         obs_dim=OBS_DIM, z_dim=8,
                                         torso_widths=(8,), head_widths=(8,),
                                         horizon=10)
            raw = sample_encoder_batch(demo_dataset, 2,
                                       nn.rng_stream(50 + attempt, "b"))
            # the module-scope dataset embeds language at dim 16; re-key the
            # language vectors at this test's dim 8
            triples = [EncoderTriple(
                human_clip=tr.human_clip, robot_demo=tr.robot_demo,
                lang=language_embedding(tr.human_clip.task_id, dim=8))
                for tr in raw]

            def lg():
                rng = nn.rng_stream(60, "labels")
                loss, enc_grads, pol_grads = encoder_loss(
                    triples, enc, pol, rng, subsample_mode="inference")
                merged = dict(enc_grads)
                merged.update({f"pol.{k}": v for k, v in pol_grads.items()})
                return loss, merged

            xs = np.asarray([np.concatenate([np.asarray(f) for f in
                                             subsample_frames(tr.human_clip.frames, 20)])
                             for tr in triples])
            margin = encoder_preactivation_margin(enc, xs)
            rng = nn.rng_stream(60, "labels")
            labels = [tr.robot_demo.labels[rng.integers(len(tr.robot_demo.labels))]
                      for tr in triples]
            z_h, _ = encode_batch(enc, xs)
            pol_margin = min(policy_mod.preactivation_margin(
                pol, lab.obs.reshape(1, -1), z_h[i:i + 1])
                for i, lab in enumerate(labels))
            if margin > 1e-4 and pol_margin > 1e-4:
                break
        else:
            pytest.fail("could not find a kink-free configuration")

        params = dict(enc.params())
        params.update({f"pol.{k}": v for k, v in pol.params().items()})
        worst = nn.grad_check(lg, params, max_coords_per_param=3,
                              rng=nn.rng_stream(70, "pick"))
        assert worst < 1e-4


class TestTrainEncoder:
    def test_loss_decreases(self, demo_dataset):
        enc = small_encoder()
        pol = small_policy()
        trace = train_encoder(demo_dataset, enc, pol, steps=150, batch_size=4,
                              rng=nn.rng_stream(16, "train"), lr=3e-3,
                              bc_weight=0.0)
        head = float(np.mean(trace[:10]))
        tail = float(np.mean(trace[-10:]))
        assert tail < 0.5 * head

    def test_uniform_scheme_runs(self, demo_dataset):
        enc = small_encoder()
        pol = small_policy()
        trace = train_encoder(demo_dataset, enc, pol, steps=5, batch_size=4,
                              rng=nn.rng_stream(17, "train"), scheme="uniform-clips")
        assert len(trace) == 5
        assert all(np.isfinite(v) for v in trace)


# --------------------------------------------------------------------------
# Retrieval
# --------------------------------------------------------------------------

class TestRetrieval:
    def test_matches_brute_force_oracle(self, demo_dataset):
        enc = small_encoder()
        clips = [d.clip for tid in demo_dataset.task_ids
                 for d in demo_dataset.robot[tid]]
        got = retrieval_accuracy(enc, clips, demo_dataset.lang)

        ids = sorted(demo_dataset.lang)
        hits = 0
        for clip in clips:
            z = encode_clip(enc, clip).vec
            best_id, best_sim = None, -np.inf
            for tid in ids:
                sim = float(demo_dataset.lang[tid].vec @ z)
                if sim > best_sim:
                    best_id, best_sim = tid, sim
            hits += best_id == clip.task_id
        assert got == pytest.approx(hits / len(clips), abs=1e-12)

    def test_tie_breaks_to_lowest_task_id(self):
        enc = init_encoder(nn.rng_stream(5, "e"), obs_dim=6, frames_k=4, dim=8)
        v = nn.l2_normalize(nn.rng_stream(6, "v").normal(size=8))
        lang = {"task-a": TaskEmbedding(vec=v, provenance="language"),
                "task-b": TaskEmbedding(vec=v.copy(), provenance="language")}
        clip_a = TrajectoryClip(frames=tuple(random_frames(5, dim=6, seed=1)),
                                modality="robot", task_id="task-a")
        clip_b = TrajectoryClip(frames=tuple(random_frames(5, dim=6, seed=2)),
                                modality="robot", task_id="task-b")
        # identical language vectors tie every clip; the lower id always wins
        assert retrieval_accuracy(enc, [clip_a], lang) == 1.0
        assert retrieval_accuracy(enc, [clip_b], lang) == 0.0

    def test_needs_two_tasks(self):
        enc = init_encoder(nn.rng_stream(5, "e"), obs_dim=6, frames_k=4, dim=8)
        with pytest.raises(EmbeddingError):
            retrieval_accuracy(enc, [], {"only": one_hot_embedding("only", ["only"], 8)})


# --------------------------------------------------------------------------
# Exports
# --------------------------------------------------------------------------

class TestExports:
    def test_embedding_table_round_trip(self, tmp_path):
        table = {
            "t-1": language_embedding("wipe the tray", dim=8),
            "t-2": one_hot_embedding("t-2", ["t-1", "t-2"], dim=8),
        }
        path = tmp_path / "table.json"
        export_embedding_table(str(path), table)
        back = load_embedding_table(str(path))
        assert set(back) == {"t-1", "t-2"}
        for tid in table:
            assert np.allclose(back[tid].vec, table[tid].vec, atol=1e-8)
            assert back[tid].provenance == table[tid].provenance

    def test_table_rejects_wrong_format(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"format": "other/1", "embeddings": {}}')
        with pytest.raises(EmbeddingError):
            load_embedding_table(str(path))

    def test_encoder_checkpoint_round_trip(self, tmp_path):
        enc = small_encoder(dim=8, hidden=(10,))
        path = tmp_path / "enc.ckpt"
        save_encoder(str(path), enc, extra_meta={"note": "test"})
        back = load_encoder(str(path))
        for name, p in enc.params().items():
            assert np.array_equal(back.params()[name], p)
        x = nn.rng_stream(8, "x").normal(size=(3, enc.in_dim))
        za, _ = encode_batch(enc, x)
        zb, _ = encode_batch(back, x)
        assert np.array_equal(za, zb)

    def test_encoder_loader_rejects_other_kinds(self, tmp_path):
        path = tmp_path / "pol.ckpt"
        nn.save_checkpoint(str(path), {"w": np.zeros(2)}, {"kind": "policy"})
        with pytest.raises(nn.NumericError):
            load_encoder(str(path))
