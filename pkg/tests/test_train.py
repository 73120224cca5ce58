"""Training mechanics: logging, state, freeze masks, resume, discriminator."""

import copy

import numpy as np
import pytest
import torch

from adcsr import seeding
from adcsr.models.networks import Attention, build_network
from adcsr.train import (
    FeatureDiscriminator,
    LoRALinear,
    LossLog,
    Stage1Hyper,
    Stage2Hyper,
    TRAINABLE_PREFIXES,
    TrainError,
    generator_lr,
    loss_series,
    read_loss_log,
    run_stage1,
    run_stage2,
    stage1_config,
    stage2_partition,
    transplant_stage1_decoder,
)
from adcsr.train.stage1 import images_to_tensor, step_state_path
from adcsr.train.state import pack_adam, unpack_adam

from conftest import store_digest


class TestLossLog:
    def test_round_trip(self, tmp_path):
        p = tmp_path / "loss.csv"
        with LossLog(p) as log:
            log.record(0, "l1", 0.5)
            log.record(0, "total", 1.25)
            log.record(1, "l1", 0.25)
        rows = read_loss_log(p)
        assert rows == [(0, "l1", 0.5), (0, "total", 1.25), (1, "l1", 0.25)]
        assert loss_series(rows, "l1") == [(0, 0.5), (1, 0.25)]

    def test_append_keeps_rows_without_new_header(self, tmp_path):
        p = tmp_path / "loss.csv"
        with LossLog(p) as log:
            log.record(0, "l1", 1.0)
        with LossLog(p, append=True) as log:
            log.record(1, "l1", 0.5)
        assert p.read_text().count("step,loss_name,value") == 1
        assert read_loss_log(p) == [(0, "l1", 1.0), (1, "l1", 0.5)]

    def test_rejects_foreign_header(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("a,b\n1,2\n")
        with pytest.raises(TrainError, match="not a loss log"):
            read_loss_log(p)

    def test_rejects_malformed_row(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("step,loss_name,value\n0,l1\n")
        with pytest.raises(TrainError, match="malformed"):
            read_loss_log(p)


class TestAdamState:
    def test_pack_unpack_round_trip(self):
        lin = torch.nn.Linear(4, 3)
        named = list(lin.named_parameters())
        opt = torch.optim.Adam([p for _, p in named], lr=1e-3)
        out = lin(torch.rand(2, 4, generator=torch.Generator().manual_seed(1)))
        out.sum().backward()
        opt.step()

        from adcsr.models.store import WeightStore
        ws = WeightStore()
        pack_adam(opt, named, "opt", ws)

        lin2 = torch.nn.Linear(4, 3)
        named2 = list(lin2.named_parameters())
        opt2 = torch.optim.Adam([p for _, p in named2], lr=1e-3)
        unpack_adam(opt2, named2, "opt", ws)
        for (_, p1), (_, p2) in zip(named, named2):
            s1, s2 = opt.state[p1], opt2.state[p2]
            assert float(s1["step"]) == float(s2["step"])
            assert torch.equal(s1["exp_avg"], s2["exp_avg"])
            assert torch.equal(s1["exp_avg_sq"], s2["exp_avg_sq"])

    def test_unpack_missing_prefix_is_noop(self):
        lin = torch.nn.Linear(2, 2)
        named = list(lin.named_parameters())
        opt = torch.optim.Adam([p for _, p in named])
        from adcsr.models.store import WeightStore
        unpack_adam(opt, named, "absent", WeightStore())
        assert not opt.state


class TestHyperValidation:
    def test_stage1_rejects_bad_values(self):
        with pytest.raises(TrainError):
            Stage1Hyper(steps=0).validate()
        with pytest.raises(TrainError):
            Stage1Hyper(batch_size=0).validate()
        with pytest.raises(TrainError):
            Stage1Hyper(lr=0.0).validate()
        with pytest.raises(TrainError):
            Stage1Hyper(disc_lr=-1.0).validate()
        with pytest.raises(TrainError):
            Stage1Hyper(delay_fraction=1.5).validate()

    def test_stage2_rejects_bad_values(self):
        with pytest.raises(TrainError):
            Stage2Hyper(steps=0).validate()
        with pytest.raises(TrainError):
            Stage2Hyper(g_lr=0.0).validate()
        with pytest.raises(TrainError):
            Stage2Hyper(lambda_adv=-0.5).validate()
        with pytest.raises(TrainError):
            Stage2Hyper(lora_rank=0).validate()

    def test_lambda_zero_is_valid(self):
        Stage2Hyper(lambda_adv=0.0).validate()


class TestGeneratorLrSchedule:
    def test_halves_at_midpoint(self):
        h = Stage2Hyper(steps=500, g_lr=1e-4)
        assert generator_lr(0, h) == 1e-4
        assert generator_lr(249, h) == 1e-4
        assert generator_lr(250, h) == 5e-5
        assert generator_lr(499, h) == 5e-5

    def test_odd_step_count_floors(self):
        h = Stage2Hyper(steps=7, g_lr=2e-4)
        assert generator_lr(2, h) == 2e-4
        assert generator_lr(3, h) == 1e-4


class TestImagesToTensor:
    def test_accepts_array(self):
        t = images_to_tensor(np.zeros((2, 3, 8, 8), dtype=np.float64))
        assert t.shape == (2, 3, 8, 8) and t.dtype == torch.float32

    def test_rejects_bad_shape(self):
        with pytest.raises(TrainError, match="expected"):
            images_to_tensor(np.zeros((2, 1, 8, 8)))


@pytest.fixture(scope="module")
def micro_disc(micro_teacher_net, micro_student_cfg):
    return FeatureDiscriminator(
        micro_teacher_net,
        feature_channels=micro_student_cfg.vae.decoder_channels[0],
        rank=4,
        seed=31,
    )


class TestFeatureDiscriminator:
    def test_trainable_set_is_first_conv_plus_lora_exactly(self, micro_disc):
        names = micro_disc.trainable_names()
        for n in names:
            assert n.startswith("backbone.conv_in.") or n.endswith((".down.weight", ".up.weight")), n
        assert len(names) == 2 + 2 * micro_disc.lora_count

    def test_lora_on_every_attention_projection(self, micro_disc):
        attn = [m for m in micro_disc.backbone.modules() if isinstance(m, Attention)]
        assert micro_disc.lora_count == 4 * len(attn)
        assert micro_disc.lora_count > 0
        for m in attn:
            for proj in ("to_q", "to_k", "to_v", "to_out"):
                assert isinstance(getattr(m, proj), LoRALinear)

    def test_lora_contributes_zero_at_init(self, micro_disc):
        # up-projections start at zero, so stripping every adapter back to
        # its base projection must not change a single output bit.
        f = torch.rand(2, micro_disc.first_conv.in_channels, 4, 4,
                       generator=torch.Generator().manual_seed(41))
        stripped = copy.deepcopy(micro_disc)
        for m in stripped.backbone.modules():
            if isinstance(m, Attention):
                for proj in ("to_q", "to_k", "to_v", "to_out"):
                    lora = getattr(m, proj)
                    if isinstance(lora, LoRALinear):
                        setattr(m, proj, lora.base)
        with torch.no_grad():
            assert torch.equal(micro_disc(f), stripped(f))

    def test_nonzero_up_changes_output(self, micro_disc):
        f = torch.rand(2, micro_disc.first_conv.in_channels, 4, 4,
                       generator=torch.Generator().manual_seed(42))
        bumped = copy.deepcopy(micro_disc)
        with torch.no_grad():
            ref = micro_disc(f)
            for m in bumped.modules():
                if isinstance(m, LoRALinear):
                    m.up.weight.fill_(0.05)
            assert not torch.equal(bumped(f), ref)

    def test_logit_grid_matches_input_grid(self, micro_disc):
        # Spatial dims must stay divisible by the backbone's downsample
        # factor; within that contract the logit grid mirrors the input.
        f = torch.rand(2, micro_disc.first_conv.in_channels, 6, 4,
                       generator=torch.Generator().manual_seed(43))
        with torch.no_grad():
            out = micro_disc(f)
        assert out.shape == (2, 1, 6, 4)

    def test_rejects_wrong_channel_count(self, micro_disc):
        bad = torch.rand(2, micro_disc.first_conv.in_channels + 1, 4, 4)
        with pytest.raises(TrainError, match="expects"):
            micro_disc(bad)

    def test_deterministic_in_seed(self, micro_teacher_net, micro_student_cfg):
        c = micro_student_cfg.vae.decoder_channels[0]
        a = FeatureDiscriminator(micro_teacher_net, c, rank=4, seed=7)
        b = FeatureDiscriminator(micro_teacher_net, c, rank=4, seed=7)
        f = torch.rand(2, c, 4, 4, generator=torch.Generator().manual_seed(44))
        with torch.no_grad():
            assert torch.equal(a(f), b(f))

    def test_bad_rank_rejected(self, micro_teacher_net, micro_student_cfg):
        with pytest.raises(TrainError, match="rank"):
            FeatureDiscriminator(micro_teacher_net, micro_student_cfg.vae.decoder_channels[0], rank=0)


class TestPartitionAndTransplant:
    def test_partition_covers_all_parameters(self, micro_student_cfg):
        student = build_network(micro_student_cfg, seed=3)
        trainable, frozen = stage2_partition(student)
        all_names = {n for n, _ in student.module.named_parameters()}
        assert set(trainable) | set(frozen) == all_names
        assert not set(trainable) & set(frozen)
        assert any(n.startswith("unet.") for n in trainable)
        assert any(n.startswith("bridge.") for n in trainable)
        assert any(n.startswith("decoder.mid_block1.") for n in trainable)
        assert all(n.startswith(TRAINABLE_PREFIXES) for n in trainable)

    def test_transplant_copies_everything_but_input_conv(self, micro_teacher_cfg, micro_student_cfg):
        stage1 = build_network(stage1_config(micro_teacher_cfg, 0.5), seed=4)
        student = build_network(micro_student_cfg, seed=5)
        src = stage1.module.decoder.state_dict()
        expect = sorted(n for n in src if not n.startswith("conv_in."))
        copied = transplant_stage1_decoder(student, stage1)
        assert copied == len(expect)
        dst = student.module.decoder.state_dict()
        for name in expect:
            assert torch.equal(dst[name], src[name]), name

    def test_transplant_rejects_width_mismatch(self, micro_teacher_cfg, micro_student_cfg):
        stage1_full = build_network(stage1_config(micro_teacher_cfg, 1.0), seed=4)
        student = build_network(micro_student_cfg, seed=5)
        with pytest.raises(TrainError, match="widths"):
            transplant_stage1_decoder(student, stage1_full)


@pytest.fixture(scope="module")
def stage1_setup(micro_teacher_cfg, micro_teacher_net, micro_pairs):
    _, hrs = micro_pairs
    cfg1 = stage1_config(micro_teacher_cfg, 0.5)
    hyper = Stage1Hyper(steps=6, batch_size=2, delay_fraction=0.5, seed=21)
    return cfg1, micro_teacher_net, hrs, hyper


class TestRunStage1:

    def test_encoder_frozen_and_decoder_trains(self, stage1_setup, tmp_path):
        cfg1, teacher, hrs, hyper = stage1_setup
        before = store_digest(teacher.weights())
        ws = run_stage1(cfg1, teacher, hrs, hyper, tmp_path / "log.csv")
        after_teacher = store_digest(teacher.weights())
        assert before == after_teacher
        # The returned store embeds the frozen encoder verbatim.
        enc_before = {k: v for k, v in before.items() if k.startswith("encoder.")}
        out_dig = store_digest(ws)
        for k, h in enc_before.items():
            assert out_dig[k] == h, k
        dec_names = [k for k in ws.keys() if k.startswith("decoder.")]
        assert dec_names

    def test_loss_log_contents(self, stage1_setup, tmp_path):
        cfg1, teacher, hrs, hyper = stage1_setup
        run_stage1(cfg1, teacher, hrs, hyper, tmp_path / "log.csv")
        rows = read_loss_log(tmp_path / "log.csv")
        names = {n for _, n, _ in rows}
        assert names == {"l1", "perceptual", "patch_adv", "total", "patch_disc"}
        assert [s for s, _ in loss_series(rows, "l1")] == list(range(6))
        # delay 0.5 of 6 steps: adversarial term joins at step 3
        adv = dict(loss_series(rows, "patch_adv"))
        assert adv[0] == 0.0 and adv[2] == 0.0
        assert adv[3] != 0.0 or adv[4] != 0.0

    def test_deterministic_logs(self, stage1_setup, tmp_path):
        cfg1, teacher, hrs, hyper = stage1_setup
        run_stage1(cfg1, teacher, hrs, hyper, tmp_path / "a.csv")
        run_stage1(cfg1, teacher, hrs, hyper, tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_resume_reproduces_straight_run(self, stage1_setup, tmp_path):
        cfg1, teacher, hrs, hyper = stage1_setup
        straight = run_stage1(cfg1, teacher, hrs, hyper, tmp_path / "full.csv")

        snap_hyper = Stage1Hyper(**{**hyper.__dict__, "save_every": 3})
        run_stage1(cfg1, teacher, hrs, snap_hyper, tmp_path / "snap.csv",
                   state_path=tmp_path / "state.ckpt")
        snap = step_state_path(tmp_path / "state.ckpt", 3)
        assert snap.exists()

        resumed = run_stage1(cfg1, teacher, hrs, snap_hyper, tmp_path / "resume.csv",
                             resume_from=snap)
        full_rows = read_loss_log(tmp_path / "full.csv")
        res_rows = read_loss_log(tmp_path / "resume.csv")
        tail = [r for r in full_rows if r[0] >= 3]
        assert res_rows == tail
        assert store_digest(resumed) == store_digest(straight)

    def test_resume_rejects_hyper_drift(self, stage1_setup, tmp_path):
        cfg1, teacher, hrs, hyper = stage1_setup
        snap_hyper = Stage1Hyper(**{**hyper.__dict__, "save_every": 3})
        run_stage1(cfg1, teacher, hrs, snap_hyper, tmp_path / "snap.csv",
                   state_path=tmp_path / "state.ckpt")
        snap = step_state_path(tmp_path / "state.ckpt", 3)
        drifted = Stage1Hyper(**{**hyper.__dict__, "lr": hyper.lr * 2})
        with pytest.raises(TrainError, match="differ"):
            run_stage1(cfg1, teacher, hrs, drifted, tmp_path / "x.csv", resume_from=snap)

    def test_rejects_indivisible_images(self, stage1_setup, tmp_path):
        cfg1, teacher, _, hyper = stage1_setup
        bad = np.zeros((4, 3, 30, 30), dtype=np.float32)
        with pytest.raises(TrainError, match="divisible"):
            run_stage1(cfg1, teacher, bad, hyper, tmp_path / "log.csv")

    def test_rejects_encoder_mismatch(self, micro_teacher_cfg, micro_pairs, tmp_path):
        from adcsr.presets import get_preset
        _, hrs = micro_pairs
        cfg1 = stage1_config(micro_teacher_cfg, 0.5)
        mini_teacher = build_network(get_preset("mini-teacher"), seed=1)
        with pytest.raises(TrainError, match="encoder"):
            run_stage1(cfg1, mini_teacher, hrs, Stage1Hyper(steps=1, batch_size=2), tmp_path / "log.csv")


@pytest.fixture(scope="module")
def stage2_setup(micro_teacher_cfg, micro_teacher_net, micro_pairs):
    lrs, hrs = micro_pairs
    stage1 = build_network(stage1_config(micro_teacher_cfg, 0.5),
                           seed=seeding.derive_seed(21, "stage1", "init"))
    stage1.module.encoder.load_state_dict(micro_teacher_net.module.encoder.state_dict())
    hyper = Stage2Hyper(steps=6, batch_size=2, seed=22)
    return micro_teacher_net, stage1, lrs, hrs, hyper


class TestRunStage2:

    def fresh_parts(self, micro_student_cfg, teacher, hyper):
        student = build_network(micro_student_cfg, seed=6)
        disc = FeatureDiscriminator(
            teacher, micro_student_cfg.vae.decoder_channels[0],
            rank=hyper.lora_rank, seed=23,
        )
        return student, disc

    def test_freeze_contract(self, stage2_setup, micro_student_cfg, tmp_path):
        teacher, stage1, lrs, hrs, hyper = stage2_setup
        student, disc = self.fresh_parts(micro_student_cfg, teacher, hyper)

        t_before = store_digest(teacher.weights())
        s1_before = store_digest(stage1.weights())
        run_stage2(student, teacher, stage1, disc, lrs, hrs, hyper, tmp_path / "log.csv")

        assert store_digest(teacher.weights()) == t_before
        assert store_digest(stage1.weights()) == s1_before

        # Student: transplant rewrites decoder weights before training, so
        # compare against the aligned state captured right after setup.
        student2, disc2 = self.fresh_parts(micro_student_cfg, teacher, hyper)
        transplant_stage1_decoder(student2, stage1)
        aligned = store_digest(student2.weights())
        final = store_digest(student.weights())
        trainable, frozen = stage2_partition(student)
        for name in frozen:
            assert final[name] == aligned[name], f"frozen {name} changed"
        for prefix in TRAINABLE_PREFIXES:
            group = [n for n in trainable if n.startswith(prefix)]
            assert group, prefix
            assert any(final[n] != aligned[n] for n in group), f"group {prefix} never trained"

        # Discriminator: frozen tensors must not move at all; the two
        # trainable groups must both move. LoRA down-projections can sit
        # still for a few steps (their gradient scales with the up weights,
        # which start at zero), so the check is per group, not per tensor.
        d_final = {n: p.detach().clone() for n, p in disc.named_parameters()}
        d_init = {n: p.detach().clone() for n, p in disc2.named_parameters()}
        train_names = set(disc.trainable_names())
        for name in d_final:
            if name not in train_names:
                assert torch.equal(d_final[name], d_init[name]), f"frozen {name} moved"
        conv_moved = [n for n in train_names if n.startswith("backbone.conv_in.")
                      and not torch.equal(d_final[n], d_init[n])]
        lora_moved = [n for n in train_names if n.endswith((".down.weight", ".up.weight"))
                      and not torch.equal(d_final[n], d_init[n])]
        assert conv_moved, "first-conv group never trained"
        assert lora_moved, "LoRA group never trained"
        up_names = [n for n in train_names if n.endswith(".up.weight")]
        assert all(not torch.equal(d_final[n], d_init[n]) for n in up_names), \
            "every LoRA up-projection should move from step 1"

    def test_loss_log_contents(self, stage2_setup, micro_student_cfg, tmp_path):
        teacher, stage1, lrs, hrs, hyper = stage2_setup
        student, disc = self.fresh_parts(micro_student_cfg, teacher, hyper)
        run_stage2(student, teacher, stage1, disc, lrs, hrs, hyper, tmp_path / "log.csv")
        rows = read_loss_log(tmp_path / "log.csv")
        assert {n for _, n, _ in rows} == {"distill", "adv_gen", "adv_disc", "total"}
        assert [s for s, _ in loss_series(rows, "distill")] == list(range(6))

    def test_lambda_zero_leaves_discriminator_untouched(self, stage2_setup, micro_student_cfg, tmp_path):
        teacher, stage1, lrs, hrs, hyper = stage2_setup
        h0 = Stage2Hyper(**{**hyper.__dict__, "lambda_adv": 0.0})
        student, disc = self.fresh_parts(micro_student_cfg, teacher, h0)
        d_init = {n: p.detach().clone() for n, p in disc.named_parameters()}
        run_stage2(student, teacher, stage1, disc, lrs, hrs, h0, tmp_path / "log.csv")
        for n, p in disc.named_parameters():
            assert torch.equal(p, d_init[n]), n
        rows = read_loss_log(tmp_path / "log.csv")
        assert all(v == 0.0 for _, v in loss_series(rows, "adv_gen"))
        assert all(v == 0.0 for _, v in loss_series(rows, "adv_disc"))
        assert len(loss_series(rows, "distill")) == 6

    def test_resume_reproduces_straight_run(self, stage2_setup, micro_student_cfg, tmp_path):
        teacher, stage1, lrs, hrs, hyper = stage2_setup
        student, disc = self.fresh_parts(micro_student_cfg, teacher, hyper)
        straight = run_stage2(student, teacher, stage1, disc, lrs, hrs, hyper, tmp_path / "full.csv")

        snap_hyper = Stage2Hyper(**{**hyper.__dict__, "save_every": 3})
        student_b, disc_b = self.fresh_parts(micro_student_cfg, teacher, snap_hyper)
        run_stage2(student_b, teacher, stage1, disc_b, lrs, hrs, snap_hyper, tmp_path / "snap.csv",
                   state_path=tmp_path / "state.ckpt")
        snap = step_state_path(tmp_path / "state.ckpt", 3)
        assert snap.exists()

        student_c, disc_c = self.fresh_parts(micro_student_cfg, teacher, snap_hyper)
        resumed = run_stage2(student_c, teacher, stage1, disc_c, lrs, hrs, snap_hyper,
                             tmp_path / "resume.csv", resume_from=snap)
        full_rows = read_loss_log(tmp_path / "full.csv")
        res_rows = read_loss_log(tmp_path / "resume.csv")
        assert res_rows == [r for r in full_rows if r[0] >= 3]
        assert store_digest(resumed) == store_digest(straight)

    def test_rejects_count_mismatch(self, stage2_setup, micro_student_cfg, tmp_path):
        teacher, stage1, lrs, hrs, hyper = stage2_setup
        student, disc = self.fresh_parts(micro_student_cfg, teacher, hyper)
        with pytest.raises(TrainError, match="LR vs"):
            run_stage2(student, teacher, stage1, disc, lrs[:4], hrs, hyper, tmp_path / "log.csv")

    def test_rejects_wrong_scale_pair(self, stage2_setup, micro_student_cfg, tmp_path):
        teacher, stage1, lrs, hrs, hyper = stage2_setup
        student, disc = self.fresh_parts(micro_student_cfg, teacher, hyper)
        with pytest.raises(TrainError, match="4x"):
            run_stage2(student, teacher, stage1, disc, hrs, hrs, hyper, tmp_path / "log.csv")
