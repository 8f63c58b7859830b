//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, resume_unwind};
use std::time::Instant;

use ndarray::IxDyn;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use unqa_core::audio::{audio_feature, init_audio_params, AudioConfig};
use unqa_core::autograd::{Arr, Graph};
use unqa_core::config::{DataSource, PhaseConfig, RunConfig, Strategy};
use unqa_core::data::{
    generate_synthetic_database, split_database, Distortion, GeomConfig, MelConfig, Modality,
    SynthConfig,
};
use unqa_core::eval::{evaluate, repeat_seeds};
use unqa_core::model::{forward, forward_graph, ModelConfig, ModelState};
use unqa_core::objectives::{
    combined_loss, combined_loss_graph, rank_loss, rank_with_ties, srcc_exact, srcc_loss,
    srcc_soft_loss_graph, SrccMode, DEFAULT_SRCC_TAU,
};
use unqa_core::params::{derive_seed, Bound, ParamInit, ParamSet};
use unqa_core::schedule::build_schedule;
use unqa_core::spatial::{init_spatial_params, spatial_feature_from_input, BackboneConfig};
use unqa_core::train::{
    load_databases, run_full_pipeline, run_step1, run_step2, run_step3, MetricsLog, TrainContext,
};

fn criterion(n: usize, name: &str, f: impl FnOnce() + std::panic::UnwindSafe) {
    let result = catch_unwind(f);
    match &result {
        Ok(()) => println!("ACCEPTANCE {n} [{name}]: PASS"),
        Err(_) => println!("ACCEPTANCE {n} [{name}]: FAIL"),
    }
    if let Err(e) = result {
        resume_unwind(e);
    }
}

// ---- criterion 1: loss oracles ----

/// Independent double-loop oracle for the pairwise rank loss.
fn rank_loss_oracle(o: &[f64], s: &[f64]) -> f64 {
    let b = o.len();
    let mut total = 0.0;
    for i in 0..b {
        for j in 0..b {
            let e = if s[i] >= s[j] { 1.0 } else { -1.0 };
            let term = (s[i] - s[j]).abs() - e * (o[i] - o[j]);
            if term > 0.0 {
                total += term;
            }
        }
    }
    total / (b * b) as f64
}

/// Count-based tie-averaged ranks: rank_i = #less + (#equal + 1) / 2.
fn ranks_oracle(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            let less = v.iter().filter(|&&y| y < x).count() as f64;
            let equal = v.iter().filter(|&&y| y == x).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

/// Rank + covariance oracle for SRCC.
fn srcc_oracle(o: &[f64], s: &[f64]) -> f64 {
    let ro = ranks_oracle(o);
    let rs = ranks_oracle(s);
    let n = ro.len() as f64;
    let mo = ro.iter().sum::<f64>() / n;
    let ms = rs.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vo = 0.0;
    let mut vs = 0.0;
    for (a, b) in ro.iter().zip(&rs) {
        cov += (a - mo) * (b - ms);
        vo += (a - mo) * (a - mo);
        vs += (b - ms) * (b - ms);
    }
    if vo == 0.0 || vs == 0.0 {
        return 0.0;
    }
    cov / (vo.sqrt() * vs.sqrt())
}

/// Random batch with ties (values quantized to one decimal).
fn tied_batch(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<f64>) {
    let o: Vec<f64> = (0..n)
        .map(|_| (rng.gen_range(0.0..5.0f64) * 10.0).round() / 10.0)
        .collect();
    let s: Vec<f64> = (0..n)
        .map(|_| (rng.gen_range(1.0..5.0f64) * 10.0).round() / 10.0)
        .collect();
    (o, s)
}

#[test]
fn criterion_1_loss_oracles() {
    criterion(1, "loss oracles", || {
        let t0 = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for _ in 0..1000 {
            let n = rng.gen_range(1..=64);
            let (o, s) = tied_batch(&mut rng, n);
            let got = rank_loss(&o, &s).unwrap();
            let want = rank_loss_oracle(&o, &s);
            assert!(
                (got - want).abs() < 1e-12,
                "rank_loss {got} vs oracle {want}"
            );
        }
        let mut rng = ChaCha8Rng::seed_from_u64(202);
        for _ in 0..1000 {
            let n = rng.gen_range(2..=64);
            let (o, s) = tied_batch(&mut rng, n);
            let got = srcc_exact(&o, &s).unwrap();
            let want = srcc_oracle(&o, &s);
            assert!(
                (got - want).abs() < 1e-12,
                "srcc_exact {got} vs oracle {want}"
            );
        }
        assert!(t0.elapsed().as_secs() < 60, "took {:?}", t0.elapsed());
    });
}

// ---- criterion 2: worked-example fixtures ----

#[test]
fn criterion_2_worked_examples() {
    criterion(2, "worked examples", || {
        assert_eq!(rank_loss(&[0.2, 0.8], &[1.0, 0.0]).unwrap(), 0.8);
        let srcc = srcc_exact(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((srcc - 0.8660).abs() < 1e-4, "srcc {srcc}");
        assert_eq!(rank_with_ties(&[5.0, 5.0, 9.0]), vec![1.5, 1.5, 3.0]);
    });
}

// ---- criterion 3: gradient suite ----

const GRAD_RTOL: f64 = 1e-3;
const FD_EPS: f64 = 1e-5;

fn rel_close(analytic: f64, fd: f64) -> bool {
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-6) <= GRAD_RTOL
}

/// FD-check gradients of `eval` with respect to sampled entries of the
/// named parameters.
fn fd_check_params(
    params: &ParamSet,
    names: &[&str],
    entries_per_tensor: usize,
    analytic: &BTreeMap<String, Arr>,
    eval: impl Fn(&ParamSet) -> f64,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for &name in names {
        let base = params.get(name);
        let len = base.len();
        let grad = analytic
            .get(name)
            .unwrap_or_else(|| panic!("no analytic gradient for `{name}`"));
        for _ in 0..entries_per_tensor.min(len) {
            let k = rng.gen_range(0..len);
            let perturbed = |delta: f64| {
                let mut p = params.clone();
                let mut t = base.clone();
                *t.iter_mut().nth(k).unwrap() += delta;
                p.set(name, t);
                p
            };
            let fd = (eval(&perturbed(FD_EPS)) - eval(&perturbed(-FD_EPS))) / (2.0 * FD_EPS);
            let a = *grad.iter().nth(k).unwrap();
            assert!(
                rel_close(a, fd),
                "{name}[{k}]: analytic {a} vs fd {fd}"
            );
        }
    }
}

#[test]
fn criterion_3_gradient_suite() {
    criterion(3, "gradient suite", || {
        let t0 = Instant::now();

        // Losses with respect to predictions.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let b = 6;
        let o: Vec<f64> = (0..b).map(|_| rng.gen_range(0.0..5.0)).collect();
        let s: Vec<f64> = (0..b).map(|_| rng.gen_range(1.0..5.0)).collect();

        let g = Graph::new();
        let ov = g.leaf(Arr::from_shape_vec(IxDyn(&[b]), o.clone()).unwrap());
        let loss = combined_loss_graph(&g, ov, &s);
        let grads = g.backward(loss);
        let go = grads[ov.0].as_ref().unwrap().clone();
        for k in 0..b {
            let mut op = o.clone();
            op[k] += FD_EPS;
            let mut om = o.clone();
            om[k] -= FD_EPS;
            let fd = (combined_loss(&op, &s).unwrap() - combined_loss(&om, &s).unwrap())
                / (2.0 * FD_EPS);
            assert!(
                rel_close(go[[k]], fd),
                "combined[{k}]: {} vs {fd}",
                go[[k]]
            );
        }

        let g = Graph::new();
        let ov = g.leaf(Arr::from_shape_vec(IxDyn(&[b]), o.clone()).unwrap());
        let loss = srcc_soft_loss_graph(&g, ov, &s, DEFAULT_SRCC_TAU).unwrap();
        let grads = g.backward(loss);
        let go = grads[ov.0].as_ref().unwrap().clone();
        for k in 0..b {
            let mut op = o.clone();
            op[k] += FD_EPS;
            let mut om = o.clone();
            om[k] -= FD_EPS;
            let fd = (srcc_loss(&op, &s, SrccMode::Soft, DEFAULT_SRCC_TAU).unwrap()
                - srcc_loss(&om, &s, SrccMode::Soft, DEFAULT_SRCC_TAU).unwrap())
                / (2.0 * FD_EPS);
            assert!(rel_close(go[[k]], fd), "srcc_soft[{k}]: {} vs {fd}", go[[k]]);
        }

        // MHSA fusion block (via the full spatial branch on one frame),
        // with a non-zero residual projection so attention matters.
        let cfg = BackboneConfig {
            stage_channels: vec![3, 4],
            stage_strides: vec![2, 2],
            mhsa_heads: 2,
            mhsa_embed: 4,
            ..BackboneConfig::default()
        };
        let mut params = ParamSet::new();
        init_spatial_params(&mut params, &cfg, &mut ParamInit::new(32));
        params.set(
            "spatial.fuse.conv_out.w",
            ParamInit::new(33).uniform(&[cfg.fused_channels(), cfg.mhsa_embed], cfg.mhsa_embed),
        );
        let input = {
            let mut r = ChaCha8Rng::seed_from_u64(34);
            Arr::from_shape_fn(IxDyn(&[1, 3, 8, 8]), |_| r.gen_range(0.0..1.0))
        };
        let eval_spatial = |p: &ParamSet| -> f64 {
            let g = Graph::new();
            let bound = Bound::bind(&g, p);
            let feat =
                spatial_feature_from_input(&bound, &cfg, g.leaf(input.clone())).unwrap();
            g.scalar_value(g.sum_all(feat))
        };
        let g = Graph::new();
        let bound = Bound::bind(&g, &params);
        let feat = spatial_feature_from_input(&bound, &cfg, g.leaf(input.clone())).unwrap();
        let scalar = g.sum_all(feat);
        let analytic = bound.gradients(&g.backward(scalar));
        fd_check_params(
            &params,
            &[
                "spatial.fuse.conv_in.w",
                "spatial.fuse.head0.wq",
                "spatial.fuse.head1.wk",
                "spatial.fuse.head0.wv",
                "spatial.fuse.wo.w",
                "spatial.fuse.conv_out.w",
                "spatial.stage0.w",
            ],
            3,
            &analytic,
            eval_spatial,
        );

        // Audio branch end to end.
        let acfg = AudioConfig {
            d_a: 8,
            conv_channels: vec![2, 3],
            attn_heads: 2,
            max_segments: 32,
        };
        let mel = MelConfig::default();
        let mut aparams = ParamSet::new();
        init_audio_params(&mut aparams, &acfg, &mel, &mut ParamInit::new(35));
        aparams.set(
            "audio.attn.wo.w",
            ParamInit::new(36).uniform(&[acfg.d_a, acfg.d_a], acfg.d_a),
        );
        let wave = ndarray::Array1::from_shape_fn(6400, |i| {
            (2.0 * std::f64::consts::PI * 330.0 * i as f64 / 16000.0).sin() * 0.5
        });
        let eval_audio = |p: &ParamSet| -> f64 {
            let g = Graph::new();
            let bound = Bound::bind(&g, p);
            let feat = audio_feature(&bound, &acfg, &mel, &wave, 16000.0).unwrap();
            g.scalar_value(g.sum_all(feat))
        };
        let g = Graph::new();
        let bound = Bound::bind(&g, &aparams);
        let feat = audio_feature(&bound, &acfg, &mel, &wave, 16000.0).unwrap();
        let scalar = g.sum_all(feat);
        let analytic = bound.gradients(&g.backward(scalar));
        fd_check_params(
            &aparams,
            &[
                "audio.conv0.w",
                "audio.proj.w",
                "audio.posenc",
                "audio.attn.head0.wq",
                "audio.attn.wo.w",
                "audio.pool.w",
            ],
            3,
            &analytic,
            eval_audio,
        );

        // Full A/V forward pass.
        let model = tiny_model();
        let spec = unqa_core::data::DatabaseSpec {
            name: "g_av".into(),
            modality: Modality::Av,
            mos_range: unqa_core::data::MosRange { lo: 1.0, hi: 5.0 },
            n_samples: 10,
            steps_per_epoch: 1,
        };
        let state = ModelState::init_step1(model, &[spec], 37).unwrap();
        let db = generate_synthetic_database(
            Modality::Av,
            10,
            &desk_synth("g_av"),
            38,
        )
        .unwrap();
        let sample = db.samples[0].clone();
        let eval_av = |p: &ParamSet| -> f64 {
            let mut st = state.clone();
            st.params = p.clone();
            forward(&st, &sample, None, None).unwrap()
        };
        let g = Graph::new();
        let bound = Bound::bind(&g, &state.params);
        let score = forward_graph(&bound, &state, &sample, None, None).unwrap();
        let analytic = bound.gradients(&g.backward(score));
        fd_check_params(
            &state.params,
            &[
                "spatial.stage0.w",
                "spatial.fuse.conv_in.w",
                "audio.proj.w",
                "audio.pool.w",
                "head.db.g_av.l1.w",
                "head.db.g_av.l2.w",
            ],
            3,
            &analytic,
            eval_av,
        );

        assert!(t0.elapsed().as_secs() < 300, "took {:?}", t0.elapsed());
    });
}

// ---- criterion 4: schedule exactness ----

#[test]
fn criterion_4_schedule_exactness() {
    criterion(4, "schedule exactness", || {
        let spec = |name: &str, m: Modality, steps: usize| unqa_core::data::DatabaseSpec {
            name: name.into(),
            modality: m,
            mos_range: unqa_core::data::MosRange { lo: 1.0, hi: 5.0 },
            n_samples: 40,
            steps_per_epoch: steps,
        };
        let specs = vec![
            spec("aqa", Modality::Audio, 2),
            spec("db2", Modality::Image, 4),
            spec("db3", Modality::Video, 6),
        ];
        let mut train = BTreeMap::new();
        for s in &specs {
            train.insert(
                s.name.clone(),
                (0..28).map(|i| format!("{}_{i:03}", s.name)).collect::<Vec<_>>(),
            );
        }
        for epoch in 0..100 {
            let sched = build_schedule(&specs, &train, 4, 4, 909, epoch).unwrap();
            let c = sched.counts();
            assert_eq!((c["aqa"], c["db2"], c["db3"]), (8, 4, 6), "epoch {epoch}");
        }
        let sched = build_schedule(&specs, &train, 4, 1, 909, 0).unwrap();
        assert_eq!(
            sched.draws.len(),
            specs.iter().map(|s| s.steps_per_epoch).sum::<usize>()
        );
    });
}

// ---- shared desk-scale configuration ----

fn tiny_model() -> ModelConfig {
    ModelConfig {
        backbone: BackboneConfig {
            stage_channels: vec![4, 8],
            stage_strides: vec![2, 2],
            mhsa_heads: 2,
            mhsa_embed: 8,
            ..BackboneConfig::default()
        },
        motion: unqa_core::motion::MotionConfig {
            d_m: 16,
            channels: vec![4],
            seed: 7,
        },
        audio: unqa_core::audio::AudioConfig {
            d_a: 16,
            conv_channels: vec![2, 4],
            attn_heads: 2,
            max_segments: 64,
        },
        geom: GeomConfig {
            resize_short: 16,
            crop: 16,
            motion_size: 8,
        },
        ..ModelConfig::default()
    }
}

fn desk_synth(name: &str) -> SynthConfig {
    let mut synth = SynthConfig::named(name, vec![Distortion::Noise]);
    synth.mos_noise_frac = 0.0;
    synth.image_size = 16;
    synth.video_frames = 4;
    synth.frame_rate = 4.0;
    synth.audio_seconds = 0.3;
    synth
}

fn desk_source(name: &str, m: Modality, n: usize, seed: u64) -> DataSource {
    DataSource::Synthetic {
        modality: m,
        n_samples: n,
        seed,
        config: desk_synth(name),
    }
}

fn desk_phases(seed: u64, databases: Vec<DataSource>, epochs: (usize, usize, usize)) -> RunConfig {
    let pc = |e| PhaseConfig {
        epochs: e,
        learning_rate: 3e-3,
        batch_size: 8,
        audio_repeat_factor: 4,
    };
    RunConfig {
        seed,
        model: tiny_model(),
        databases,
        step1: pc(epochs.0),
        step2: pc(epochs.1),
        step3: pc(epochs.2),
        repeats: 1,
        fit_logistic: false,
        strategy: Strategy::Full,
    }
}

// ---- criterion 5: phase laws ----

#[test]
fn criterion_5_phase_laws() {
    criterion(5, "phase laws", || {
        let config = desk_phases(
            5,
            vec![
                desk_source("p_img", Modality::Image, 12, 1),
                desk_source("p_aud", Modality::Audio, 12, 2),
                desk_source("p_vid", Modality::Video, 12, 3),
            ],
            (1, 1, 1),
        );
        let registry = load_databases(&config).unwrap();
        let specs: Vec<_> = registry.databases().map(|d| d.spec.clone()).collect();
        let init = ModelState::init_step1(config.model.clone(), &specs, 1).unwrap();
        let motion0 = init.motion.checksum();
        let ctx = TrainContext::new(registry, &init, config.seed).unwrap();
        let mut log = MetricsLog::in_memory();

        let s1 = run_step1(init, &ctx, &config, &mut log).unwrap();
        assert_eq!(s1.heads.len(), 3); // M database-specific heads
        assert_eq!(s1.motion.checksum(), motion0);

        let s2 = run_step2(s1, &ctx, &config, &mut log).unwrap();
        assert_eq!(s2.heads.len(), 4); // modality-specific from step 2 on
        assert_eq!(s2.motion.checksum(), motion0);

        let spatial2 = s2.params.checksum_prefix("spatial.");
        let audio2 = s2.params.checksum_prefix("audio.");
        let s3 = run_step3(s2, &ctx, &config, &mut log).unwrap();
        assert_eq!(s3.heads.len(), 4);
        assert_eq!(s3.params.checksum_prefix("spatial."), spatial2);
        assert_eq!(s3.params.checksum_prefix("audio."), audio2);
        assert_eq!(s3.motion.checksum(), motion0);
    });
}

// ---- criterion 6: end-to-end scale invariance ----

#[test]
fn criterion_6_scale_invariance() {
    criterion(6, "scale invariance", || {
        let config = desk_phases(
            6,
            vec![
                desk_source("s_img", Modality::Image, 20, 1),
                desk_source("s_aud", Modality::Audio, 20, 2),
            ],
            (2, 2, 2),
        );

        let finish = |rescale: bool| -> (String, BTreeMap<String, f64>) {
            let mut registry = load_databases(&config).unwrap();
            let specs: Vec<_> = registry.databases().map(|d| d.spec.clone()).collect();
            let init = ModelState::init_step1(
                config.model.clone(),
                &specs,
                derive_seed(config.seed, "init"),
            )
            .unwrap();
            let ctx = TrainContext::new(registry.clone(), &init, config.seed).unwrap();
            let mut log = MetricsLog::in_memory();
            let s1 = run_step1(init, &ctx, &config, &mut log).unwrap();

            if rescale {
                registry.get_mut("s_img").unwrap().rescale_mos(3.0, 7.0);
            }
            let ctx = TrainContext::new(registry.clone(), &s1, config.seed).unwrap();
            let s2 = run_step2(s1, &ctx, &config, &mut log).unwrap();
            let s3 = run_step3(s2, &ctx, &config, &mut log).unwrap();

            let mut test_srcc = BTreeMap::new();
            for db in registry.databases() {
                let split = split_database(db, config.seed).unwrap();
                let mut preds = Vec::new();
                let mut mos = Vec::new();
                for id in &split.test {
                    let sample = db.sample(id).unwrap();
                    preds.push(forward(&s3, sample, Some(&ctx.motion_cache), None).unwrap());
                    mos.push(sample.mos);
                }
                test_srcc.insert(db.spec.name.clone(), srcc_exact(&preds, &mos).unwrap());
            }
            (s3.params.checksum(), test_srcc)
        };

        let (ck_a, srcc_a) = finish(false);
        let (ck_b, srcc_b) = finish(true);
        assert_eq!(ck_a, ck_b, "final checkpoints differ under MOS rescale");
        assert_eq!(srcc_a, srcc_b, "test SRCC differs under MOS rescale");
    });
}

// ---- criterion 7: desk-scale learning ----

#[test]
fn criterion_7_desk_scale_learning() {
    criterion(7, "desk-scale learning", || {
        let t0 = Instant::now();
        let mut per_db: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for run_seed in [0u64, 1, 2] {
            let config = desk_phases(
                run_seed,
                vec![
                    desk_source("d_img", Modality::Image, 200, 11),
                    desk_source("d_aud", Modality::Audio, 200, 12),
                    desk_source("d_vid", Modality::Video, 200, 13),
                    desk_source("d_av", Modality::Av, 200, 14),
                ],
                (20, 10, 10),
            );
            let dir = tempfile::tempdir().unwrap();
            let state = run_full_pipeline(&config, dir.path()).unwrap();
            let registry = load_databases(&config).unwrap();
            let report = evaluate(&state, &config, &registry, &[run_seed]).unwrap();
            for (db, m) in &report.means {
                per_db.entry(db.clone()).or_default().push(m.srcc);
            }
        }
        for (db, srccs) in &per_db {
            let mean = srccs.iter().sum::<f64>() / srccs.len() as f64;
            println!("  desk-scale {db}: per-seed {srccs:?}, mean {mean:.4}");
            assert!(mean >= 0.90, "{db} mean SRCC {mean:.4} < 0.90");
        }
        assert!(
            t0.elapsed().as_secs() < 1800,
            "took {:?}",
            t0.elapsed()
        );
    });
}

// ---- criterion 8: joint-vs-single comparison ----

#[test]
fn criterion_8_joint_vs_single() {
    criterion(8, "joint vs single", || {
        let mut wins = 0;
        for run_seed in [0u64, 1, 2] {
            let small = desk_source("j_small", Modality::Image, 50, 21);
            let joint_cfg = desk_phases(
                run_seed,
                vec![
                    small.clone(),
                    desk_source("j_aud", Modality::Audio, 200, 22),
                    desk_source("j_vid", Modality::Video, 200, 23),
                    desk_source("j_av", Modality::Av, 200, 24),
                ],
                (10, 5, 5),
            );
            let single_cfg = desk_phases(run_seed, vec![small.clone()], (10, 5, 5));

            let eval_small = |config: &RunConfig| -> unqa_core::eval::EvalReport {
                let dir = tempfile::tempdir().unwrap();
                let state = run_full_pipeline(config, dir.path()).unwrap();
                let registry = load_databases(config).unwrap();
                evaluate(&state, config, &registry, &[run_seed]).unwrap()
            };
            let joint = eval_small(&joint_cfg);
            let single = eval_small(&single_cfg);
            let js = joint.means["j_small"].srcc;
            let ss = single.means["j_small"].srcc;
            println!(
                "  seed {run_seed}: joint {js:.4} vs single {ss:.4}\n{}",
                unqa_core::report::render_comparison_table("joint", &joint, "single", &single)
            );
            if js >= ss {
                wins += 1;
            }
        }
        println!("  joint ≥ single in {wins} of 3 seeds");
        assert!(wins >= 2, "joint won only {wins} of 3 seeds");
    });
}

// ---- criterion 9: protocol conformance ----

#[test]
fn criterion_9_protocol_conformance() {
    criterion(9, "protocol conformance", || {
        // 10 repeat rows per database + a mean row, with default repeats.
        let config = {
            let mut c = desk_phases(
                9,
                vec![
                    desk_source("c_img", Modality::Image, 20, 1),
                    desk_source("c_aud", Modality::Audio, 20, 2),
                ],
                (1, 1, 1),
            );
            c.repeats = 10;
            c
        };
        let registry = load_databases(&config).unwrap();
        let specs: Vec<_> = registry.databases().map(|d| d.spec.clone()).collect();
        let state = ModelState::init_step1(config.model.clone(), &specs, 1).unwrap();
        let seeds = repeat_seeds(&config);
        assert_eq!(seeds.len(), 10);
        let report = evaluate(&state, &config, &registry, &seeds).unwrap();
        for db in ["c_img", "c_aud"] {
            let rows = report.rows.iter().filter(|r| r.database == db).count();
            assert_eq!(rows, 10, "{db} rows");
            assert!(report.means.contains_key(db));
        }
        // Means are arithmetic over the repeat rows.
        for (db, m) in &report.means {
            let mean: f64 = report
                .rows
                .iter()
                .filter(|r| &r.database == db)
                .map(|r| r.metrics.srcc)
                .sum::<f64>()
                / 10.0;
            assert!((m.srcc - mean).abs() < 1e-12);
        }

        // Split rounding rule for n ∈ {10, 100, 101}.
        for (n, want) in [(10, (7, 1, 2)), (100, (70, 10, 20)), (101, (71, 10, 20))] {
            let db = generate_synthetic_database(
                Modality::Image,
                n,
                &desk_synth("c_split"),
                3,
            )
            .unwrap();
            assert_eq!(split_database(&db, 1).unwrap().sizes(), want, "n={n}");
        }
    });
}
