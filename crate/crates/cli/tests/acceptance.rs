//! Acceptance criteria 1-8, one PASS/FAIL line each.
//!
//! Runs without the libtest harness so the verdict lines always reach the
//! output; exits nonzero when any criterion fails.

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use echovit::config::RunConfig;
use echovit::mae::{make_mask_plan, reconstruction_loss, ReconTarget};
use echovit::metrics::{compute_report, EvalPair};
use echovit::model::{
    decode_eaiw, dry_run, encode_eaiw, encoder_schema, finetune_schema, load_checkpoint_checked,
    patchify_indices, pretrain_schema, ModelConfig, ParamStore, TargetNorm,
};
use echovit::train::{
    cosine_lr, evaluate, finetune, finetune_grads, prepare_records, pretrain, pretrain_grads,
    sample_video, AdamW, AdamWConfig, Dataset, FinetuneInit, GradAccumulator, PreparedClip,
    PretrainItem, ScheduleConfig, TrainMode,
};
use echovit::video::{decode_eaiv, encode_eaiv, synthetic_corpus, write_synthetic_corpus, Split};
use echovit::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Pinned tolerances and budgets.
const GRAD_REL_TOL: f64 = 1e-3;
const GRAD_ABS_TOL: f64 = 1e-5;
const GRAD_BUDGET: Duration = Duration::from_secs(120);
const MASK_TRIPLES: usize = 1000;
const DRY_RUN_BUDGET: Duration = Duration::from_secs(60);
const PRETRAIN_CLIPS: usize = 20;
const PRETRAIN_ITERS: usize = 200;
const PRETRAIN_RATIO: f64 = 0.5;
const PRETRAIN_BUDGET: Duration = Duration::from_secs(300);
const FINETUNE_CLIPS: usize = 60;
const FINETUNE_ITERS: usize = 300;
const FINETUNE_MAE: f64 = 12.0;
const FINETUNE_MARGIN: f64 = 2.0;
const FINETUNE_BUDGET: Duration = Duration::from_secs(600);
const METRIC_SETS: usize = 1000;
const METRIC_TOL: f64 = 1e-12;
const ADAM_TOL: f64 = 1e-7;
const ADAM_STEPS: usize = 100;
const ACCUM_TOL: f64 = 1e-6;

type Verdict = Result<String, String>;

fn check(ok: bool, pass: String, fail: impl FnOnce() -> String) -> Verdict {
    if ok {
        Ok(pass)
    } else {
        Err(fail())
    }
}

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn toy() -> RunConfig {
    RunConfig::load(configs().join("toy.cfg")).expect("toy preset")
}

fn binary(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_echovit"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("echovit binary runs")
}

fn criterion1() -> Verdict {
    let start = Instant::now();
    let out = binary(&["gradcheck", "--scale", "toy"]);
    let elapsed = start.elapsed();
    let text = String::from_utf8_lossy(&out.stdout);
    let lines = text.lines().count();
    let checked: usize = text
        .split_whitespace()
        .filter_map(|w| w.strip_prefix("checked="))
        .map(|v| v.parse::<usize>().unwrap_or(0))
        .sum();
    let failing: Vec<&str> = text.lines().filter(|l| !l.ends_with(" ok")).collect();
    check(
        out.status.success() && failing.is_empty() && lines >= 20 && elapsed < GRAD_BUDGET,
        format!(
            "{lines} op/model checks, {checked} elements within rel {GRAD_REL_TOL:e} / abs {GRAD_ABS_TOL:e}, {:.1}s < {}s",
            elapsed.as_secs_f64(),
            GRAD_BUDGET.as_secs()
        ),
        || format!("exit {:?}, failing {failing:?}, {:.1}s", out.status.code(), elapsed.as_secs_f64()),
    )
}

fn criterion2() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pd = 4;
    for trial in 0..MASK_TRIPLES {
        let n = rng.random_range(1..=2000usize);
        let ratio = rng.random_range(0.01..0.99);
        let seed: u64 = rng.random();
        let plan = make_mask_plan(n, ratio, seed).map_err(|e| e.to_string())?;
        let keep = ((n as f64 * (1.0 - ratio)).round() as usize).max(1);
        let mut all = plan.shuffled_order();
        let order = all.clone();
        all.sort_unstable();
        let partition = plan.keep_ids.len() == keep && all == (0..n).collect::<Vec<_>>();
        let bijection = (0..n).all(|i| order[plan.restore_perm[i]] == i);
        if !partition || !bijection {
            return Err(format!(
                "trial {trial}: n={n} ratio={ratio} seed={seed} breaks the partition"
            ));
        }

        let random = |rng: &mut ChaCha8Rng| -> Vec<f32> {
            (0..n * pd).map(|_| rng.random_range(-3.0..3.0)).collect()
        };
        let target = ReconTarget {
            values: Tensor::new([n, pd], random(&mut rng)).unwrap(),
            weights: Tensor::full([n, pd], 1.0).unwrap(),
            frame_ids: vec![0],
            mean: vec![0.0; n],
            std: vec![1.0; n],
            norm: TargetNorm::Raw,
        };
        let pred = random(&mut rng);
        let mut moved = pred.clone();
        for &t in &plan.keep_ids {
            for v in &mut moved[t * pd..(t + 1) * pd] {
                *v += rng.random_range(-1e3..1e3);
            }
        }
        let loss = |p: Vec<f32>| {
            let g = Graph::new();
            let v = g.constant(Tensor::new([n, pd], p).unwrap());
            reconstruction_loss(v, &target, &plan)
                .unwrap()
                .item()
                .unwrap()
        };
        if loss(pred).to_bits() != loss(moved).to_bits() {
            return Err(format!(
                "trial {trial}: loss moved with visible predictions"
            ));
        }
    }
    Ok(format!(
        "{MASK_TRIPLES} random (n, ratio, seed): partition, bijection, visible count and visible-invariant loss exact"
    ))
}

fn criterion3() -> Verdict {
    let start = Instant::now();
    let mut summary = Vec::new();
    for i in 1..=8 {
        let cfg = RunConfig::load(configs().join(format!("exp{i}.cfg")))
            .map_err(|e| format!("exp{i}: {e}"))?;
        let grid = cfg.model.token_grid().map_err(|e| e.to_string())?;
        let d = dry_run(&cfg.model, true).map_err(|e| format!("exp{i}: {e}"))?;
        if d.n_tokens != grid.n_tokens() || d.grid != grid {
            return Err(format!(
                "exp{i}: dry run has {} tokens, grid {}",
                d.n_tokens,
                grid.n_tokens()
            ));
        }
        summary.push(d.n_tokens.to_string());
    }
    let row8 = RunConfig::load(configs().join("exp8.cfg")).unwrap();
    let elapsed = start.elapsed();
    check(
        row8.model.token_grid().unwrap().n_tokens() == 784 && elapsed < DRY_RUN_BUDGET,
        format!(
            "exp1..exp8 construct, tokens [{}], {:.1}s < {}s",
            summary.join(", "),
            elapsed.as_secs_f64(),
            DRY_RUN_BUDGET.as_secs()
        ),
        || format!("row 8 or budget failed after {:.1}s", elapsed.as_secs_f64()),
    )
}

fn prepared(count: usize, cfg: &ModelConfig, seed: u64) -> (Dataset, Vec<PreparedClip>) {
    let ds = Dataset::from_synthetic(synthetic_corpus(count, 32, 32, 50.0, seed).unwrap());
    let clips = prepare_records(&ds.records.iter().collect::<Vec<_>>(), cfg).unwrap();
    (ds, clips)
}

fn criterion4() -> Verdict {
    let start = Instant::now();
    let run = toy();
    let (_, clips) = prepared(PRETRAIN_CLIPS, &run.model, run.seed);
    let mut t = run.train_config(TrainMode::Pretrain);
    t.max_iterations = Some(PRETRAIN_ITERS);
    let a = pretrain(&clips, &run.model, &t, None).map_err(|e| e.to_string())?;
    let b = pretrain(&clips, &run.model, &t, None).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let (l5, l200) = (a.log[4].loss, a.log[PRETRAIN_ITERS - 1].loss);
    let identical = a.log == b.log
        && encode_eaiw(&a.params).map_err(|e| e.to_string())?
            == encode_eaiw(&b.params).map_err(|e| e.to_string())?;
    let ratio = l200 / l5;
    check(
        ratio <= PRETRAIN_RATIO && identical && elapsed < PRETRAIN_BUDGET,
        format!(
            "loss {l5:.4} -> {l200:.4} (ratio {ratio:.3} <= {PRETRAIN_RATIO}), rerun bitwise identical, {:.1}s for two runs < {}s",
            elapsed.as_secs_f64(),
            PRETRAIN_BUDGET.as_secs()
        ),
        || format!("ratio {ratio:.3}, identical {identical}, {:.1}s", elapsed.as_secs_f64()),
    )
}

fn criterion5() -> Verdict {
    let start = Instant::now();
    let run = toy();
    let (ds, all) = prepared(FINETUNE_CLIPS, &run.model, run.seed);
    let part = |s: Split| prepare_records(&ds.split(s), &run.model).unwrap();
    let (train, val) = (part(Split::Train), part(Split::Val));
    let held_out: Vec<PreparedClip> = val.iter().cloned().chain(part(Split::Test)).collect();

    let mut pt = run.train_config(TrainMode::Pretrain);
    pt.max_iterations = Some(PRETRAIN_ITERS);
    let pre = pretrain(&all, &run.model, &pt, None).map_err(|e| e.to_string())?;
    let encoder = {
        let bytes = encode_eaiw(&pre.params).map_err(|e| e.to_string())?;
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let path = dir.path().join("pre.eaiw");
        std::fs::write(&path, bytes).map_err(|e| e.to_string())?;
        load_checkpoint_checked(&path, &encoder_schema(&run.model).unwrap(), |n| {
            n.starts_with("dec.")
        })
        .map_err(|e| e.to_string())?
    };
    let score = |init: FinetuneInit<'_>, mode: TrainMode| -> Result<(f64, f64), String> {
        let mut t = run.train_config(mode);
        t.max_iterations = Some(FINETUNE_ITERS);
        let out = finetune(&train, &val, init, &run.model, &t, None).map_err(|e| e.to_string())?;
        let (_, r) = evaluate(&out.params, &run.model, &held_out).map_err(|e| e.to_string())?;
        Ok((r.mae, r.r2))
    };
    let (mae_pre, r2_pre) = score(FinetuneInit::Pretrained(&encoder), TrainMode::Finetune)?;
    let (mae_van, r2_van) = score(FinetuneInit::Random, TrainMode::VanillaFinetune)?;
    let elapsed = start.elapsed();
    check(
        mae_pre < FINETUNE_MAE && r2_pre > 0.0 && mae_pre <= mae_van + FINETUNE_MARGIN && elapsed < FINETUNE_BUDGET,
        format!(
            "{} held-out clips: pretrained MAE {mae_pre:.2} < {FINETUNE_MAE}, R2 {r2_pre:.3} > 0; vanilla MAE {mae_van:.2} (R2 {r2_van:.3}), margin {FINETUNE_MARGIN}; {:.1}s < {}s",
            held_out.len(),
            elapsed.as_secs_f64(),
            FINETUNE_BUDGET.as_secs()
        ),
        || {
            format!(
                "pretrained MAE {mae_pre:.2} R2 {r2_pre:.3}, vanilla MAE {mae_van:.2}, {:.1}s",
                elapsed.as_secs_f64()
            )
        },
    )
}

fn criterion6() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..METRIC_SETS {
        let n = rng.random_range(2..80usize);
        let pairs: Vec<EvalPair> = (0..n)
            .map(|i| {
                EvalPair::new(
                    format!("c{i}"),
                    rng.random_range(5.0..90.0),
                    rng.random_range(-10.0..110.0),
                )
            })
            .collect();
        let r = compute_report(&pairs).map_err(|e| e.to_string())?;
        let nf = n as f64;
        let mean = pairs.iter().map(|p| p.truth).sum::<f64>() / nf;
        let (mut ae, mut se, mut ape, mut spe, mut tot) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for p in &pairs {
            let e = p.truth - p.prediction;
            ae += e.abs();
            se += e * e;
            ape += (e / p.truth).abs();
            spe += (e / p.truth).powi(2);
            tot += (p.truth - mean).powi(2);
        }
        let want = [
            ae / nf,
            (se / nf).sqrt(),
            100.0 * ape / nf,
            100.0 * (spe / nf).sqrt(),
            1.0 - se / tot,
        ];
        let got = [r.mae, r.rmse, r.mape, r.rmspe, r.r2];
        for (g, w) in got.iter().zip(want) {
            worst = worst.max((g - w).abs() / w.abs().max(1.0));
        }
    }
    let hand = compute_report(&[
        EvalPair::new("a", 50.0, 45.0),
        EvalPair::new("b", 60.0, 66.0),
    ])
    .unwrap();
    let hand_ok = hand.mae == 5.5
        && (hand.mape - 10.0).abs() <= METRIC_TOL
        && (hand.r2 + 0.22).abs() <= METRIC_TOL;
    check(
        worst <= METRIC_TOL && hand_ok,
        format!(
            "{METRIC_SETS} random sets agree with brute force (worst {worst:.1e} <= {METRIC_TOL:e}); hand example mae {} mape {:.12}% r2 {:.12}",
            hand.mae, hand.mape, hand.r2
        ),
        || format!("worst deviation {worst:e}, hand example {hand:?}"),
    )
}

fn scalar_adam(p0: f64, grad: impl Fn(f64) -> f64, lr: f64) -> f64 {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut p, mut m, mut v) = (p0, 0.0, 0.0);
    for t in 1..=ADAM_STEPS as i32 {
        let g = grad(p);
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        p -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
    }
    p
}

fn max_diff(a: &ParamStore<f64>, b: &ParamStore<f64>) -> f64 {
    a.iter()
        .map(|(n, t)| t.max_abs_diff(b.get(n).expect("same names")).unwrap())
        .fold(0.0, f64::max)
}

fn criterion7() -> Verdict {
    let s = ScheduleConfig::new(0.0016, 1000);
    let ends = (cosine_lr(0, &s), cosine_lr(500, &s), cosine_lr(1000, &s));
    let ends_ok = ends == (0.0016, 0.0008, 0.0);

    let starts = [0.8, -1.2, 2.5, 0.0];
    let grad = |i: usize, p: f64| 2.0 * (p - i as f64 * 0.3) + (2.0 * p).cos();
    let mut store = ParamStore::<f64>::new();
    store.insert("w.weight", Tensor::new([2, 2], starts.to_vec()).unwrap());
    let mut opt = AdamW::new(AdamWConfig {
        weight_decay: 0.0,
        ..AdamWConfig::FINETUNE
    });
    for _ in 0..ADAM_STEPS {
        let p = store.get("w.weight").unwrap().data().to_vec();
        let mut g = ParamStore::new();
        g.insert(
            "w.weight",
            Tensor::new(
                [2, 2],
                p.iter().enumerate().map(|(i, &v)| grad(i, v)).collect(),
            )
            .unwrap(),
        );
        opt.step(&mut store, &g, 0.01).map_err(|e| e.to_string())?;
    }
    let adam_err = store
        .get("w.weight")
        .unwrap()
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| (v - scalar_adam(starts[i], |p| grad(i, p), 0.01)).abs())
        .fold(0.0, f64::max);

    let cfg = ModelConfig::toy();
    let (_, clips) = prepared(4, &cfg, 7);
    let n = cfg.token_grid().unwrap().n_tokens();
    let items: Vec<PretrainItem> = clips
        .iter()
        .enumerate()
        .map(|(i, c)| PretrainItem {
            video: sample_video(c, &cfg, Some(i as u64), 0.0).unwrap(),
            plan: make_mask_plan(n, cfg.mask_ratio, 50 + i as u64).unwrap(),
        })
        .collect();
    let start = ParamStore::<f64>::init(&pretrain_schema(&cfg).unwrap(), 3).unwrap();
    let mut whole = start.clone();
    let (_, g) = pretrain_grads(&whole, &items, &cfg).map_err(|e| e.to_string())?;
    AdamW::new(AdamWConfig::PRETRAIN)
        .step(&mut whole, &g, 1e-3)
        .unwrap();
    let mut acc = GradAccumulator::new(2).unwrap();
    let mut split = start.clone();
    acc.push(pretrain_grads(&split, &items[..2], &cfg).unwrap().1)
        .unwrap();
    let avg = acc
        .push(pretrain_grads(&split, &items[2..], &cfg).unwrap().1)
        .unwrap()
        .expect("k pushes");
    AdamW::new(AdamWConfig::PRETRAIN)
        .step(&mut split, &avg, 1e-3)
        .unwrap();
    let pre_err = max_diff(&whole, &split);

    let ef: Vec<(Tensor, f64)> = items
        .iter()
        .zip([35.0, 50.0, 65.0, 42.0])
        .map(|(i, e)| (i.video.clone(), e))
        .collect();
    let start = ParamStore::<f64>::init(&finetune_schema(&cfg).unwrap(), 4).unwrap();
    let mut whole = start.clone();
    let (_, g) = finetune_grads(&whole, &ef, &cfg).unwrap();
    AdamW::new(AdamWConfig::FINETUNE)
        .step(&mut whole, &g, 1e-3)
        .unwrap();
    let mut acc = GradAccumulator::new(4).unwrap();
    let mut avg = None;
    for item in &ef {
        avg = acc
            .push(
                finetune_grads(&start, std::slice::from_ref(item), &cfg)
                    .unwrap()
                    .1,
            )
            .unwrap();
    }
    let mut split = start.clone();
    AdamW::new(AdamWConfig::FINETUNE)
        .step(&mut split, &avg.expect("k pushes"), 1e-3)
        .unwrap();
    let ft_err = max_diff(&whole, &split);

    check(
        ends_ok && adam_err <= ADAM_TOL && pre_err <= ACCUM_TOL && ft_err <= ACCUM_TOL,
        format!(
            "cosine (0, T/2, T) = {ends:?} exact; AdamW vs scalar Adam {adam_err:.1e} <= {ADAM_TOL:e} over {ADAM_STEPS} steps; accumulation pretrain {pre_err:.1e} / finetune {ft_err:.1e} <= {ACCUM_TOL:e}"
        ),
        || format!("cosine {ends:?}, adam {adam_err:e}, accumulation {pre_err:e} / {ft_err:e}"),
    )
}

fn read_pgm(path: &Path) -> Vec<u8> {
    let bytes = std::fs::read(path).unwrap();
    let mut newlines = 0;
    let start = bytes
        .iter()
        .position(|&b| {
            newlines += usize::from(b == b'\n');
            newlines == 3
        })
        .unwrap();
    bytes[start + 1..].to_vec()
}

fn criterion8() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = toy();
    let samples = synthetic_corpus(3, 32, 32, 50.0, 8).unwrap();
    let eaiv_ok = samples.iter().all(|s| {
        let bytes = encode_eaiv(&s.clip);
        decode_eaiv(&bytes)
            .map(|c| encode_eaiv(&c) == bytes && c == s.clip)
            .unwrap_or(false)
    });
    let store = ParamStore::<f32>::init(&pretrain_schema(&run.model).unwrap(), 5).unwrap();
    let bytes = encode_eaiw(&store).unwrap();
    let eaiw_ok = decode_eaiw(&bytes)
        .map(|s| encode_eaiw(&s).unwrap() == bytes && s == store)
        .unwrap_or(false);

    let data = dir.path().join("data");
    write_synthetic_corpus(&samples, &data).unwrap();
    let ckpt = dir.path().join("pre.eaiw");
    std::fs::write(&ckpt, &bytes).unwrap();
    let panels = dir.path().join("panels");
    let input = data.join(&samples[0].name);
    let cfg_path = configs().join("toy.cfg");
    let mask_seed = 17u64;
    let out = binary(&[
        "reconstruct",
        "--config",
        cfg_path.to_str().unwrap(),
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--out",
        panels.to_str().unwrap(),
        "--seed",
        &mask_seed.to_string(),
    ]);
    if !out.status.success() {
        return Err(format!(
            "reconstruct failed: {}",
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    let cfg = &run.model;
    let stem = Path::new(&samples[0].name)
        .file_stem()
        .unwrap()
        .to_str()
        .unwrap()
        .to_string();
    let frames = echovit::mae::target_frames(cfg.num_frames, cfg.recon_frames).unwrap();
    let mut files = 0;
    for panel in ["original", "masked", "recon", "recon_visible"] {
        files += frames
            .iter()
            .filter(|t| panels.join(format!("{stem}.{panel}.{t:03}.pgm")).exists())
            .count();
    }
    let plan = make_mask_plan(
        cfg.token_grid().unwrap().n_tokens(),
        cfg.mask_ratio,
        mask_seed,
    )
    .unwrap();
    let idx = patchify_indices(cfg).unwrap();
    let frame_len = cfg.image_size * cfg.image_size;
    let (mut compared, mut mismatched) = (0, 0);
    for &tok in &plan.keep_ids {
        for &at in &idx[tok * cfg.patch_dim()..(tok + 1) * cfg.patch_dim()] {
            let t = at / frame_len;
            if !frames.contains(&t) {
                continue;
            }
            let orig = read_pgm(&panels.join(format!("{stem}.original.{t:03}.pgm")));
            let rv = read_pgm(&panels.join(format!("{stem}.recon_visible.{t:03}.pgm")));
            compared += 1;
            mismatched += usize::from(orig[at % frame_len] != rv[at % frame_len]);
        }
    }
    let want = 4 * frames.len();
    check(
        eaiv_ok && eaiw_ok && files == want && compared > 0 && mismatched == 0,
        format!(
            "EAIV and EAIW byte-exact; reconstruct wrote {files} = 4 x {} panel frames; recon_visible equals original at {compared} visible pixels",
            frames.len()
        ),
        || format!("eaiv {eaiv_ok}, eaiw {eaiw_ok}, files {files}/{want}, visible mismatches {mismatched}/{compared}"),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict); 8] = [
        ("gradient correctness", criterion1),
        ("masking algebra", criterion2),
        ("shape conformance", criterion3),
        ("pretraining learns", criterion4),
        ("fine-tuning learns", criterion5),
        ("metric oracle", criterion6),
        ("schedule and optimizer", criterion7),
        ("artifact fidelity", criterion8),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        if only.is_some_and(|o| o != id) {
            continue;
        }
        match run() {
            Ok(detail) => println!("PASS criterion {id} ({name}): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {id} ({name}): {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
