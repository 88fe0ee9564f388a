//! Acceptance suite. Prints one PASS/FAIL line per criterion. Failures make
//! the process exit nonzero only when `ACCEPTANCE_STRICT=1`, so the suite can
//! report an unmet criterion without hiding the others.

use std::path::Path;
use std::time::Instant;

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;

use contrastgan::checkpoint::{Model, ModelConfig};
use contrastgan::data::{synth_dataset, LoadedDataset, SyntheticSpec};
use contrastgan::domain::{Ablation, DomainPair, ImageSample, SemanticCategory};
use contrastgan::evaluation::{
    background_preservation, confusion, evaluate_translation, metrics_from_confusion, train_proxy, LabelMap,
    ProxyConfig,
};
use contrastgan::maskpipe::{crop_region, manipulate, warp_back, CropOptions, CropTransform, IdentityGenerator};
use contrastgan::networks::{DiscriminatorSpec, Generator, GeneratorSpec, ParamInit, PatchDiscriminator};
use contrastgan::objectives::{
    contrasting_distance, cycle_loss, feature_center_rows, lsgan_discriminator_loss, lsgan_generator_loss,
    TargetImageBuffer,
};
use contrastgan::rng::derived_rng;
use contrastgan::training::{lr_at, mean_contrast, mean_cycle_l1, read_log, train, RunOptions, TrainConfig, LOG_FILE};
use contrastgan::Error;

type Outcome = Result<String, String>;

const FD_STEP: f64 = 1e-5;
const FD_REL_TOL: f64 = 1e-4;
const FD_INSTANCES: usize = 50;
const LN2_TOL: f64 = 1e-9;
const WORKED_MIOU: f64 = 0.58333;
const WORKED_TOL: f64 = 1e-5;
const ROUND_TRIP_TOL: f64 = 1e-6;
const CENTER_TOL: f64 = 1e-6;
const GATING_TOL: f64 = 1e-6;
const LR_TOL: f64 = 1e-15;

// synthetic end-to-end
const E2E_STEPS: u64 = 2000;
const PROXY_MIN_ACC: f64 = 0.98;
const RATE_AFTER_MIN: f64 = 0.70;
const RATE_BEFORE_MAX: f64 = 0.10;
const CYCLE_MAX: f64 = 0.08;

fn cat(id: usize, n: usize) -> SemanticCategory {
    SemanticCategory::new(id, n).unwrap()
}

fn vec_f64(t: &Tensor) -> Vec<f64> {
    t.flatten_all()
        .unwrap()
        .to_dtype(DType::F64)
        .unwrap()
        .to_vec1::<f64>()
        .unwrap()
}

fn scalar(t: &Tensor) -> f64 {
    vec_f64(t)[0]
}

/// Compares the autograd gradient of `f` at `inputs` against central
/// differences, one input at a time. Returns the worst relative error.
fn gradcheck(inputs: &[Vec<f64>], f: &dyn Fn(&[Tensor]) -> Tensor) -> f64 {
    let dev = Device::Cpu;
    let vars: Vec<Var> = inputs
        .iter()
        .map(|v| Var::from_vec(v.clone(), v.len(), &dev).unwrap())
        .collect();
    let ts: Vec<Tensor> = vars.iter().map(|v| v.as_tensor().clone()).collect();
    let grads = f(&ts).backward().unwrap();
    let eval = |vals: &[Vec<f64>]| {
        let ts: Vec<Tensor> = vals.iter().map(|v| Tensor::new(v.as_slice(), &dev).unwrap()).collect();
        scalar(&f(&ts))
    };
    let mut worst: f64 = 0.0;
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(var.as_tensor())
            .map(vec_f64)
            .unwrap_or(vec![0.0; inputs[k].len()]);
        let mut numeric = Vec::with_capacity(inputs[k].len());
        for i in 0..inputs[k].len() {
            let mut plus = inputs.to_vec();
            let mut minus = inputs.to_vec();
            plus[k][i] += FD_STEP;
            minus[k][i] -= FD_STEP;
            numeric.push((eval(&plus) - eval(&minus)) / (2.0 * FD_STEP));
        }
        let diff: f64 = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        worst = worst.max(diff / na.max(nn).max(1e-12));
    }
    worst
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let mut rng = derived_rng(1, &[]);
    let mut rand_vec = |n: usize, s: f64| -> Vec<f64> { (0..n).map(|_| rng.random_range(-s..s)).collect() };
    let mut worst = [0.0f64; 4];
    for _ in 0..FD_INSTANCES {
        let inputs = vec![rand_vec(8, 1.0), rand_vec(8, 1.0), rand_vec(8, 1.0)];
        worst[0] = worst[0].max(gradcheck(&inputs, &|v| {
            contrasting_distance(&v[0], &v[1], &v[2]).unwrap()
        }));
        let inputs = vec![rand_vec(12, 1.5), rand_vec(12, 1.5)];
        worst[1] = worst[1].max(gradcheck(&inputs, &|v| lsgan_discriminator_loss(&v[0], &v[1]).unwrap()));
        let inputs = vec![rand_vec(12, 1.5)];
        worst[2] = worst[2].max(gradcheck(&inputs, &|v| lsgan_generator_loss(&v[0]).unwrap()));
        let inputs = vec![rand_vec(12, 1.0), rand_vec(12, 1.0)];
        worst[3] = worst[3].max(gradcheck(&inputs, &|v| cycle_loss(&v[0], &v[1]).unwrap()));
    }
    let secs = t.elapsed().as_secs_f64();
    let msg = format!(
        "worst relative error Q {:.2e}, lsgan_d {:.2e}, lsgan_g {:.2e}, cycle {:.2e} over {FD_INSTANCES} instances in {secs:.1}s",
        worst[0], worst[1], worst[2], worst[3]
    );
    if worst.iter().all(|w| *w < FD_REL_TOL) && secs < 60.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn q_at(d_pos: f64, d_neg: f64) -> f64 {
    // anchor at the origin, center and contrast on different axes
    let dev = Device::Cpu;
    let a = Tensor::new(&[0.0f64, 0.0], &dev).unwrap();
    let c = Tensor::new(&[0.0f64, d_neg], &dev).unwrap();
    let m = Tensor::new(&[d_pos, 0.0f64], &dev).unwrap();
    scalar(&contrasting_distance(&a, &c, &m).unwrap())
}

fn criterion_2() -> Outcome {
    let mut rng = derived_rng(2, &[]);
    let mut worst_ln2: f64 = 0.0;
    for _ in 0..100 {
        let d = rng.random_range(0.0..5.0);
        worst_ln2 = worst_ln2.max((q_at(d, d) - std::f64::consts::LN_2).abs());
    }
    let grid: Vec<f64> = (0..20).map(|i| 5.0 * i as f64 / 19.0).collect();
    let mut ok = 0;
    let mut cells = 0;
    for (i, &dp) in grid.iter().enumerate() {
        for (j, &dn) in grid.iter().enumerate() {
            let q = q_at(dp, dn);
            let mut good = true;
            if i + 1 < grid.len() {
                good &= q_at(grid[i + 1], dn) > q;
            }
            if j + 1 < grid.len() {
                good &= q_at(dp, grid[j + 1]) < q;
            }
            cells += 1;
            ok += good as usize;
        }
    }
    let msg = format!("max |Q - ln 2| = {worst_ln2:.1e}; monotone cells {ok}/{cells}");
    if worst_ln2 <= LN2_TOL && ok == cells {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn pixel_oracle(pred: &[u8], gt: &[u8], c: u8) -> (f64, f64, f64) {
    let correct = pred.iter().zip(gt).filter(|(p, g)| p == g).count();
    let (mut accs, mut ious) = (Vec::new(), Vec::new());
    for k in 0..c {
        let gt_k = gt.iter().filter(|&&g| g == k).count();
        let tp = pred.iter().zip(gt).filter(|(&p, &g)| p == k && g == k).count();
        let union = pred.iter().zip(gt).filter(|(&p, &g)| p == k || g == k).count();
        if gt_k > 0 {
            accs.push(tp as f64 / gt_k as f64);
        }
        if union > 0 {
            ious.push(tp as f64 / union as f64);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    (correct as f64 / pred.len() as f64, mean(&accs), mean(&ious))
}

fn criterion_3() -> Outcome {
    let mut rng = derived_rng(3, &[]);
    let mut exact = 0;
    for _ in 0..100 {
        let c: u8 = rng.random_range(2..=5);
        let gt: Vec<u8> = (0..256).map(|_| rng.random_range(0..c)).collect();
        let pred: Vec<u8> = (0..256).map(|_| rng.random_range(0..c)).collect();
        let m = confusion(
            &LabelMap::new(16, 16, pred.clone()).unwrap(),
            &LabelMap::new(16, 16, gt.clone()).unwrap(),
            c as usize,
        )
        .unwrap();
        let s = metrics_from_confusion(&m).unwrap();
        let o = pixel_oracle(&pred, &gt, c);
        exact += ((s.per_pixel_acc, s.per_class_acc, s.mean_iou) == o) as usize;
    }
    let w = metrics_from_confusion(
        &confusion(
            &LabelMap::new(1, 4, vec![0, 1, 1, 1]).unwrap(),
            &LabelMap::new(1, 4, vec![0, 0, 1, 1]).unwrap(),
            2,
        )
        .unwrap(),
    )
    .unwrap();
    let worked = w.per_pixel_acc == 0.75 && w.per_class_acc == 0.75 && (w.mean_iou - WORKED_MIOU).abs() <= WORKED_TOL;
    let msg = format!(
        "{exact}/100 random maps identical to the pixel-counting oracle; worked example ({}, {}, {:.5})",
        w.per_pixel_acc, w.per_class_acc, w.mean_iou
    );
    if exact == 100 && worked {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn random_image<R: Rng>(rng: &mut R, h: usize, w: usize) -> Tensor {
    let v: Vec<f32> = (0..h * w * 3).map(|_| rng.random_range(-1.0f32..=1.0)).collect();
    Tensor::from_vec(v, (h, w, 3), &Device::Cpu).unwrap()
}

fn criterion_4() -> Outcome {
    let dev = Device::Cpu;
    let mut rng = derived_rng(4, &[]);
    let spec = GeneratorSpec {
        region_size: 16,
        base_channels: 4,
        n_residual_blocks: 1,
        category_embed_dim: 4,
    };
    let mut zero_dev = 0;
    for i in 0..100u64 {
        let (h, w) = (rng.random_range(12..40), rng.random_range(12..40));
        let img = random_image(&mut rng, h, w);
        // random blob: union of a few rectangles
        let mut m = vec![0f32; h * w];
        for _ in 0..rng.random_range(1..4) {
            let (r0, c0) = (rng.random_range(0..h), rng.random_range(0..w));
            let (r1, c1) = (rng.random_range(r0..h) + 1, rng.random_range(c0..w) + 1);
            for r in r0..r1 {
                for c in c0..c1 {
                    m[r * w + c] = 1.0;
                }
            }
        }
        let mask = Tensor::from_vec(m, (h, w), &dev).unwrap();
        let sample = ImageSample::new(img, Some(mask), cat(0, 2)).unwrap();
        let mut init = ParamInit::new(i, &dev, DType::F32);
        let g = Generator::new(spec, 2, &mut init).unwrap();
        let opts = CropOptions {
            margin_ratio: rng.random_range(0.0..0.2),
            square: rng.random_bool(0.5),
        };
        let out = manipulate(&sample, cat(1, 2), &g, 16, &opts).unwrap();
        zero_dev += (background_preservation(&sample, out.output.pixels()).unwrap() == 0.0) as usize;
    }
    let img = random_image(&mut rng, 16, 16);
    let empty = ImageSample::new(
        img.clone(),
        Some(Tensor::zeros((16, 16), DType::F32, &dev).unwrap()),
        cat(0, 2),
    )
    .and_then(|s| manipulate(&s, cat(1, 2), &IdentityGenerator, 16, &CropOptions::default()).map(|_| ()));
    let empty_ok = matches!(empty, Err(Error::EmptyMask(_)));
    let t = CropTransform::full_frame((16, 16), 16).unwrap();
    let back = warp_back(&crop_region(&img, &t).unwrap(), &t).unwrap();
    let rt = vec_f64(&img)
        .iter()
        .zip(vec_f64(&back))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let msg =
        format!(
        "{zero_dev}/100 outputs with zero background deviation; empty mask -> {}; full-frame round trip error {rt:.1e}",
        if empty_ok { "empty-mask error" } else { "unexpected result" }
    );
    if zero_dev == 100 && empty_ok && rt <= ROUND_TRIP_TOL {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_5() -> Outcome {
    let cfg = TrainConfig::default();
    let expect = [(0u64, 0.0002), (99, 0.0002), (149, 0.0001), (199, 0.0)];
    let got: Vec<(u64, f64)> = expect.iter().map(|(e, _)| (*e, lr_at(&cfg, *e).unwrap())).collect();
    let ok = expect.iter().zip(&got).all(|((_, w), (_, g))| (w - g).abs() <= LR_TOL);
    let msg = format!(
        "lr at epochs 0/99/149/199 = {:?}",
        got.iter().map(|g| g.1).collect::<Vec<_>>()
    );
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_6() -> Outcome {
    let dev = Device::Cpu;
    let mut rng = derived_rng(6, &[]);
    let mut buf = TargetImageBuffer::new(50, [16, 16, 3]).unwrap();
    for _ in 0..200 {
        buf.push(&random_image(&mut rng, 16, 16), &mut rng).unwrap();
    }
    let mut init = ParamInit::new(6, &dev, DType::F32);
    let d = PatchDiscriminator::new(
        DiscriminatorSpec {
            base_channels: 4,
            n_downsample: 2,
        },
        &mut init,
    )
    .unwrap();
    let center = vec_f64(&feature_center_rows(&d.forward_batch(&buf.stacked().unwrap()).unwrap().features).unwrap());
    let mut brute = vec![0.0f64; center.len()];
    for e in buf.entries() {
        for (b, f) in brute.iter_mut().zip(vec_f64(&d.forward(e).unwrap().1)) {
            *b += f / buf.len() as f64;
        }
    }
    let err = center
        .iter()
        .zip(&brute)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let msg = format!("occupancy {} of 50; center max error {err:.1e}", buf.len());
    if buf.len() == 50 && err <= CENTER_TOL {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn tiny_setup(dir: &Path) -> (LoadedDataset, ModelConfig) {
    let spec = SyntheticSpec {
        image_size: 32,
        count_per_domain: 10,
        test_count_per_domain: 2,
        min_extent: 8,
        max_extent: 16,
        ..Default::default()
    };
    let out = synth_dataset(&spec, &dir.join("data")).unwrap();
    let data = LoadedDataset::load(out.train, 32).unwrap();
    let mc = ModelConfig {
        generator: GeneratorSpec {
            region_size: 16,
            base_channels: 8,
            n_residual_blocks: 1,
            category_embed_dim: 8,
        },
        discriminator: DiscriminatorSpec {
            base_channels: 8,
            n_downsample: 2,
        },
        category_names: vec!["circle".into(), "square".into()],
        global_disc: true,
        whole_image: false,
        image_size: 32,
        crop: CropOptions::default(),
    };
    (data, mc)
}

fn pair2() -> DomainPair {
    DomainPair::new(cat(0, 2), cat(1, 2)).unwrap()
}

fn criterion_8(dir: &Path) -> Outcome {
    let (data, mut mc) = tiny_setup(dir);
    let mut lines = Vec::new();
    let mut ok = true;
    for a in Ablation::ALL {
        let w = a.weights();
        mc.global_disc = w.global_disc_active();
        let cfg = TrainConfig {
            epochs_const: 2,
            epochs_decay: 3,
            buffer_capacity: 8,
            weights: w,
            checkpoint_every: 0,
            seed: 8,
            ..Default::default()
        };
        let out = dir.join(format!("{a:?}"));
        let res = train(
            &data,
            &[pair2()],
            &mc,
            &cfg,
            &out,
            &RunOptions {
                resume: None,
                stop_after_epoch: None,
            },
        );
        let reports = match res {
            Ok(_) => read_log(&out.join(LOG_FILE)).unwrap(),
            Err(e) => {
                ok = false;
                lines.push(format!("{a:?}: {e}"));
                continue;
            }
        };
        let gate = |on: bool| if on { 1.0 } else { 0.0 };
        let worst = reports
            .iter()
            .map(|r| {
                let sum = gate(w.use_contrast) * r.contrast
                    + gate(w.use_lsgan) * w.lambda_lsgan * r.lsgan_g
                    + gate(w.use_cycle) * w.beta_cycle * r.cycle;
                (r.total_g - sum).abs()
            })
            .fold(0.0, f64::max);
        ok &= reports.len() == 50 && worst <= GATING_TOL;
        lines.push(format!("{a:?} {} steps, max gap {worst:.1e}", reports.len()));
    }
    let msg = lines.join("; ");
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_9(dir: &Path) -> Outcome {
    let (data, mc) = tiny_setup(dir);
    let cfg = TrainConfig {
        epochs_const: 1,
        epochs_decay: 1,
        buffer_capacity: 8,
        checkpoint_every: 0,
        seed: 9,
        ..Default::default()
    };
    let logs: Vec<Vec<u8>> = ["a", "b"]
        .iter()
        .map(|r| {
            let out = dir.join(r);
            train(&data, &[pair2()], &mc, &cfg, &out, &RunOptions::default()).unwrap();
            std::fs::read(out.join(LOG_FILE)).unwrap()
        })
        .collect();
    let logs_equal = logs[0] == logs[1] && !logs[0].is_empty();
    let model = Model::load(&dir.join("a").join("model.safetensors"), &Device::Cpu).unwrap();
    let path = dir.join("roundtrip.safetensors");
    model.save(&path).unwrap();
    let loaded = Model::load(&path, &Device::Cpu).unwrap();
    let mut rng = derived_rng(9, &[]);
    let mut same = 0;
    for i in 0..10 {
        let region = random_image(&mut rng, 16, 16);
        let t = cat(i % 2, 2);
        let a = vec_f64(&model.generator.forward(&region, t).unwrap());
        let b = vec_f64(&loaded.generator.forward(&region, t).unwrap());
        same += (a.iter().map(|v| v.to_bits()).eq(b.iter().map(|v| v.to_bits()))) as usize;
    }
    let msg = format!(
        "loss logs {} ({} bytes); {same}/10 generator outputs bitwise identical after reload",
        if logs_equal { "identical" } else { "differ" },
        logs[0].len()
    );
    if logs_equal && same == 10 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// End-to-end settings of the synthetic experiment.
fn e2e_model() -> ModelConfig {
    ModelConfig {
        generator: GeneratorSpec {
            region_size: 32,
            base_channels: 16,
            n_residual_blocks: 2,
            category_embed_dim: 16,
        },
        discriminator: DiscriminatorSpec {
            base_channels: 16,
            n_downsample: 3,
        },
        category_names: vec!["circle".into(), "square".into()],
        global_disc: true,
        whole_image: false,
        image_size: 64,
        crop: CropOptions::default(),
    }
}

fn criterion_7(dir: &Path) -> Vec<(String, Outcome)> {
    let t0 = Instant::now();
    let spec = SyntheticSpec::default();
    let out = synth_dataset(&spec, &dir.join("data")).unwrap();
    let train_d = LoadedDataset::load(out.train, spec.image_size).unwrap();
    let test_d = LoadedDataset::load(out.test, spec.image_size).unwrap();
    let train_refs: Vec<&ImageSample> = train_d.samples.iter().collect();
    let test_refs: Vec<&ImageSample> = test_d.samples.iter().collect();
    let proxy = train_proxy(&train_refs, 2, &ProxyConfig::default()).unwrap();
    let proxy_acc = proxy.accuracy(&test_refs).unwrap();

    let mc = e2e_model();
    let per_epoch = spec.count_per_domain as u64;
    let epochs = E2E_STEPS / per_epoch;
    let cfg = TrainConfig {
        epochs_const: epochs / 2,
        epochs_decay: epochs - epochs / 2,
        checkpoint_every: 0,
        seed: 1,
        ..Default::default()
    };
    let (c0, c1) = (cat(0, 2), cat(1, 2));
    let circles = test_d.of_category(0);
    let squares = test_d.of_category(1);
    let circles_train = train_d.of_category(0);
    let squares_train = train_d.of_category(1);

    struct Scores {
        rate: f64,
        rate_cs: f64,
        rate_sc: f64,
        background: f64,
        q: f64,
        cycle: f64,
    }
    let score = |m: &Model| -> Scores {
        let (a, _) = evaluate_translation(&m.generator, &mc, &circles, c1, &proxy, None).unwrap();
        let (b, _) = evaluate_translation(&m.generator, &mc, &squares, c0, &proxy, None).unwrap();
        let (ra, rb) = (a.realism_rate.unwrap(), b.realism_rate.unwrap());
        let n = (circles.len() + squares.len()) as f64;
        let q = (mean_contrast(m, &circles, &squares_train, c1).unwrap() * circles.len() as f64
            + mean_contrast(m, &squares, &circles_train, c0).unwrap() * squares.len() as f64)
            / n;
        let cycle = (mean_cycle_l1(m, &circles, c1).unwrap() * circles.len() as f64
            + mean_cycle_l1(m, &squares, c0).unwrap() * squares.len() as f64)
            / n;
        Scores {
            rate: (ra * circles.len() as f64 + rb * squares.len() as f64) / n,
            rate_cs: ra,
            rate_sc: rb,
            background: a.background_max_dev.unwrap().max(b.background_max_dev.unwrap()),
            q,
            cycle,
        }
    };
    // untranslated sources: the proxy's target rate before any translation
    let (ia, _) = evaluate_translation(&IdentityGenerator, &mc, &circles, c1, &proxy, None).unwrap();
    let (ib, _) = evaluate_translation(&IdentityGenerator, &mc, &squares, c0, &proxy, None).unwrap();
    let n_test = (circles.len() + squares.len()) as f64;
    let raw_rate =
        (ia.realism_rate.unwrap() * circles.len() as f64 + ib.realism_rate.unwrap() * squares.len() as f64) / n_test;
    let init = Model::new(mc.clone(), cfg.seed, &Device::Cpu).unwrap();
    let before = score(&init);
    let outcome = train(
        &train_d,
        &[pair2()],
        &mc,
        &cfg,
        &dir.join("run"),
        &RunOptions::default(),
    )
    .unwrap();
    let after = score(&outcome.state.model);
    let minutes = t0.elapsed().as_secs_f64() / 60.0;

    let verdict = |ok: bool, msg: String| if ok { Ok(msg) } else { Err(msg) };
    vec![
        (
            "7a".into(),
            verdict(
                proxy_acc >= PROXY_MIN_ACC && after.rate >= RATE_AFTER_MIN && raw_rate <= RATE_BEFORE_MAX,
                format!(
                    "proxy held-out accuracy {proxy_acc:.3}; target-class rate on untranslated inputs {raw_rate:.3}, with the untrained generator {:.3} (circle->square {:.3}, square->circle {:.3}), after training {:.3} (circle->square {:.3}, square->circle {:.3})",
                    before.rate, before.rate_cs, before.rate_sc, after.rate, after.rate_cs, after.rate_sc
                ),
            ),
        ),
        (
            "7b".into(),
            verdict(
                after.cycle <= CYCLE_MAX,
                format!("held-out cycle L1 {:.4} (at init {:.4})", after.cycle, before.cycle),
            ),
        ),
        (
            "7c".into(),
            verdict(
                after.q < before.q,
                format!("held-out mean Q {:.4} after vs {:.4} at init", after.q, before.q),
            ),
        ),
        (
            "7d".into(),
            verdict(
                after.background == 0.0,
                format!(
                    "max background deviation {} over {} outputs; {} steps, {minutes:.1} min total",
                    after.background,
                    circles.len() + squares.len(),
                    outcome.state.step
                ),
            ),
        ),
    ]
}

fn main() {
    let scratch = tempfile::tempdir().expect("scratch directory");
    let root = scratch.path();
    let mut results: Vec<(String, Outcome)> = vec![
        ("1".into(), criterion_1()),
        ("2".into(), criterion_2()),
        ("3".into(), criterion_3()),
        ("4".into(), criterion_4()),
        ("5".into(), criterion_5()),
        ("6".into(), criterion_6()),
    ];
    results.push(("8".into(), criterion_8(&root.join("c8"))));
    results.push(("9".into(), criterion_9(&root.join("c9"))));
    if std::env::var("ACCEPTANCE_SKIP_E2E").is_ok_and(|v| v == "1") {
        println!("SKIP criterion 7: ACCEPTANCE_SKIP_E2E=1");
    } else {
        results.extend(criterion_7(&root.join("c7")));
    }
    results.sort_by(|a, b| a.0.cmp(&b.0));
    let mut failed = 0;
    for (name, r) in &results {
        match r {
            Ok(m) => println!("PASS criterion {name}: {m}"),
            Err(m) => {
                failed += 1;
                println!("FAIL criterion {name}: {m}");
            }
        }
    }
    println!("{}/{} criteria passed", results.len() - failed, results.len());
    if failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
