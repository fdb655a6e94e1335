//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails. Criteria 6 and 7 train the full network and
//! dominate the runtime (roughly 5 and 15 minutes on one core).

use std::f64::consts::TAU;
use std::time::{Duration, Instant};

use csipose::checkpoint::{Checkpoint, CheckpointMeta};
use csipose::error::exit;
use csipose::recording::{read_recording, write_recording, RecordingManifest};
use csipose::report::{format_table, NamedReport};
use csipose::Error;
use csipose_core::channel::{channel_response, decompose_response, PathComponent, PathKind};
use csipose_core::compute::{AdamState, Mode, NdArray, ParamStore, Tape};
use csipose_core::dataset::{split_dataset, SplitPolicy};
use csipose_core::image::CsiImage;
use csipose_core::loss::{
    huber_loss, huber_norm, huber_scalar, loss_and_gradient, position_loss, total_loss, HuberVariant, LossConfig,
};
use csipose_core::metrics::{fit_similarity, p_mpjpe, squared_residual, AlignmentTransform};
use csipose_core::net::{stack_images, NetworkSpec, PoseNet};
use csipose_core::pipeline::{build_csi_images, remove_static_complex, PipelineConfig};
use csipose_core::scene::{synthesize_recording, BodyConfig, SceneConfig, Scenario};
use csipose_core::skeleton::{SkeletonPose, JOINT_COUNT};
use csipose_core::body::{SubjectProfile, Trajectory};
use csipose_core::train::{recalibrate_batch_norm, train, Sample, TrainConfig};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, format!("runtime {elapsed:.2?} exceeds {limit:?}"))
}

const TABLE: [([usize; 3], [usize; 3]); 13] = [
    ([30, 20, 4], [30, 20, 4]),
    ([30, 20, 4], [30, 20, 8]),
    ([30, 20, 8], [15, 10, 8]),
    ([15, 10, 8], [15, 10, 16]),
    ([15, 10, 16], [8, 5, 16]),
    ([8, 5, 16], [8, 5, 64]),
    ([8, 5, 64], [4, 3, 64]),
    ([4, 3, 64], [4, 3, 256]),
    ([4, 3, 256], [2, 2, 256]),
    ([2, 2, 256], [2, 2, 1024]),
    ([2, 2, 1024], [1, 1, 1024]),
    ([1, 1, 1024], [1, 1, 2048]),
    ([1, 1, 2048], [1, 1, 2048]),
];

fn random_image(rng: &mut ChaCha8Rng) -> CsiImage {
    let mut img = CsiImage::zeros(0.0);
    img.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    img
}

fn architecture() -> Check {
    let start = Instant::now();
    let net = PoseNet::new(NetworkSpec::default()).map_err(|e| e.to_string())?;
    let params = net.init_params(0);
    let mut tape = Tape::new();
    let input = tape.input(stack_images([random_image(&mut ChaCha8Rng::seed_from_u64(0))].iter()).unwrap());
    let fwd = net.forward(&mut tape, &params, input, Mode::Eval).map_err(|e| e.to_string())?;
    let trace = net.spec().shape_trace().map_err(|e| e.to_string())?;
    ensure(trace.len() == 15 && fwd.layers.len() == 15, "expected 15 rows")?;
    for (i, (input, output)) in TABLE.iter().enumerate() {
        let row = &trace[i];
        ensure(row.name == format!("BLOCK{}", i + 1), format!("row {i} named {}", row.name))?;
        ensure(row.input == input && row.output == output, format!("{}: {:?} -> {:?}", row.name, row.input, row.output))?;
        let mut actual = vec![1];
        actual.extend_from_slice(output);
        ensure(tape.value(fwd.layers[i].1).shape() == actual, format!("{} forward shape", row.name))?;
    }
    ensure(trace[13].input == [1, 1, 2048] && trace[13].output == [1, 512], "FC1 row")?;
    ensure(trace[14].input == [1, 512] && trace[14].output == [1, 51], "FC2 row")?;
    ensure(tape.value(fwd.layers[13].1).shape() == [1, 512], "FC1 forward shape")?;
    ensure(tape.value(fwd.output).shape() == [1, 51], "FC2 forward shape")?;
    within(start.elapsed(), Duration::from_secs(1))?;
    Ok(format!("15 rows match, {:.2?}", start.elapsed()))
}

fn eval_loss(net: &PoseNet, params: &ParamStore, x: &NdArray, truth: &[f64]) -> f64 {
    let mut tape = Tape::new();
    let input = tape.input(x.clone());
    let fwd = net.forward(&mut tape, params, input, Mode::Eval).unwrap();
    loss_and_gradient(tape.value(fwd.output).data(), truth, LossConfig::default()).unwrap().0.total()
}

fn gradients() -> Check {
    let start = Instant::now();
    let net = PoseNet::new(NetworkSpec::with_width_divisor(8)).unwrap();
    let mut params = net.init_params(11);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    // Eval-mode normalization with statistics from a 16-image batch: one
    // sample alone has no batch variance in the 1x1 blocks.
    let calib: Vec<_> = (0..16).map(|_| random_image(&mut rng)).collect();
    let mut tape = Tape::new();
    let input = tape.input(stack_images(calib.iter()).unwrap());
    net.forward(&mut tape, &params, input, Mode::Train).unwrap();
    tape.commit_running_stats(&mut params, 1.0);

    let x = stack_images([random_image(&mut rng)].iter()).unwrap();
    let truth: Vec<f64> = (0..51).map(|_| rng.random_range(-1.0..1.0)).collect();
    params.zero_grads();
    let mut tape = Tape::new();
    let input = tape.input(x.clone());
    let fwd = net.forward(&mut tape, &params, input, Mode::Eval).unwrap();
    let obj = tape
        .objective(fwd.output, |pred| {
            let (parts, g) = loss_and_gradient(pred.data(), &truth, LossConfig::default()).unwrap();
            (parts.total(), NdArray::new(pred.shape().to_vec(), g).unwrap())
        })
        .unwrap();
    tape.backward(obj, &mut params).unwrap();

    let mut slots = Vec::new();
    for (id, p) in params.iter().filter(|(_, p)| p.trainable) {
        slots.extend((0..p.value.len()).map(|k| (id, k)));
    }
    let samples = 600;
    ensure(slots.len() >= samples, format!("only {} trainable parameters", slots.len()))?;
    let picks = rand::seq::index::sample(&mut rng, slots.len(), samples);
    let h = 1e-5;
    let mut good = 0;
    for i in picks.iter() {
        let (id, k) = slots[i];
        let analytic = params.grad(id).data()[k];
        let orig = params.value(id).data()[k];
        params.value_mut(id).data_mut()[k] = orig + h;
        let up = eval_loss(&net, &params, &x, &truth);
        params.value_mut(id).data_mut()[k] = orig - h;
        let down = eval_loss(&net, &params, &x, &truth);
        params.value_mut(id).data_mut()[k] = orig;
        let numeric = (up - down) / (2.0 * h);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7);
        good += usize::from(rel < 1e-3);
    }
    let fraction = good as f64 / samples as f64;
    ensure(fraction >= 0.99, format!("{good}/{samples} within 1e-3"))?;
    within(start.elapsed(), Duration::from_secs(300))?;
    Ok(format!("{good}/{samples} sampled parameters within rel. err 1e-3, {:.2?}", start.elapsed()))
}

fn pose_from(points: [[f64; 3]; JOINT_COUNT]) -> SkeletonPose {
    SkeletonPose { joints: points }
}

fn losses() -> Check {
    let offset = HuberVariant::Offset;
    let close = |a: f64, b: f64, what: &str| ensure((a - b).abs() <= 1e-12, format!("{what}: {a} vs {b}"));
    let zero = pose_from([[0.0; 3]; JOINT_COUNT]);
    let mut moved = zero;
    moved.joints[4] = [3.0, 4.0, 0.0];
    close(position_loss(&[moved], &[zero]).unwrap(), 5.0 / 17.0, "position loss")?;
    let doubled = pose_from(moved.joints.map(|j| j.map(|v| 2.0 * v)));
    close(position_loss(&[doubled], &[zero]).unwrap(), 10.0 / 17.0, "doubled position loss")?;
    close(position_loss(&[zero], &[zero]).unwrap(), 0.0, "identical position loss")?;
    close(huber_scalar(0.0, 0.75, offset), 0.0, "huber(0)")?;
    close(huber_scalar(0.5, 0.75, offset), 0.125, "huber(0.5)")?;
    close(huber_scalar(2.0, 0.75, offset), 1.5, "huber(2)")?;
    close(huber_norm(&[0.5, 2.0], 0.75, offset).unwrap(), 0.8125, "huber norm")?;
    close(huber_norm(&[2.0, 0.5], 0.75, offset).unwrap(), 0.8125, "permuted huber norm")?;
    close(huber_norm(&[0.0; 3], 0.75, offset).unwrap(), 0.0, "zero huber norm")?;
    let mut residual = zero;
    residual.joints[2] = [0.5, 0.0, 0.0];
    close(huber_loss(&[residual], &[zero], 0.75, offset).unwrap(), 0.125 / 3.0 / 17.0, "huber loss")?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let a = pose_from(std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(-3.0..3.0))));
        let b = pose_from(std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(-3.0..3.0))));
        let cfg = LossConfig::default();
        let lp = position_loss(&[a], &[b]).unwrap();
        let lh = huber_loss(&[a], &[b], 0.75, offset).unwrap();
        let total = total_loss(&[a], &[b], cfg).unwrap();
        close(total, lp + lh, "total = L_P + L_H")?;
        ensure(total >= lp && total >= lh && total.is_finite(), "total dominates its terms")?;
    }
    let jump = 0.5 * 0.75 * 0.75 - huber_scalar(0.75, 0.75, offset);
    ensure(jump == 0.03125, format!("jump {jump}"))?;
    let below = huber_scalar(0.75f64.next_down(), 0.75, offset);
    close(below - huber_scalar(0.75, 0.75, offset), 0.03125, "left limit jump")?;
    let std = HuberVariant::Standard;
    close(huber_scalar(0.75f64.next_down(), 0.75, std), huber_scalar(0.75, 0.75, std), "standard continuity")?;
    Ok(String::from("all loss examples within 1e-12, offset variant jump at 0.75 is 0.03125"))
}

fn rotation(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    // Uniform random unit quaternion.
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (w, x, y, z) = (a * (TAU * u2).sin(), a * (TAU * u2).cos(), b * (TAU * u3).sin(), b * (TAU * u3).cos());
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
        [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
        [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

fn transform(pose: &SkeletonPose, r: &[[f64; 3]; 3], s: f64, t: [f64; 3]) -> SkeletonPose {
    pose_from(pose.joints.map(|p| std::array::from_fn(|i| s * (r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2]) + t[i])))
}

fn random_cloud(rng: &mut ChaCha8Rng) -> SkeletonPose {
    pose_from(std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))))
}

fn procrustes() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let truth = random_cloud(&mut rng);
        let r = rotation(&mut rng);
        let s = rng.random_range(0.2..5.0);
        let t = std::array::from_fn(|_| rng.random_range(-3.0..3.0));
        let pred = transform(&truth, &r, s, t);
        worst = worst.max(p_mpjpe(&[pred], &[truth]).unwrap().overall_mm);
    }
    ensure(worst < 1e-6, format!("worst p-mpjpe {worst:e} mm"))?;
    for _ in 0..20 {
        let truth = random_cloud(&mut rng);
        let mut pred = transform(&truth, &rotation(&mut rng), rng.random_range(0.5..2.0), [0.3, -0.2, 0.1]);
        pred.joints.iter_mut().flatten().for_each(|v| *v += rng.random_range(-0.2..0.2));
        let tf = fit_similarity(&pred.joints, &truth.joints, true).unwrap();
        let best = squared_residual(&tf.apply(&pred), &truth);
        for c in 0..10_000 {
            // Half the candidates perturb the optimum, half are unrelated.
            let candidate = if c % 2 == 0 {
                let r = rotation(&mut rng);
                let blend = rng.random_range(0.0..0.05);
                let rot = std::array::from_fn(|i| std::array::from_fn(|j| (1.0 - blend) * tf.rotation[i][j] + blend * r[i][j]));
                AlignmentTransform {
                    rotation: orthonormalize(rot),
                    scale: tf.scale * rng.random_range(0.95..1.05),
                    translation: std::array::from_fn(|i| tf.translation[i] + rng.random_range(-0.05..0.05)),
                }
            } else {
                AlignmentTransform {
                    rotation: rotation(&mut rng),
                    scale: rng.random_range(0.1..3.0),
                    translation: std::array::from_fn(|_| rng.random_range(-2.0..2.0)),
                }
            };
            let r = squared_residual(&candidate.apply(&pred), &truth);
            ensure(best <= r * (1.0 + 1e-12), format!("candidate residual {r} below optimum {best}"))?;
        }
    }
    within(start.elapsed(), Duration::from_secs(60))?;
    Ok(format!("worst aligned error {worst:.1e} mm over 1000 poses; 20 x 10000 candidates never beat the fit; {:.2?}", start.elapsed()))
}

/// Gram-Schmidt on the rows, keeping a right-handed frame.
fn orthonormalize(m: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let norm = |v: [f64; 3]| {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        v.map(|x| x / n)
    };
    let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let a = norm(m[0]);
    let d = dot(m[1], a);
    let b = norm(std::array::from_fn(|i| m[1][i] - d * a[i]));
    let c = [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
    [a, b, c]
}

fn channel() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=12);
        let paths: Vec<PathComponent> = (0..n)
            .map(|_| PathComponent {
                attenuation: Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
                delay: rng.random_range(0.0..1e-7),
                kind: if rng.random_bool(0.5) { PathKind::Static } else { PathKind::Dynamic },
            })
            .collect();
        let f = rng.random_range(4.99e9..5.01e9);
        let term = |p: &PathComponent| {
            let cycles = (f * p.delay).rem_euclid(1.0);
            p.attenuation * Complex64::from_polar(1.0, -TAU * cycles)
        };
        let mut oracle = Complex64::new(0.0, 0.0);
        let (mut st, mut dy) = (oracle, oracle);
        for p in &paths {
            oracle += term(p);
            match p.kind {
                PathKind::Static => st += term(p),
                PathKind::Dynamic => dy += term(p),
            }
        }
        let total = channel_response(&paths, f);
        let (s, d) = decompose_response(&paths, f);
        worst = worst.max((total - oracle).norm()).max((s - st).norm()).max((d - dy).norm()).max((s + d - total).norm());
    }
    ensure(worst <= 1e-12, format!("worst deviation {worst:e}"))?;
    Ok(format!("1000 random path sets, worst deviation {worst:.1e}"))
}

fn subset_loss(net: &PoseNet, params: &ParamStore, samples: &[Sample], mode: Mode) -> f64 {
    let mut tape = Tape::new();
    let input = tape.input(stack_images(samples.iter().map(|s| &s.image)).unwrap());
    let fwd = net.forward(&mut tape, params, input, mode).unwrap();
    let truth: Vec<f64> = samples.iter().flat_map(|s| s.pose.to_flat()).collect();
    loss_and_gradient(tape.value(fwd.output).data(), &truth, LossConfig::default()).unwrap().0.total()
}

fn pmpjpe_of(net: &PoseNet, params: &ParamStore, samples: &[&Sample]) -> f64 {
    let images: Vec<_> = samples.iter().map(|s| s.image.clone()).collect();
    let truth: Vec<_> = samples.iter().map(|s| s.pose).collect();
    p_mpjpe(&net.predict(params, &images).unwrap(), &truth).unwrap().overall_mm
}

fn overfit() -> Check {
    let start = Instant::now();
    let profile = &SubjectProfile::presets()[0];
    let rec = synthesize_recording(&SceneConfig::for_subject(profile, Scenario::Basic, 6.0, 1)).unwrap();
    let all = build_csi_images(&rec.streams, &rec.poses, &PipelineConfig::default()).unwrap().samples;
    let data: Vec<Sample> = (0..32).map(|i| all[i * all.len() / 32].clone()).collect();
    let net = PoseNet::new(NetworkSpec::default()).unwrap();
    let cfg = TrainConfig::overfit(200, data.len());
    let untrained = net.init_params(cfg.seed);
    let refs: Vec<&Sample> = data.iter().collect();
    let untrained_mm = pmpjpe_of(&net, &untrained, &refs);
    let outcome = train(&net, &data, &cfg, |_| {}).map_err(|e| e.to_string())?;
    // Same full-batch train-mode loss before the first and after the last update.
    let initial = outcome.history[0].mean_loss;
    let final_loss = subset_loss(&net, &outcome.params, &data, Mode::Train);
    let mut params = outcome.params;
    recalibrate_batch_norm(&net, &mut params, &data, cfg.batch_size).map_err(|e| e.to_string())?;
    let trained_mm = pmpjpe_of(&net, &params, &refs);
    let detail = format!(
        "loss {initial:.4} -> {final_loss:.4} ({:.2}%), train P-MPJPE {untrained_mm:.1} -> {trained_mm:.1} mm ({:.1}%), {:.0?}",
        100.0 * final_loss / initial,
        100.0 * trained_mm / untrained_mm,
        start.elapsed()
    );
    ensure(final_loss < 0.05 * initial, format!("loss ratio too high: {detail}"))?;
    ensure(trained_mm < 0.10 * untrained_mm, format!("P-MPJPE ratio too high: {detail}"))?;
    within(start.elapsed(), Duration::from_secs(30 * 60))?;
    Ok(detail)
}

fn generalization() -> Check {
    let start = Instant::now();
    let mut samples = Vec::new();
    let mut subjects = Vec::new();
    for (i, p) in SubjectProfile::presets().iter().enumerate() {
        let scene = SceneConfig::for_subject(p, Scenario::Basic, 20.0, 10 + i as u64);
        let rec = synthesize_recording(&scene).unwrap();
        for s in build_csi_images(&rec.streams, &rec.poses, &PipelineConfig::default()).unwrap().samples {
            samples.push(s);
            subjects.push(p.id.clone());
        }
    }
    let names: Vec<&str> = subjects.iter().map(String::as_str).collect();
    let four: Vec<usize> = (0..names.len()).filter(|&i| names[i] != "S5").collect();
    ensure(four.len() >= 2000, format!("only {} images from four subjects", four.len()))?;
    let within_split = split_dataset(&four.iter().map(|&i| names[i]).collect::<Vec<_>>(), &SplitPolicy::WithinSubject, 0).unwrap();
    let cross = split_dataset(&names, &SplitPolicy::CrossSubject { holdout: Some("S5".into()) }, 0).unwrap();
    let train_set: Vec<&Sample> = within_split.train.iter().map(|&i| &samples[four[i]]).collect();
    let test_set: Vec<&Sample> = within_split.test.iter().map(|&i| &samples[four[i]]).collect();
    let holdout: Vec<&Sample> = cross.test.iter().map(|&i| &samples[i]).collect();

    let net = PoseNet::new(NetworkSpec::default()).unwrap();
    let cfg = TrainConfig::default();
    let untrained_mm = pmpjpe_of(&net, &net.init_params(cfg.seed), &test_set);
    let outcome = train(&net, &train_set, &cfg, |_| {}).map_err(|e| e.to_string())?;
    let mut params = outcome.params;
    recalibrate_batch_norm(&net, &mut params, &train_set, cfg.batch_size).map_err(|e| e.to_string())?;
    let test_mm = pmpjpe_of(&net, &params, &test_set);

    let images: Vec<_> = holdout.iter().map(|s| s.image.clone()).collect();
    let truth: Vec<_> = holdout.iter().map(|s| s.pose).collect();
    let report = p_mpjpe(&net.predict(&params, &images).unwrap(), &truth).unwrap();
    let table = format_table(&NamedReport { set: "holdout:S5".into(), metric: "p-mpjpe".into(), report });
    print!("{table}");
    let header: Vec<&str> = table.lines().nth(1).unwrap().split_whitespace().collect();
    ensure(header.len() == 18 && header[0] == "MidHip" && header[17] == "Overall", "table layout")?;
    let detail = format!(
        "{} train / {} test images, test P-MPJPE {untrained_mm:.1} -> {test_mm:.1} mm ({:.1}%), S5 holdout {:.1} mm, {:.0?}",
        train_set.len(),
        test_set.len(),
        100.0 * test_mm / untrained_mm,
        report.overall_mm,
        start.elapsed()
    );
    ensure(test_mm < 0.6 * untrained_mm, format!("no generalization: {detail}"))?;
    ensure(report.overall_mm.is_finite() && report.per_joint_mm.iter().all(|v| v.is_finite()), "holdout not finite")?;
    within(start.elapsed(), Duration::from_secs(2 * 3600))?;
    Ok(detail)
}

fn pipeline_counts() -> Check {
    let rec = synthesize_recording(&SceneConfig { duration: 1.0, ..SceneConfig::default() }).unwrap();
    let frames: Vec<usize> = rec.streams.iter().map(|s| s.frames.len()).collect();
    ensure(frames == [150, 150], format!("frames {frames:?}"))?;
    ensure(rec.poses.len() == 30, format!("{} poses", rec.poses.len()))?;
    let pairs = build_csi_images(&rec.streams, &rec.poses, &PipelineConfig::default()).unwrap().samples.len();
    ensure(pairs == 27, format!("{pairs} pairs"))?;

    let sigma = 0.01;
    let scene = SceneConfig {
        body: BodyConfig { trajectory: Trajectory::Static { position: [1.5, 2.5], heading: 0.3 }, ..BodyConfig::default() },
        noise_std: sigma,
        duration: 4.0,
        seed: 8,
        ..SceneConfig::default()
    };
    let still = synthesize_recording(&scene).unwrap();
    let (mut sum, mut count) = (0.0, 0usize);
    for s in &still.streams {
        for a in 0..s.antennas {
            for k in 0..s.subcarriers {
                for c in remove_static_complex(&s.series(a, k), 150).unwrap() {
                    sum += c.norm_sqr();
                    count += 1;
                }
            }
        }
    }
    let ratio = (sum / count as f64).sqrt() / sigma;
    ensure(ratio < 1.1, format!("static residual {ratio:.3} x noise"))?;
    Ok(format!("150/150 frames, 30 poses, 27 pairs; static residual {ratio:.3} x noise RMS"))
}

fn formats() -> Check {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("rec");
    let scene = SceneConfig { duration: 1.0, seed: 21, ..SceneConfig::default() };
    let rec = synthesize_recording(&scene).unwrap();
    let manifest = RecordingManifest::for_scene("acceptance", &scene);
    write_recording(&dir, &manifest, &rec).map_err(|e| e.to_string())?;
    let back = read_recording(&dir).map_err(|e| e.to_string())?;
    ensure(back.recording == rec && back.manifest == manifest, "recording round trip differs")?;

    let stream = dir.join("rx1.csi");
    let pristine = std::fs::read(&stream).unwrap();
    let mut kinds = Vec::new();
    let mut corrupt = |bytes: Vec<u8>, want: fn(&Error) -> bool, what: &str| -> Result<(), String> {
        std::fs::write(&stream, &bytes).unwrap();
        let err = read_recording(&dir).err().ok_or(format!("{what} accepted"))?;
        ensure(want(&err) && err.exit_code() == exit::FORMAT, format!("{what}: {err}"))?;
        kinds.push(what.to_string());
        Ok(())
    };
    corrupt(pristine[..pristine.len() - 100].to_vec(), |e| matches!(e, Error::Truncated { .. }), "truncated")?;
    let mut magic = pristine.clone();
    magic[2] ^= 0x20;
    corrupt(magic, |e| matches!(e, Error::BadMagic { .. }), "bad magic")?;
    let mut version = pristine.clone();
    version[8] = 9;
    corrupt(version, |e| matches!(e, Error::UnsupportedVersion { .. }), "version")?;
    let mut order = pristine.clone();
    let frame = 8 + 16 * 90;
    let t5 = 28 + 5 * frame;
    order[t5..t5 + 8].copy_from_slice(&0.0f64.to_le_bytes());
    corrupt(order, |e| matches!(e, Error::NonMonotonic { .. }), "non-monotonic")?;
    std::fs::write(&stream, &pristine).unwrap();

    let net = PoseNet::new(NetworkSpec::with_width_divisor(8)).unwrap();
    let samples = build_csi_images(&rec.streams, &rec.poses, &PipelineConfig::default()).unwrap().samples;
    let cfg = TrainConfig { epochs: 1, ..TrainConfig::default() };
    let outcome = train(&net, &samples[..8], &cfg, |_| {}).map_err(|e| e.to_string())?;
    let ckpt = Checkpoint {
        meta: CheckpointMeta { network: net.spec().clone(), train: Some(cfg), epochs_completed: 1, split: None },
        params: outcome.params,
        adam: Some(outcome.adam),
    };
    let path = tmp.path().join("net.ckpt");
    ckpt.save(&path).map_err(|e| e.to_string())?;
    let loaded = Checkpoint::load(&path).map_err(|e| e.to_string())?;
    ensure(loaded == ckpt, "checkpoint round trip differs")?;
    let restored = loaded.network().map_err(|e| e.to_string())?;
    let img: Vec<_> = samples.iter().take(3).map(|s| s.image.clone()).collect();
    ensure(restored.predict(&loaded.params, &img).unwrap() == net.predict(&ckpt.params, &img).unwrap(), "restored predictions")?;
    let bytes = ckpt.encode();
    ensure(matches!(Checkpoint::decode(&path, &bytes[..bytes.len() - 5]), Err(Error::Truncated { .. })), "checkpoint truncation")?;
    let mut magic = bytes.clone();
    magic[0] = b'X';
    ensure(matches!(Checkpoint::decode(&path, &magic), Err(Error::BadMagic { .. })), "checkpoint magic")?;
    let mut version = bytes.clone();
    version[8] = 2;
    ensure(matches!(Checkpoint::decode(&path, &version), Err(Error::UnsupportedVersion { .. })), "checkpoint version")?;
    let other = Checkpoint {
        meta: CheckpointMeta { network: NetworkSpec::with_width_divisor(4), ..ckpt.meta.clone() },
        adam: Some(AdamState::new(&ckpt.params, Default::default())),
        params: ckpt.params.clone(),
    };
    let mismatch = other.network().err().ok_or("mismatched checkpoint accepted")?;
    ensure(mismatch.exit_code() == exit::FORMAT, format!("mismatch: {mismatch}"))?;
    Ok(format!("recording and checkpoint round trips exact; rejected: {}, checkpoint truncation/magic/version/layout", kinds.join(", ")))
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Check); 9] = [
        ("architecture conformance", architecture),
        ("gradient suite", gradients),
        ("loss unit values", losses),
        ("procrustes oracle", procrustes),
        ("channel model oracle", channel),
        ("overfit learnability", overfit),
        ("generalization signal", generalization),
        ("pipeline counts", pipeline_counts),
        ("format round trips", formats),
    ];
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail})", i + 1),
            Err(detail) => {
                println!("criterion {} {name}: FAIL ({detail})", i + 1);
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
