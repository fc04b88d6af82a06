//! Acceptance suite: one test per criterion, each printing a single
//! `PASS`/`FAIL` line on stderr (written directly so it survives capture).

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use svf_atlas::atlas::{atlas_forward, forward_data_term_atlas_space};
use svf_atlas::eval::{
    count_folds, dice, eval_atlas_space, eval_atlas_space_pairwise, eval_bridge, eval_image_space, plurality_vote,
};
use svf_atlas::grid::{jacobian_determinant, warp};
use svf_atlas::io;
use svf_atlas::losses::bending_energy;
use svf_atlas::optim::{all_pairs, el_gradient_pairwise, fd_gradient, pairwise_energy};
use svf_atlas::svf::{compose, integrate, integrate_inverse};
use svf_atlas::synth::random_smooth_velocity;
use svf_atlas::*;

fn report(id: u32, pass: bool, detail: &str, started: Instant) {
    let line = format!(
        "{} criterion {id}: {detail} [{:.1}s]\n",
        if pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {id} failed: {detail}");
}

fn shape2(nx: usize, ny: usize) -> GridShape {
    GridShape::new(&[nx, ny]).unwrap()
}

fn blob(shape: &GridShape, cx: f64, cy: f64, r: f64) -> ScalarField64 {
    ScalarField::from_fn(shape.clone(), |c| {
        let (dx, dy) = (c[0] as f64 - cx, c[1] as f64 - cy);
        (-(dx * dx + dy * dy) / (2.0 * r * r)).exp()
    })
}

fn interior_max(map: &DeformationMap64, margin: usize) -> f64 {
    let d = map.shape().ndim();
    map.shape()
        .interior_indices(margin)
        .into_iter()
        .map(|x| {
            let u = map.displacement().at(x);
            (0..d).map(|a| u[a].abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

fn concat(fields: &[VectorField64]) -> Vec<f64> {
    fields.iter().flat_map(|f| f.values().iter().copied()).collect()
}

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

// 1. Gradient fidelity

#[test]
fn criterion_1_gradient_fidelity() {
    let started = Instant::now();
    let s = shape2(16, 16);
    let steps = 4;
    let atlas = blob(&s, 7.5, 7.5, 3.0);
    let images = vec![blob(&s, 7.0, 8.0, 3.0), blob(&s, 8.5, 7.0, 2.7), blob(&s, 7.5, 6.5, 3.3)];
    let window = |c: [usize; 3]| {
        let f = |x: usize| (std::f64::consts::PI * x as f64 / 15.0).sin();
        f(c[0]) * f(c[1])
    };
    let velocities: Vec<VectorField64> = (0..3)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + k);
            let raw = random_smooth_velocity(&s, 1.0, 3.0, &mut rng);
            let w = VectorField::from_fn(s.clone(), |c| {
                let u = raw.at(s.index(&c[..2]));
                [u[0] * window(c), u[1] * window(c), 0.0]
            });
            let m = w.max_norm();
            w.scaled(0.3 / m)
        })
        .collect();
    let pairs = all_pairs(3);
    let blocks = [
        ("data", LossWeights { sim_weight: 1.0, lambda: 0.0, gamma1: 0.0, gamma2: 0.0 }),
        ("reg", LossWeights { sim_weight: 0.0, lambda: 1.0, gamma1: 0.0, gamma2: 0.0 }),
        ("pair_atlas", LossWeights { sim_weight: 0.0, lambda: 0.0, gamma1: 1.0, gamma2: 0.0 }),
        ("pair_image", LossWeights { sim_weight: 0.0, lambda: 0.0, gamma1: 0.0, gamma2: 1.0 }),
        ("combined", LossWeights { sim_weight: 1.0, lambda: 1.0, gamma1: 1.0, gamma2: 1.0 }),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, w) in blocks {
        let fd: Vec<VectorField64> = (0..3)
            .map(|i| {
                fd_gradient(
                    |x: &VectorField64| {
                        let mut all = velocities.clone();
                        all[i] = x.clone();
                        Ok(pairwise_energy(&images, &atlas, &all, &w, Similarity::Mse, &pairs, steps)?.total)
                    },
                    &velocities[i],
                    1e-5,
                )
                .unwrap()
            })
            .collect();
        let fd = concat(&fd);
        let errs: Vec<f64> = [2, 4, 8]
            .iter()
            .map(|&t| {
                let r = el_gradient_pairwise(&images, &atlas, &velocities, &w, Similarity::Mse, &pairs, t, steps).unwrap();
                rel_l2(&concat(&r.gradients), &fd)
            })
            .collect();
        let final_ok = errs[2] <= 5e-2;
        // the regularizer block has no time integral, so its error cannot depend on T
        let t_free = name == "reg";
        let trend_ok = if t_free {
            errs.iter().all(|&e| (e - errs[0]).abs() <= 1e-12)
        } else {
            errs[0] > errs[1] && errs[1] > errs[2]
        };
        pass &= final_ok && trend_ok;
        parts.push(format!(
            "{name} T2/4/8 {:.2e}/{:.2e}/{:.2e}{}",
            errs[0],
            errs[1],
            errs[2],
            if t_free { " (T-independent)" } else { "" }
        ));
    }
    report(1, pass, &format!("gradient vs FD, tol 5e-2, decreasing in T: {}", parts.join("; ")), started);
}

// 2. Closed-form atlas optimality

#[test]
fn criterion_2_closed_form_atlas() {
    let started = Instant::now();
    let s = shape2(8, 8);
    let mut warped = Vec::new();
    let mut jacs = Vec::new();
    for k in 0..4u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + k);
        let v = random_smooth_velocity(&s, 1.2, 1.5, &mut rng);
        let fwd = integrate(&v, 6).unwrap();
        let img = ScalarField::from_fn(s.clone(), |c| ((c[0] * 7 + c[1] * 3 + k as usize * 5) % 11) as f64 / 10.0);
        warped.push(warp(&img, &fwd).unwrap());
        jacs.push(jacobian_determinant(&fwd));
    }
    let atlas = atlas_forward(&warped, &jacs).unwrap();

    // per-voxel quadratic f(a) = Σ w_i (a - x_i)², located from three samples
    let mut lsq_err: f64 = 0.0;
    for x in 0..s.len() {
        let f = |a: f64| (0..4).map(|i| jacs[i].values()[x] * (a - warped[i].values()[x]).powi(2)).sum::<f64>();
        let (fm, f0, fp) = (f(-1.0), f(0.0), f(1.0));
        let vertex = (fm - fp) / (2.0 * (fm - 2.0 * f0 + fp));
        lsq_err = lsq_err.max((vertex - atlas.values()[x]).abs());
    }

    let base = forward_data_term_atlas_space(&atlas, &warped, &jacs).unwrap();
    let mut decreased = 0;
    for x in 0..s.len() {
        for delta in [1e-3, -1e-3] {
            let mut a = atlas.clone();
            a.values_mut()[x] += delta;
            if forward_data_term_atlas_space(&a, &warped, &jacs).unwrap() < base {
                decreased += 1;
            }
        }
    }
    let pass = lsq_err <= 1e-12 && decreased == 0;
    report(
        2,
        pass,
        &format!("max |closed form - brute force| {lsq_err:.1e} (tol 1e-12), perturbations lowering the data term {decreased}/128"),
        started,
    );
}

// 3. Diffeomorphism suite

#[test]
fn criterion_3_diffeomorphisms() {
    let started = Instant::now();
    let s = shape2(48, 48);
    let max_speed = 4.0;
    // trajectories starting closer to the border than the largest displacement
    // may leave the grid and be clamped, so they are not part of the interior
    let margin = max_speed as usize;
    let (mut worst_ic, mut worst_k, mut folds) = (0.0f64, 0.0f64, 0usize);
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let v = random_smooth_velocity(&s, max_speed, 4.0, &mut rng);
        let fwd = integrate(&v, 6).unwrap();
        let inv = integrate_inverse(&v, 6).unwrap();
        worst_ic = worst_ic.max(interior_max(&compose(&fwd, &inv).unwrap(), margin));
        worst_ic = worst_ic.max(interior_max(&compose(&inv, &fwd).unwrap(), margin));
        folds += count_folds(&fwd) + count_folds(&inv);
        let fine = integrate(&v, 8).unwrap();
        let mut diff = fwd.displacement().clone();
        diff.add_scaled(fine.displacement(), -1.0);
        worst_k = worst_k.max(interior_max(&DeformationMap::from_displacement(diff), margin));
    }
    let pass = worst_ic <= 0.5 && folds == 0 && worst_k <= 1e-2;
    report(
        3,
        pass,
        &format!(
            "20 velocities, interior margin {margin}: inverse consistency {worst_ic:.3} (tol 0.5), folds {folds}, K=6 vs K=8 {worst_k:.2e} (tol 1e-2)"
        ),
        started,
    );
}

// 4. Affine absorption

fn affine_map(shape: &GridShape, m: [[f64; 2]; 2], t: [f64; 2]) -> DeformationMap64 {
    DeformationMap::from_fn(shape.clone(), |x| {
        [
            m[0][0] * x[0] + m[0][1] * x[1] + t[0],
            m[1][0] * x[0] + m[1][1] * x[1] + t[1],
            0.0,
        ]
    })
}

#[test]
fn criterion_4_affine_absorption() {
    let started = Instant::now();
    use rand::Rng;
    let s = shape2(24, 20);
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    let mut worst_bend: f64 = 0.0;
    for _ in 0..50 {
        let mut r = || rng.random_range(-0.3..0.3);
        let m = [[1.0 + r(), r()], [r(), 1.0 + r()]];
        let t = [5.0 * r(), 5.0 * r()];
        worst_bend = worst_bend.max(bending_energy(&affine_map(&s, m, t)).unwrap().abs());
    }

    let cfg = SynthConfig {
        count: 2,
        velocity_scale: 0.0,
        noise_sigma: 0.0,
        affine_scale: 0.05,
        seed: 41,
        ..SynthConfig::default()
    };
    let synth = generate::<f64>(&cfg).unwrap();
    let (atlas, image) = (&synth.cohort.images()[0], &synth.cohort.images()[1]);
    let shape = atlas.shape();
    let mse = |a: &ScalarField64| {
        a.values().iter().zip(image.values()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / shape.len() as f64
    };
    let before = mse(atlas);
    let opt = OptimConfig {
        epochs: 400,
        ..OptimConfig::default()
    };
    let r = register(atlas, image, &opt).unwrap();
    let after = mse(&warp(atlas, &r.inverse).unwrap());
    let pass = worst_bend <= 1e-10 && after <= 1e-3;
    report(
        4,
        pass,
        &format!(
            "max bending of 50 affine maps {worst_bend:.1e} (tol 1e-10); affine-only pair warped MSE {before:.2e} -> {after:.2e} (tol 1e-3)"
        ),
        started,
    );
}

// 5. Pairwise-loss benefit

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

#[test]
fn criterion_5_pairwise_benefit() {
    let started = Instant::now();
    let settings = [("vanilla", 0.0, 0.0), ("gamma1", 1.0, 0.0), ("gamma2", 0.0, 1.0)];
    let mut finals: Vec<Vec<f64>> = vec![Vec::new(); settings.len()];
    for seed in 0..5u64 {
        let synth = generate::<f64>(&SynthConfig {
            seed: 17 + seed,
            ..SynthConfig::default()
        })
        .unwrap();
        let segs = synth.cohort.labels().unwrap();
        for (k, &(_, g1, g2)) in settings.iter().enumerate() {
            let mut cfg = OptimConfig::default();
            cfg.seed = 17 + seed;
            cfg.weights.gamma1 = g1;
            cfg.weights.gamma2 = g2;
            let r = run_atlas_build(&synth.cohort, &cfg).unwrap();
            let bridge = eval_bridge(segs, &r.forward_maps, &r.inverse_maps).unwrap();
            let all: Vec<u32> = (1..=bridge.num_structures() as u32).collect();
            finals[k].push(bridge.group_stats(&all).0);
        }
    }
    let med: Vec<f64> = finals.iter().map(|f| median(f.clone())).collect();
    let pass = med[2] > med[0] && med[2] >= med[1];
    report(
        5,
        pass,
        &format!(
            "median final mean d_bridge over 5 seeds: vanilla {:.4}, gamma1 {:.4}, gamma2 {:.4}",
            med[0], med[1], med[2]
        ),
        started,
    );
}

// 6. Inverse-map oracle

#[test]
fn criterion_6_numeric_inverse() {
    let started = Instant::now();
    let s = shape2(32, 32);
    let interior = s.interior_indices(1);
    let (mut worst, mut monotone) = (0.0f64, true);
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + seed);
        let v = random_smooth_velocity(&s, 2.5, 4.0, &mut rng);
        let map = integrate(&v, 6).unwrap();
        let r = numeric_inverse(&map, &InverseConfig::default()).unwrap();
        monotone &= r.history.windows(2).all(|p| p[1] <= p[0]);
        let exact = integrate_inverse(&v, 6).unwrap();
        let err: f64 = interior
            .iter()
            .map(|&x| {
                let (a, b) = (r.map.point(x), exact.point(x));
                ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
            })
            .sum::<f64>()
            / interior.len() as f64;
        worst = worst.max(err);
    }
    let pass = worst <= 0.25 && monotone;
    report(
        6,
        pass,
        &format!("10 maps: worst interior mean distance to flow inverse {worst:.3} (tol 0.25), residual non-increasing {monotone}"),
        started,
    );
}

// 7. Evaluation measures

fn shifted(seg: &LabelField, t: [i64; 2]) -> Vec<u32> {
    let n = 8i64;
    (0..64)
        .map(|i| {
            let (x, y) = (i % n, i / n);
            let sx = (x + t[0]).clamp(0, n - 1);
            let sy = (y + t[1]).clamp(0, n - 1);
            seg.labels()[(sx + n * sy) as usize]
        })
        .collect()
}

fn dice_oracle(a: &[u32], b: &[u32], k: u32) -> f64 {
    let ca = a.iter().filter(|&&l| l == k).count();
    let cb = b.iter().filter(|&&l| l == k).count();
    let both = a.iter().zip(b).filter(|(&x, &y)| x == k && y == k).count();
    if ca + cb == 0 {
        1.0
    } else {
        2.0 * both as f64 / (ca + cb) as f64
    }
}

fn vote_oracle(segs: &[Vec<u32>], labels: u32) -> Vec<u32> {
    (0..segs[0].len())
        .map(|x| {
            let mut best = (0usize, 0u32);
            for l in 0..=labels {
                let c = segs.iter().filter(|s| s[x] == l).count();
                if c > best.0 {
                    best = (c, l);
                }
            }
            best.1
        })
        .collect()
}

fn rect_seg(s: &GridShape, rects: &[(usize, usize, usize, usize, u32)]) -> LabelField {
    let labels = (0..64)
        .map(|i| {
            let (x, y) = (i % 8, i / 8);
            rects
                .iter()
                .filter(|r| (r.0..r.1).contains(&x) && (r.2..r.3).contains(&y))
                .map(|r| r.4)
                .last()
                .unwrap_or(0)
        })
        .collect();
    LabelField::new(s.clone(), labels, 2).unwrap()
}

#[test]
fn criterion_7_evaluation_measures() {
    let started = Instant::now();
    let s = shape2(8, 8);
    let segs = vec![
        rect_seg(&s, &[(1, 5, 1, 5, 1), (5, 7, 2, 7, 2)]),
        rect_seg(&s, &[(2, 6, 1, 5, 1), (5, 8, 3, 7, 2)]),
        rect_seg(&s, &[(1, 5, 2, 6, 1), (4, 7, 2, 6, 2)]),
        rect_seg(&s, &[(2, 5, 2, 5, 1), (5, 7, 1, 6, 2)]),
    ];
    let fwd_t: [[i64; 2]; 4] = [[0, 0], [1, 0], [0, 1], [-1, 1]];
    let inv_t: [[i64; 2]; 4] = [[1, -1], [0, 2], [-2, 0], [1, 1]];
    let to_map = |t: [i64; 2]| DeformationMap64::translation(s.clone(), &[t[0] as f64, t[1] as f64]).unwrap();
    let fwd: Vec<_> = fwd_t.iter().map(|&t| to_map(t)).collect();
    let inv: Vec<_> = inv_t.iter().map(|&t| to_map(t)).collect();
    let raw: Vec<Vec<u32>> = segs.iter().map(|g| g.labels().to_vec()).collect();
    let mut err: f64 = 0.0;
    let mut check = |got: &[Vec<f64>], want: &[Vec<f64>]| {
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(want) {
            for (a, b) in g.iter().zip(w) {
                err = err.max((a - b).abs());
            }
        }
    };

    // Dice and vote on raw segmentations
    let dice_got: Vec<Vec<f64>> = vec![(1..=2).map(|k| dice(&segs[0], &segs[1], k).unwrap()).collect()];
    // label 1: 16 + 14 voxels (two of seg 1 overwritten by label 2), 12 shared;
    // label 2: 10 + 12 voxels, 8 shared
    check(&dice_got, &[vec![2.0 * 12.0 / 30.0, 2.0 * 8.0 / 22.0]]);
    let vote = plurality_vote(&segs).unwrap();
    let vote_err = vote.labels() != vote_oracle(&raw, 2).as_slice();

    // d_atlas with consensus and pairwise
    let pulled: Vec<Vec<u32>> = segs.iter().zip(fwd_t).map(|(g, t)| shifted(g, t)).collect();
    let consensus = vote_oracle(&pulled, 2);
    let want: Vec<Vec<f64>> = pulled.iter().map(|p| (1..=2).map(|k| dice_oracle(p, &consensus, k)).collect()).collect();
    check(&eval_atlas_space(&segs, &fwd).unwrap().scores, &want);
    let mut want = Vec::new();
    for i in 0..4 {
        for j in i + 1..4 {
            want.push((1..=2).map(|k| dice_oracle(&pulled[i], &pulled[j], k)).collect());
        }
    }
    check(&eval_atlas_space_pairwise(&segs, &fwd).unwrap().scores, &want);

    // d_image against a fixed atlas segmentation
    let atlas_seg = rect_seg(&s, &[(1, 5, 2, 5, 1), (5, 7, 2, 6, 2)]);
    let want: Vec<Vec<f64>> = (0..4)
        .map(|i| {
            let carried = shifted(&atlas_seg, inv_t[i]);
            (1..=2).map(|k| dice_oracle(&carried, &raw[i], k)).collect()
        })
        .collect();
    check(&eval_image_space(&atlas_seg, &segs, &inv).unwrap().scores, &want);

    // d_bridge: Φ^i_{0,1} ∘ Φ^j_{1,0} is the summed translation
    let want: Vec<Vec<f64>> = (0..4)
        .map(|j| {
            let carried: Vec<Vec<u32>> = (0..4)
                .filter(|&i| i != j)
                .map(|i| shifted(&segs[i], [fwd_t[i][0] + inv_t[j][0], fwd_t[i][1] + inv_t[j][1]]))
                .collect();
            let v = vote_oracle(&carried, 2);
            (1..=2).map(|k| dice_oracle(&v, &raw[j], k)).collect()
        })
        .collect();
    check(&eval_bridge(&segs, &fwd, &inv).unwrap().scores, &want);

    // ground-truth synthetic maps
    let synth = generate::<f64>(&SynthConfig::default()).unwrap();
    let bridge = eval_bridge(synth.cohort.labels().unwrap(), &synth.forward, &synth.inverse).unwrap();
    let mut gt = Vec::new();
    let mut gt_ok = true;
    for k in 1..=bridge.num_structures() as u32 {
        if synth.template_labels.count(k) >= 100 {
            let m = bridge.stats(k).0;
            gt_ok &= m >= 0.95;
            gt.push(format!("{k}:{m:.4}"));
        }
    }
    let pass = err <= 1e-12 && !vote_err && gt_ok;
    report(
        7,
        pass,
        &format!(
            "max deviation from hand oracles {err:.1e} (tol 1e-12), vote matches {}, ground-truth d_bridge {} (tol 0.95)",
            !vote_err,
            gt.join(" ")
        ),
        started,
    );
}

// 8. Determinism and formats

fn cli_binary() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(Path::parent).unwrap().to_path_buf();
    let bin = profile_dir.join(format!("svf-atlas{}", std::env::consts::EXE_SUFFIX));
    if !bin.is_file() {
        let cargo = std::env::var("CARGO").unwrap_or_else(|_| "cargo".into());
        let mut cmd = Command::new(cargo);
        cmd.args(["build", "-p", "svf-atlas-cli", "--bin", "svf-atlas"]);
        if profile_dir.file_name().is_some_and(|n| n == "release") {
            cmd.arg("--release");
        }
        let status = cmd.status().expect("cargo runs");
        assert!(status.success(), "building the CLI failed");
    }
    bin
}

fn bits(values: &[f64]) -> Vec<u64> {
    values.iter().map(|v| v.to_bits()).collect()
}

#[test]
fn criterion_8_determinism_and_formats() {
    let started = Instant::now();
    let mut notes = Vec::new();

    // identical seeds, identical outputs
    let synth_cfg = SynthConfig {
        dims: vec![32, 32],
        count: 4,
        ..SynthConfig::default()
    };
    let opt = OptimConfig {
        epochs: 12,
        atlas_refresh_period: 4,
        weights: LossWeights {
            gamma1: 0.5,
            gamma2: 0.5,
            ..OptimConfig::default().weights
        },
        ..OptimConfig::default()
    };
    let run = || {
        let synth = generate::<f64>(&synth_cfg).unwrap();
        let r = run_atlas_build(&synth.cohort, &opt).unwrap();
        let report = evaluate(
            synth.cohort.labels().unwrap(),
            &r.forward_maps,
            &r.inverse_maps,
            None,
            EvalOptions { pairwise_atlas: true, image_space: true },
        )
        .unwrap();
        let mut fields: Vec<Vec<u64>> = synth.cohort.images().iter().map(|i| bits(i.values())).collect();
        fields.push(bits(r.state.atlas.values()));
        fields.extend(r.inverse_maps.iter().map(|m| bits(m.displacement().values())));
        let log: Vec<String> = r.log.iter().map(|e| e.csv_row()).collect();
        (fields, log, report.to_csv())
    };
    let deterministic = run() == run();
    notes.push(format!("repeat runs identical {deterministic}"));

    // AFRAW and PGM roundtrips
    let dir = tempfile::tempdir().unwrap();
    let s3 = GridShape::new(&[5, 4, 3]).unwrap();
    let scalar = ScalarField32::from_fn(s3.clone(), |c| (c[0] as f32 * 0.37 - c[1] as f32) / (1.0 + c[2] as f32));
    let vector = VectorField32::from_fn(s3.clone(), |c| [c[0] as f32 * 0.1, -(c[1] as f32) / 3.0, c[2] as f32 * 1e-7]);
    let labels = LabelField::new(s3.clone(), (0..60).map(|i| (i % 4) as u32).collect(), 3).unwrap();
    io::write_scalar(&dir.path().join("s.afraw"), &scalar).unwrap();
    io::write_vector(&dir.path().join("v.afraw"), &vector).unwrap();
    io::write_labels(&dir.path().join("l.afraw"), &labels).unwrap();
    let s_back = io::read_scalar::<f32>(&dir.path().join("s.afraw")).unwrap();
    let v_back = io::read_vector::<f32>(&dir.path().join("v.afraw")).unwrap();
    let l_back = io::read_labels(&dir.path().join("l.afraw")).unwrap();
    let f32_bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let afraw_ok = f32_bits(s_back.values()) == f32_bits(scalar.values())
        && f32_bits(v_back.values()) == f32_bits(vector.values())
        && l_back == labels;
    notes.push(format!("AFRAW bit-exact {afraw_ok}"));

    let s2 = shape2(6, 5);
    let checker = ScalarField64::from_fn(s2.clone(), |c| ((c[0] + c[1]) % 2) as f64);
    let pgm_path = dir.path().join("c.pgm");
    io::export_pgm(&checker, &pgm_path).unwrap();
    let bytes = std::fs::read(&pgm_path).unwrap();
    let header = b"P5\n6 5\n255\n";
    let pixels: Vec<u8> = (0..30).map(|i| if (i % 6 + i / 6) % 2 == 1 { 255 } else { 0 }).collect();
    let pgm_ok = bytes.starts_with(header) && bytes[header.len()..] == pixels[..];
    notes.push(format!("PGM pixels exact {pgm_ok}"));

    // CLI exit codes
    let bin = cli_binary();
    let work = dir.path();
    std::fs::write(work.join("bad.txt"), "not_a_key = 1\n").unwrap();
    std::fs::write(work.join("ncc.txt"), "similarity = ncc\n").unwrap();
    std::fs::write(work.join("tiny.txt"), "dims = 12x12\ncount = 2\n").unwrap();
    std::fs::write(work.join("garbage.afraw"), "AFRAW v1 scalar 2 4 4 1 1\nshort").unwrap();
    let cases: &[(&[&str], i32)] = &[
        (&["synth", "cohort", "--config", "tiny.txt"], 0),
        (&["synth", "x", "--config", "bad.txt"], 2),
        (&["build-atlas", "cohort/manifest.txt", "o", "--config", "ncc.txt"], 2),
        (&["no-such-command"], 2),
        (&["register", "a.afraw"], 2),
        (&["synth", "missing/dir/out"], 1),
        (&["build-atlas", "nope.txt", "o"], 1),
        (&["invert", "garbage.afraw", "o.afraw"], 1),
        (&["evaluate", "cohort/manifest.txt", "empty"], 1),
    ];
    let mut bad_codes = Vec::new();
    for (args, want) in cases {
        let out = Command::new(&bin).args(*args).current_dir(work).output().unwrap();
        let got = out.status.code().unwrap_or(-1);
        if got != *want {
            bad_codes.push(format!("{} -> {got} (want {want})", args.join(" ")));
        }
    }
    let exit_ok = bad_codes.is_empty();
    notes.push(format!("CLI exit codes {}/{} as specified", cases.len() - bad_codes.len(), cases.len()));
    if !exit_ok {
        notes.push(bad_codes.join(", "));
    }
    report(8, deterministic && afraw_ok && pgm_ok && exit_ok, &notes.join(", "), started);
}
