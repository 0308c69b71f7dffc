//! Full dress rehearsal for the acceptance suite: trains the four analytic
//! shapes at desk dims and measures every gated quantity, then probes the
//! reconstruction criteria and the single-shape training example.

use fire_core::eval::{
    chamfer, ddf_surface_points, marching_cubes, mask_iou, sample_mesh_points, track_consistency,
};
use fire_core::fields::FieldConfig;
use fire_core::fire::{
    reconstruct_from_depth, reconstruct_from_depth_sphere_traced, reconstruct_from_silhouette,
    DepthObservation, ReconConfig,
};
use fire_core::geom::{unit_sphere_exit, vec3, Vec3};
use fire_core::oracle::{sample_ddf_rays, sample_sdf_points, ShapeDataset, ShapeOracle};
use fire_core::render::{
    generate_rays, render_ddf, render_oracle_depth, sphere_trace_batch, Camera, TraceConfig,
    SIGMA_THRESHOLD,
};
use fire_core::train::{train, TrainConfig};
use std::time::Instant;

fn acceptance_shapes() -> Vec<(String, ShapeOracle)> {
    vec![
        ("sphere_small".into(), ShapeOracle::sphere(0.4).unwrap()),
        ("sphere_large".into(), ShapeOracle::sphere(0.6).unwrap()),
        (
            "box".into(),
            ShapeOracle::cuboid(vec3(0.35, 0.45, 0.55)).unwrap(),
        ),
        ("torus".into(), ShapeOracle::torus(0.5, 0.2).unwrap()),
    ]
}

fn camera(n: usize) -> Camera {
    Camera::look_at(
        vec3(0.0, 0.0, 2.0),
        Vec3::ZERO,
        vec3(0.0, 1.0, 0.0),
        60.0,
        n,
        n,
    )
    .unwrap()
}

fn gt_points(oracle: &ShapeOracle, n: usize, seed: u64) -> Vec<Vec3> {
    let mut rng =
        <rand_chacha::ChaCha12Rng as rand_chacha::rand_core::SeedableRng>::seed_from_u64(seed);
    (0..n).map(|_| oracle.sample_surface(&mut rng)).collect()
}

/// Average SDF evaluations per ray that actually hits, via a full trace of
/// the camera bundle.
fn per_hit_ray_evals(
    models: &fire_core::fields::Models,
    z: &[f64],
    cam: &Camera,
) -> (f64, f64, usize) {
    let bundle = generate_rays(cam).unwrap();
    let starts: Vec<Vec3> = bundle.sphere_hits.iter().map(|&(_, p, _)| p).collect();
    let dirs: Vec<Vec3> = bundle
        .sphere_hits
        .iter()
        .map(|&(i, _, _)| bundle.dirs[i])
        .collect();
    let max_ts: Vec<f64> = starts
        .iter()
        .zip(&dirs)
        .map(|(&p, &r)| unit_sphere_exit(p, r))
        .collect();
    let res = sphere_trace_batch(
        |xs| models.sdf_eval_batch(z, xs),
        &starts,
        &dirs,
        &max_ts,
        &TraceConfig::truncated(),
    );
    let hits: Vec<&fire_core::render::TraceResult> = res.iter().filter(|r| r.hit).collect();
    let avg_hit = hits.iter().map(|r| r.evals as f64).sum::<f64>() / hits.len().max(1) as f64;
    let avg_all = res.iter().map(|r| r.evals as f64).sum::<f64>() / res.len().max(1) as f64;
    (avg_hit, avg_all, hits.len())
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let iterations: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(12_000);
    let samples: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(128);

    let shapes = acceptance_shapes();
    println!("== datasets (8k+8k sdf, 16k hit, 16k miss per shape) ==");
    let t0 = Instant::now();
    let datasets: Vec<ShapeDataset> = shapes
        .iter()
        .enumerate()
        .map(|(i, (_, o))| ShapeDataset {
            sdf: sample_sdf_points(o, 8000, 8000, (0.005, 0.05), 100 + i as u64),
            ddf: sample_ddf_rays(o, 16000, 16000, 200 + i as u64).unwrap(),
        })
        .collect();
    println!("datasets in {:.1}s", t0.elapsed().as_secs_f64());

    let cfg = TrainConfig {
        field: FieldConfig::default(),
        iterations,
        samples_per_shape: samples,
        shapes_per_batch: 4,
        seed: 7,
        ..TrainConfig::default()
    };
    println!("== training {iterations} iterations, {samples} samples/shape ==");
    let t0 = Instant::now();
    let out = train(&datasets, &cfg).unwrap();
    let train_secs = t0.elapsed().as_secs_f64();
    println!(
        "training {:.1}s ({:.3}s/step)",
        train_secs,
        train_secs / iterations as f64
    );
    for probe in [0, iterations / 4, iterations / 2, 3 * iterations / 4, iterations - 1] {
        let l = &out.log[probe];
        println!(
            "  iter {:>6}: loss {:.4} L_s {:.5} L_d {:.5} L_sig {:.5} L_tv {:.2} L_ts {:.5}",
            l.iter, l.loss, l.l_s, l.l_d, l.l_sigma, l.l_tv, l.l_ts
        );
    }
    let tail = &out.log[iterations - 100..];
    println!(
        "trailing-100: L_s {:.5} L_d {:.5} L_sig {:.5} L_ts {:.5}",
        tail.iter().map(|l| l.l_s).sum::<f64>() / 100.0,
        tail.iter().map(|l| l.l_d).sum::<f64>() / 100.0,
        tail.iter().map(|l| l.l_sigma).sum::<f64>() / 100.0,
        tail.iter().map(|l| l.l_ts).sum::<f64>() / 100.0
    );

    let ck = &out.checkpoint;
    let cam128 = camera(128);
    let mut pooled_track = Vec::new();
    let mut pooled_l1 = Vec::new();
    println!("== per-shape metrics (128^3 meshes) ==");
    for (i, (name, oracle)) in shapes.iter().enumerate() {
        let z = ck.latent(i).unwrap();
        let held_out = sample_ddf_rays(oracle, 2000, 0, 999 + i as u64).unwrap();
        let frac = track_consistency(&ck.models, z, &held_out, 0.02);
        pooled_track.push((frac, held_out.len()));

        let gt = render_oracle_depth(oracle, &cam128).unwrap();
        let (dd, _) = render_ddf(&ck.models, z, &cam128, SIGMA_THRESHOLD, 1).unwrap();
        let l1 = dd.masked_l1(&gt).unwrap_or(f64::NAN);
        let mutual = (0..dd.mask.len()).filter(|&k| dd.mask[k] && gt.mask[k]).count();
        pooled_l1.push((l1, mutual));
        let iou = mask_iou(&dd.mask, &gt.mask);

        let t0 = Instant::now();
        let mesh = marching_cubes(&ck.models, z, 128, 0.001).unwrap();
        let mesh_pts = sample_mesh_points(&mesh, 10_000, 50 + i as u64);
        let gt_pts = gt_points(oracle, 10_000, 60 + i as u64);
        let cd = chamfer(&mesh_pts, &gt_pts).unwrap() * 1000.0;
        let mesh_secs = t0.elapsed().as_secs_f64();

        let ddf_pts = ddf_surface_points(&ck.models, z, 10_000, SIGMA_THRESHOLD, 70 + i as u64);
        let (cd_ddf, agree) = match ddf_pts {
            Ok(pts) => (
                chamfer(&pts, &gt_pts).unwrap() * 1000.0,
                chamfer(&pts, &mesh_pts).unwrap(),
            ),
            Err(e) => {
                println!("  {name}: ddf points failed: {e}");
                (f64::NAN, f64::NAN)
            }
        };
        let (hit_evals, all_evals, hits) = per_hit_ray_evals(&ck.models, z, &cam128);
        println!(
            "  {name}: track {frac:.3} | depthL1 {l1:.4} iou {iou:.3} | cd_sdf128 {cd:.3} ({mesh_secs:.0}s) cd_ddf {cd_ddf:.3} agree {agree:.6} | evals/hit-ray {hit_evals:.1} evals/sphere-ray {all_evals:.1} (hits {hits})"
        );
    }
    let track_pool: f64 = pooled_track.iter().map(|(f, n)| f * *n as f64).sum::<f64>()
        / pooled_track.iter().map(|(_, n)| *n as f64).sum::<f64>();
    let l1_pool: f64 = pooled_l1.iter().map(|(l, n)| l * *n as f64).sum::<f64>()
        / pooled_l1.iter().map(|(_, n)| *n as f64).sum::<f64>();
    println!("pooled: track {track_pool:.4} depthL1 {l1_pool:.4}");

    // criterion 6 rehearsal: held-out sphere R=0.5, 48x48 oracle depth
    println!("== criterion 6 rehearsal (held-out sphere, 48x48, 1000 iters) ==");
    let held = ShapeOracle::sphere(0.5).unwrap();
    let cam48 = camera(48);
    let obs = DepthObservation::new(render_oracle_depth(&held, &cam48).unwrap(), cam48.clone())
        .unwrap();
    let rc = ReconConfig::depth_mode();
    let t0 = Instant::now();
    let (zstar, diag) = reconstruct_from_depth(&ck.models, &obs, &rc).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let first = diag.trace.first().unwrap();
    let last = diag.trace.last().unwrap();
    println!(
        "fire {:.1}s ({:.0} ms/iter): L_D {:.4} -> {:.4} ({:.1}% reduction)",
        secs,
        1000.0 * secs / rc.iterations as f64,
        first.l_d,
        last.l_d,
        100.0 * (1.0 - last.l_d / first.l_d)
    );
    let mesh = marching_cubes(&ck.models, &zstar, 128, 0.001).unwrap();
    if mesh.tri_count() > 0 {
        let mesh_pts = sample_mesh_points(&mesh, 10_000, 31);
        let gt_pts = gt_points(&held, 10_000, 32);
        println!(
            "recon chamfer x1000 (128^3): {:.3}",
            chamfer(&mesh_pts, &gt_pts).unwrap() * 1000.0
        );
    } else {
        println!("recon mesh EMPTY");
    }

    // criterion 7 rehearsal: silhouette self-reconstruction of the box
    println!("== criterion 7 rehearsal (box silhouette, 48x48, 1000 iters) ==");
    let box_oracle = &shapes[2].1;
    let gt_mask_img = render_oracle_depth(box_oracle, &cam48).unwrap();
    let rc_sil = ReconConfig::silhouette_mode();
    let t0 = Instant::now();
    let (zsil, sil_diag) =
        reconstruct_from_silhouette(&ck.models, &gt_mask_img.mask, &cam48, &rc_sil).unwrap();
    println!(
        "silhouette {:.1}s, final L_rec {:.4}",
        t0.elapsed().as_secs_f64(),
        sil_diag.trace.last().unwrap().l_rec
    );
    let (rimg, _) = render_ddf(&ck.models, &zsil, &cam48, SIGMA_THRESHOLD, 1).unwrap();
    println!(
        "silhouette recon IoU: {:.3}",
        mask_iou(&rimg.mask, &gt_mask_img.mask)
    );

    // criterion 5 rehearsal: short timing comparison at 128x128
    println!("== criterion 5 rehearsal (128x128 timing, 3 warmup + 7 iters) ==");
    let obs128 = DepthObservation::new(
        render_oracle_depth(&held, &cam128).unwrap(),
        cam128.clone(),
    )
    .unwrap();
    let mut short = ReconConfig::depth_mode();
    short.iterations = 10;
    let t0 = Instant::now();
    let (_, fire_diag) = reconstruct_from_depth(&ck.models, &obs128, &short).unwrap();
    let fire_ms = 1000.0 * t0.elapsed().as_secs_f64() / 10.0;
    let t0 = Instant::now();
    let (_, base_diag) = reconstruct_from_depth_sphere_traced(&ck.models, &obs128, &short).unwrap();
    let base_ms = 1000.0 * t0.elapsed().as_secs_f64() / 10.0;
    println!(
        "fire {fire_ms:.0} ms/iter vs baseline {base_ms:.0} ms/iter -> ratio {:.2}x (need >= 5x); evals/iter fire {} baseline {}",
        base_ms / fire_ms,
        (fire_diag.ddf_evals + fire_diag.sdf_evals) / 10,
        base_diag.sdf_evals / 10
    );

    // single-sphere training example thresholds
    println!("== single sphere, 2000 iterations ==");
    let sphere = ShapeOracle::sphere(0.5).unwrap();
    let data = ShapeDataset {
        sdf: sample_sdf_points(&sphere, 8000, 8000, (0.005, 0.05), 11),
        ddf: sample_ddf_rays(&sphere, 16000, 16000, 12).unwrap(),
    };
    let cfg1 = TrainConfig {
        field: FieldConfig::default(),
        iterations: 2000,
        samples_per_shape: 128,
        shapes_per_batch: 1,
        seed: 3,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let out1 = train(&[data], &cfg1).unwrap();
    println!("trained in {:.0}s", t0.elapsed().as_secs_f64());
    let tail = &out1.log[1900..];
    let (ls, ld): (f64, f64) = (
        tail.iter().map(|l| l.l_s).sum::<f64>() / 100.0,
        tail.iter().map(|l| l.l_d).sum::<f64>() / 100.0,
    );
    println!("trailing-100 L_s {ls:.5} L_d {ld:.5}");
    let ck1 = &out1.checkpoint;
    let z1 = ck1.latent(0).unwrap();
    let (d, sig) = ck1
        .models
        .ddf_eval(z1, vec3(0.0, 0.0, 1.0), vec3(0.0, 0.0, -1.0));
    let (_, sig_miss) = ck1
        .models
        .ddf_eval(z1, vec3(0.0, 0.0, 1.0), vec3(0.0, 1.0, 0.0));
    println!("center ray d {d:.4} sigma {sig:.4}; tangent-miss sigma {sig_miss:.4}");
    let cam65 = camera(65);
    let (img, _) = render_ddf(&ck1.models, z1, &cam65, SIGMA_THRESHOLD, 1).unwrap();
    let c = 32 * 65 + 32;
    println!(
        "center pixel lambda {:.4} (mask {})",
        img.depth[c], img.mask[c]
    );
    let surf = ck1.models.sdf_eval(z1, vec3(0.0, 0.0, 0.5));
    println!("|f_s| at surface point: {:.5}", surf.abs());
}
