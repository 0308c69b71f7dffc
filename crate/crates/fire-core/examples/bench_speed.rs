use fire_core::diffcore::{Tape, Tensor};
use fire_core::fields::{ddf_forward_tape, sdf_forward_tape, FieldConfig, Models};
use fire_core::geom::vec3;
use rand_chacha::rand_core::SeedableRng;
use std::time::Instant;

fn main() {
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(1);
    let models = Models::init(FieldConfig::default(), &mut rng);
    let cfg = models.config;
    let z = vec![0.01; cfg.latent_dim];

    // raw DDF batch eval throughput
    let n = 4096;
    let ps: Vec<_> = (0..n).map(|i| vec3(0.0, (i as f64/n as f64)*0.5+0.1, 0.8).normalized()).collect();
    let rs: Vec<_> = ps.iter().map(|p| (-*p).normalized()).collect();
    let t0 = Instant::now();
    let (d, _س) = models.ddf_eval_batch(&z, &ps, &rs);
    let dt = t0.elapsed().as_secs_f64();
    let flops = n as f64 * 872_000.0 * 2.0;
    println!("raw ddf: {n} rays in {:.3}s -> {:.2} Gflop/s, d[0]={:.3}", dt, flops/dt/1e9, d[0]);

    // raw SDF
    let xs: Vec<_> = (0..n).map(|i| vec3(0.3, -0.2, (i % 100) as f64 * 0.005)).collect();
    let t0 = Instant::now();
    let s = models.sdf_eval_batch(&z, &xs);
    let dt = t0.elapsed().as_secs_f64();
    println!("raw sdf: {n} pts in {:.4}s -> {:.2} Gflop/s, s[0]={:.4}", dt, n as f64*93_700.0*2.0/dt/1e9, s[0]);

    // tape fwd+bwd training-step-like cost: 256 sdf + 256 ddf rows
    let b = 256;
    let t0 = Instant::now();
    let mut tape = Tape::new();
    let sb = models.sdf.bind(&mut tape, false);
    let db = models.ddf.bind(&mut tape, false);
    let pb = models.planes.bind(&mut tape, false);
    let zn = tape.leaf(Tensor::new(vec![1, cfg.latent_dim], z.clone()));
    let zs = tape.tile_rows(zn, b);
    let xrows: Vec<Vec<f64>> = (0..b).map(|i| vec![0.1, 0.2, (i as f64)*0.001]).collect();
    let xn = tape.constant(Tensor::from_rows(&xrows));
    let s = sdf_forward_tape(&mut tape, &sb, &pb, zs, xn, cfg.n_freq);
    let prrows: Vec<Vec<f64>> = (0..b).map(|i| vec![0.0, 0.6, 0.8, 0.0, -0.6, -(0.8+(i as f64)*1e-4)]).collect();
    let prn = tape.constant(Tensor::from_rows(&prrows));
    let (dn, sgn) = ddf_forward_tape(&mut tape, &db, &pb, zs, prn, cfg.n_freq);
    let l1 = tape.l1(s);
    let l2 = tape.l1(dn);
    let l3 = tape.l1(sgn);
    let t = tape.add(l1, l2);
    let t = tape.add(t, l3);
    // plus TV over all 18 planes
    let mut tv = None;
    for leaf in pb.sdf.iter().chain(pb.ddf.iter()) {
        let c = tape.tv_plane(*leaf);
        tv = Some(match tv { None => c, Some(prev) => tape.add(prev, c) });
    }
    let t = tape.add(t, tv.unwrap());
    let build = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    tape.backward(t);
    let bwd = t1.elapsed().as_secs_f64();
    println!("tape step (256+256 rows + tv): fwd-build {:.3}s, backward {:.3}s, total {:.3}s", build, bwd, build+bwd);
    println!("loss = {}", tape.value(t).item());
}
