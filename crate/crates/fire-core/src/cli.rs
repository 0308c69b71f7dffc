//! The `fire` command line: dataset generation, training, rendering,
//! reconstruction, evaluation, and benchmarking as reproducible runs.
//!
//! Exit codes: 0 success, 2 input error, 3 numeric failure.

use crate::config::KvFile;
use crate::error::{FireError, Result};
use crate::eval::{
    benchmark, chamfer, ddf_surface_points, format_bench_table, format_eval_table,
    marching_cubes_threaded, sample_mesh_points, BenchMethod, BENCH_CSV_HEADER,
};
use crate::fire::{
    reconstruct_from_depth, reconstruct_from_silhouette, DepthObservation, ReconConfig,
};
use crate::geom::{vec3, Vec3};
use crate::oracle::{
    mesh::TriMesh, sample_ddf_rays, sample_sdf_points, write_dataset, ShapeDataset, ShapeKind,
    ShapeOracle,
};
use crate::render::{
    image_io, render_oracle_depth, render_shaded, render_sphere_traced, Camera, TraceConfig,
    SIGMA_THRESHOLD,
};
use crate::train::{format_log, train, Checkpoint, TrainConfig};
use clap::{Parser, Subcommand, ValueEnum};
use std::path::{Path, PathBuf};

#[derive(Parser, Debug)]
#[command(name = "fire", version, about = "SDF/DDF neural fields: train, render, reconstruct")]
struct Cli {
    /// Threads for the parallel sections (rendering, meshing, eval).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Seed override applied to the command's RNG-dependent steps.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Key=value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample per-shape SDF/DDF datasets from a shapes spec.
    GenData {
        #[arg(long)]
        shapes: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the fields on a generated dataset directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render depth, mask and a shaded view from a checkpoint.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        shape_index: Option<usize>,
        #[arg(long)]
        z_file: Option<PathBuf>,
        #[arg(long)]
        camera: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also render the sphere-traced comparison.
        #[arg(long)]
        trace: bool,
    },
    /// Optimize a latent code from a depth map or a silhouette.
    Reconstruct {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        depth: Option<PathBuf>,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[arg(long, value_enum, default_value_t = ReconMode::Depth)]
        mode: ReconMode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Chamfer evaluation of trained shapes against their oracles.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Shapes spec or gen-data manifest with the training shapes.
        #[arg(long)]
        shapes: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        points: usize,
        #[arg(long, default_value_t = 128)]
        resolution: usize,
    },
    /// Per-iteration timing of FIRe vs the sphere-traced baseline.
    Bench {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        shapes: PathBuf,
        #[arg(long, default_value_t = 0)]
        shape_index: usize,
        #[arg(long)]
        camera: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        warmup: usize,
        #[arg(long, default_value_t = 50)]
        iterations: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReconMode {
    Depth,
    Silhouette,
}

/// Parses and runs a command line (excluding argv[0]); returns the process
/// exit code.
pub fn run(args: &[String]) -> i32 {
    let mut argv = vec!["fire".to_string()];
    argv.extend_from_slice(args);
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            // clap handles --help/--version as "errors" with success status
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let threads = cli.threads.max(1);
    let file_cfg = match &cli.config {
        Some(path) => KvFile::load(path)?,
        None => KvFile::new(),
    };
    match cli.command {
        Command::GenData { shapes, out } => cmd_gen_data(&shapes, &out, &file_cfg, cli.seed),
        Command::Train { data, out } => cmd_train(&data, &out, &file_cfg, cli.seed),
        Command::Render {
            checkpoint,
            shape_index,
            z_file,
            camera,
            out,
            trace,
        } => cmd_render(
            &checkpoint,
            shape_index,
            z_file.as_deref(),
            camera.as_deref(),
            &out,
            trace,
            threads,
        ),
        Command::Reconstruct {
            checkpoint,
            depth,
            mask,
            camera,
            mode,
            out,
        } => cmd_reconstruct(
            &checkpoint,
            depth.as_deref(),
            &mask,
            &camera,
            mode,
            &out,
            &file_cfg,
            threads,
        ),
        Command::Eval {
            checkpoint,
            shapes,
            out,
            points,
            resolution,
        } => cmd_eval(&checkpoint, &shapes, &out, points, resolution, cli.seed, threads),
        Command::Bench {
            checkpoint,
            shapes,
            shape_index,
            camera,
            out,
            warmup,
            iterations,
        } => cmd_bench(
            &checkpoint,
            &shapes,
            shape_index,
            camera.as_deref(),
            &out,
            warmup,
            iterations,
        ),
    }
}

// ---------------------------------------------------------------------------
// Shapes specs
// ---------------------------------------------------------------------------

/// Sampling counts for gen-data, overridable from the [data] section.
#[derive(Debug, Clone, Copy)]
pub struct SampleCounts {
    pub n_surface: usize,
    pub n_uniform: usize,
    pub n_hit: usize,
    pub n_miss: usize,
}

impl Default for SampleCounts {
    fn default() -> Self {
        SampleCounts {
            n_surface: 8000,
            n_uniform: 8000,
            n_hit: 12000,
            n_miss: 4000,
        }
    }
}

fn parse_counts(kv: &KvFile) -> Result<SampleCounts> {
    let mut c = SampleCounts::default();
    if let Some(s) = kv.section("data") {
        if let Some(v) = s.parse("n_surface")? {
            c.n_surface = v;
        }
        if let Some(v) = s.parse("n_uniform")? {
            c.n_uniform = v;
        }
        if let Some(v) = s.parse("n_hit")? {
            c.n_hit = v;
        }
        if let Some(v) = s.parse("n_miss")? {
            c.n_miss = v;
        }
    }
    Ok(c)
}

fn need_float(s: &crate::config::Section, key: &str) -> Result<f64> {
    s.parse::<f64>(key)?
        .ok_or_else(|| FireError::invalid(format!("shape [{}] missing '{key}'", s.name)))
}

fn float3(s: &crate::config::Section, key: &str) -> Result<Vec3> {
    let v = s
        .parse_floats(key)?
        .ok_or_else(|| FireError::invalid(format!("shape [{}] missing '{key}'", s.name)))?;
    if v.len() != 3 {
        return Err(FireError::invalid(format!(
            "shape [{}] key '{key}' needs 3 values",
            s.name
        )));
    }
    Ok(vec3(v[0], v[1], v[2]))
}

fn parse_primitive(
    s: &crate::config::Section,
    kind: &str,
    prefix: &str,
) -> Result<ShapeOracle> {
    match kind {
        "sphere" => ShapeOracle::sphere(need_float(s, &format!("{prefix}radius"))?),
        "box" => ShapeOracle::cuboid(float3(s, &format!("{prefix}half_extents"))?),
        "torus" => ShapeOracle::torus(
            need_float(s, &format!("{prefix}ring_radius"))?,
            need_float(s, &format!("{prefix}tube_radius"))?,
        ),
        other => Err(FireError::invalid(format!(
            "shape [{}]: unsupported kind '{other}'",
            s.name
        ))),
    }
}

/// Parses the named shapes from a spec (or manifest) file. Mesh paths are
/// resolved relative to the spec's directory.
pub fn parse_shapes(kv: &KvFile, base_dir: &Path) -> Result<Vec<(String, ShapeOracle)>> {
    let mut out = Vec::new();
    for s in &kv.sections {
        if s.name.is_empty() || s.name == "data" {
            continue;
        }
        let kind = s
            .get("kind")
            .ok_or_else(|| FireError::invalid(format!("shape [{}] missing 'kind'", s.name)))?;
        let oracle = match kind {
            "union" => {
                let a_kind = s.get("a_kind").ok_or_else(|| {
                    FireError::invalid(format!("shape [{}] missing 'a_kind'", s.name))
                })?;
                let b_kind = s.get("b_kind").ok_or_else(|| {
                    FireError::invalid(format!("shape [{}] missing 'b_kind'", s.name))
                })?;
                let a = parse_primitive(s, a_kind, "a_")?;
                let b = parse_primitive(s, b_kind, "b_")?;
                let a_off = float3(s, "a_offset").unwrap_or(Vec3::ZERO);
                let b_off = float3(s, "b_offset").unwrap_or(Vec3::ZERO);
                ShapeOracle::union(a, a_off, b, b_off)?
            }
            "mesh" => {
                let rel = s.get("obj").ok_or_else(|| {
                    FireError::invalid(format!("shape [{}] missing 'obj'", s.name))
                })?;
                let path = base_dir.join(rel);
                ShapeOracle::mesh(TriMesh::load_obj(&path)?)?
            }
            prim => parse_primitive(s, prim, "")?,
        };
        out.push((s.name.clone(), oracle));
    }
    if out.is_empty() {
        return Err(FireError::invalid("shapes spec defines no shapes"));
    }
    Ok(out)
}

fn echo_shape(kv: &mut KvFile, name: &str, oracle: &ShapeOracle) {
    let s = kv.section_mut(name);
    match oracle.kind() {
        ShapeKind::Sphere { radius } => {
            s.set("kind", "sphere");
            s.set("radius", radius);
        }
        ShapeKind::Box { half_extents } => {
            s.set("kind", "box");
            s.set(
                "half_extents",
                format!("{} {} {}", half_extents.x, half_extents.y, half_extents.z),
            );
        }
        ShapeKind::Torus {
            ring_radius,
            tube_radius,
        } => {
            s.set("kind", "torus");
            s.set("ring_radius", ring_radius);
            s.set("tube_radius", tube_radius);
        }
        ShapeKind::Union {
            a,
            a_offset,
            b,
            b_offset,
        } => {
            let parts: Vec<(char, &ShapeOracle, &Vec3)> =
                vec![('a', a, a_offset), ('b', b, b_offset)];
            s.set("kind", "union");
            let mut extra: Vec<(String, String)> = Vec::new();
            for (tag, child, off) in parts {
                match child.kind() {
                    ShapeKind::Sphere { radius } => {
                        extra.push((format!("{tag}_kind"), "sphere".into()));
                        extra.push((format!("{tag}_radius"), radius.to_string()));
                    }
                    ShapeKind::Box { half_extents } => {
                        extra.push((format!("{tag}_kind"), "box".into()));
                        extra.push((
                            format!("{tag}_half_extents"),
                            format!("{} {} {}", half_extents.x, half_extents.y, half_extents.z),
                        ));
                    }
                    ShapeKind::Torus {
                        ring_radius,
                        tube_radius,
                    } => {
                        extra.push((format!("{tag}_kind"), "torus".into()));
                        extra.push((format!("{tag}_ring_radius"), ring_radius.to_string()));
                        extra.push((format!("{tag}_tube_radius"), tube_radius.to_string()));
                    }
                    _ => {}
                }
                extra.push((
                    format!("{tag}_offset"),
                    format!("{} {} {}", off.x, off.y, off.z),
                ));
            }
            for (k, v) in extra {
                s.set(&k, v);
            }
        }
        ShapeKind::Mesh(_) => {
            s.set("kind", "mesh");
        }
    }
}

// ---------------------------------------------------------------------------
// Output helpers
// ---------------------------------------------------------------------------

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| FireError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| FireError::io(path, e))
}

fn write_config_echo(out: &Path, command: &str, seed: u64, extra: KvFile) -> Result<()> {
    let mut kv = KvFile::new();
    let run = kv.section_mut("run");
    run.set("version", crate::VERSION);
    run.set("command", command);
    run.set("seed", seed);
    kv.sections.extend(extra.sections);
    kv.save(&out.join("config_echo.cfg"))
}

fn write_z(path: &Path, z: &[f64]) -> Result<()> {
    let mut text = String::from("# latent code, one value per line\n");
    for v in z {
        text.push_str(&format!("{v}\n"));
    }
    write_text(path, &text)
}

fn read_z(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| FireError::io(path, e))?;
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        out.push(
            line.parse::<f64>()
                .map_err(|e| FireError::parse(path, format!("bad latent value: {e}")))?,
        );
    }
    Ok(out)
}

fn default_camera(width: usize, height: usize) -> Camera {
    Camera::look_at(
        vec3(0.0, 0.0, 2.0),
        Vec3::ZERO,
        vec3(0.0, 1.0, 0.0),
        60.0,
        width,
        height,
    )
    .expect("default camera is valid")
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn cmd_gen_data(shapes_path: &Path, out: &Path, cfg: &KvFile, seed: Option<u64>) -> Result<()> {
    let seed = seed.unwrap_or(0);
    let spec = KvFile::load(shapes_path)?;
    let base = shapes_path.parent().unwrap_or(Path::new("."));
    let shapes = parse_shapes(&spec, base)?;
    let counts = parse_counts(cfg)?;
    ensure_dir(out)?;

    let mut manifest = KvFile::new();
    for (i, (name, oracle)) in shapes.iter().enumerate() {
        let sdf_seed = seed.wrapping_add(1000 + i as u64 * 7919);
        let ddf_seed = seed.wrapping_add(2000 + i as u64 * 7919);
        let sdf = sample_sdf_points(
            oracle,
            counts.n_surface,
            counts.n_uniform,
            (0.005, 0.05),
            sdf_seed,
        );
        let ddf = sample_ddf_rays(oracle, counts.n_hit, counts.n_miss, ddf_seed)?;
        let data = ShapeDataset { sdf, ddf };
        let file = format!("{name}.fird");
        write_dataset(&out.join(&file), &data)?;
        echo_shape(&mut manifest, name, oracle);
        let s = manifest.section_mut(name);
        s.set("file", &file);
        s.set("index", i);
    }
    manifest.save(&out.join("manifest.cfg"))?;

    let mut extra = KvFile::new();
    let d = extra.section_mut("data");
    d.set("n_surface", counts.n_surface);
    d.set("n_uniform", counts.n_uniform);
    d.set("n_hit", counts.n_hit);
    d.set("n_miss", counts.n_miss);
    d.set("shapes", shapes.len());
    write_config_echo(out, "gen-data", seed, extra)?;
    println!("wrote {} dataset files to {}", shapes.len(), out.display());
    Ok(())
}

fn load_datasets(data_dir: &Path) -> Result<(Vec<ShapeDataset>, KvFile)> {
    let manifest = KvFile::load(&data_dir.join("manifest.cfg"))?;
    let mut datasets = Vec::new();
    for s in &manifest.sections {
        if s.name.is_empty() {
            continue;
        }
        let file = s.get("file").ok_or_else(|| {
            FireError::invalid(format!("manifest section [{}] missing 'file'", s.name))
        })?;
        datasets.push(crate::oracle::read_dataset(&data_dir.join(file))?);
    }
    if datasets.is_empty() {
        return Err(FireError::invalid("manifest lists no datasets"));
    }
    Ok((datasets, manifest))
}

fn cmd_train(data_dir: &Path, out: &Path, cfg: &KvFile, seed: Option<u64>) -> Result<()> {
    let (datasets, _) = load_datasets(data_dir)?;
    let mut tc = TrainConfig::from_kv(cfg)?;
    if let Some(s) = seed {
        tc.seed = s;
    }
    ensure_dir(out)?;
    let outcome = train(&datasets, &tc)?;
    outcome.checkpoint.save(&out.join("checkpoint.firc"))?;
    write_text(&out.join("train_log.txt"), &format_log(&outcome.log))?;
    write_config_echo(out, "train", tc.seed, tc.to_kv())?;
    let last = outcome.log.last().expect("at least one iteration");
    println!(
        "trained {} shapes for {} iterations; final loss {:.6}",
        datasets.len(),
        tc.iterations,
        last.loss
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_render(
    checkpoint: &Path,
    shape_index: Option<usize>,
    z_file: Option<&Path>,
    camera_path: Option<&Path>,
    out: &Path,
    trace: bool,
    threads: usize,
) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let z = match (shape_index, z_file) {
        (Some(i), None) => ckpt.latent(i)?.to_vec(),
        (None, Some(path)) => read_z(path)?,
        _ => {
            return Err(FireError::invalid(
                "render needs exactly one of --shape-index or --z-file",
            ))
        }
    };
    if z.len() != ckpt.config.field.latent_dim {
        return Err(FireError::invalid(format!(
            "latent length {} does not match model latent_dim {}",
            z.len(),
            ckpt.config.field.latent_dim
        )));
    }
    let camera = match camera_path {
        Some(p) => Camera::load(p)?,
        None => default_camera(128, 128),
    };
    ensure_dir(out)?;
    camera.save(&out.join("camera.cfg"))?;

    let (rgb, img, evals) = render_shaded(&ckpt.models, &z, &camera, SIGMA_THRESHOLD, threads)?;
    image_io::write_png_rgb(&out.join("shaded.png"), camera.width, camera.height, &rgb)?;
    image_io::write_pfm(&out.join("depth.pfm"), camera.width, camera.height, &img.depth)?;
    image_io::write_png_gray(
        &out.join("mask.png"),
        camera.width,
        camera.height,
        &image_io::mask_to_bytes(&img.mask),
    )?;

    let mut extra = KvFile::new();
    let r = extra.section_mut("result");
    r.set("ddf_evals", evals);
    r.set("mask_pixels", img.mask_count());

    if trace {
        let (timg, tevals, rays) =
            render_sphere_traced(&ckpt.models, &z, &camera, &TraceConfig::truncated(), threads)?;
        image_io::write_pfm(
            &out.join("traced_depth.pfm"),
            camera.width,
            camera.height,
            &timg.depth,
        )?;
        image_io::write_png_gray(
            &out.join("traced_mask.png"),
            camera.width,
            camera.height,
            &image_io::mask_to_bytes(&timg.mask),
        )?;
        r.set("traced_sdf_evals", tevals);
        r.set("traced_rays", rays);
    }
    write_config_echo(out, "render", 0, extra)?;
    println!("rendered {}x{} with {evals} DDF evaluations", camera.width, camera.height);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_reconstruct(
    checkpoint: &Path,
    depth: Option<&Path>,
    mask: &Path,
    camera_path: &Path,
    mode: ReconMode,
    out: &Path,
    cfg: &KvFile,
    threads: usize,
) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let mut rc = match mode {
        ReconMode::Depth => ReconConfig::depth_mode(),
        ReconMode::Silhouette => ReconConfig::silhouette_mode(),
    };
    if let Some(s) = cfg.section("reconstruct") {
        if let Some(v) = s.parse("iterations")? {
            rc.iterations = v;
        }
        if let Some(v) = s.parse("lr")? {
            rc.lr = v;
        }
        if let Some(v) = s.parse("lr_after")? {
            rc.lr_after = v;
        }
        if let Some(v) = s.parse("lr_switch")? {
            rc.lr_switch = v;
        }
        if let Some(v) = s.parse("w_s")? {
            rc.w_s = v;
        }
        if let Some(v) = s.parse("w_d")? {
            rc.w_d = v;
        }
        if let Some(v) = s.parse("w_l")? {
            rc.w_l = v;
        }
    }
    ensure_dir(out)?;

    let (z, diag) = match mode {
        ReconMode::Depth => {
            let depth_path = depth.ok_or_else(|| {
                FireError::invalid("depth mode requires --depth with a PFM depth map")
            })?;
            let obs = DepthObservation::load(depth_path, mask, camera_path)?;
            reconstruct_from_depth(&ckpt.models, &obs, &rc)?
        }
        ReconMode::Silhouette => {
            let camera = Camera::load(camera_path)?;
            let (w, h, mask_bytes) = image_io::read_png_gray(mask)?;
            if (w, h) != (camera.width, camera.height) {
                return Err(FireError::invalid("mask dimensions do not match camera"));
            }
            let mask_bits = image_io::bytes_to_mask(&mask_bytes);
            reconstruct_from_silhouette(&ckpt.models, &mask_bits, &camera, &rc)?
        }
    };
    if let Some(w) = &diag.warning {
        eprintln!("warning: {w}");
    }

    write_z(&out.join("z.txt"), &z)?;
    write_text(&out.join("loss.csv"), &diag.to_csv())?;

    let camera = Camera::load(camera_path)?;
    let (rgb, img, _) = render_shaded(&ckpt.models, &z, &camera, rc.sigma_threshold, threads)?;
    image_io::write_png_rgb(&out.join("recon_shaded.png"), camera.width, camera.height, &rgb)?;
    image_io::write_pfm(&out.join("recon_depth.pfm"), camera.width, camera.height, &img.depth)?;
    image_io::write_png_gray(
        &out.join("recon_mask.png"),
        camera.width,
        camera.height,
        &image_io::mask_to_bytes(&img.mask),
    )?;
    let mesh = marching_cubes_threaded(&ckpt.models, &z, 128, 0.001, threads)?;
    if mesh.tri_count() == 0 {
        eprintln!("warning: reconstructed level set is empty");
    }
    mesh.write_obj(&out.join("recon_mesh.obj"))?;

    let mut extra = KvFile::new();
    let s = extra.section_mut("reconstruct");
    s.set("mode", format!("{mode:?}").to_lowercase());
    s.set("iterations", rc.iterations);
    s.set("w_s", rc.w_s);
    s.set("w_d", rc.w_d);
    s.set("w_l", rc.w_l);
    s.set("ddf_evals", diag.ddf_evals);
    s.set("sdf_evals", diag.sdf_evals);
    s.set("rays", diag.rays);
    if let Some(last) = diag.trace.last() {
        s.set("final_l_rec", last.l_rec);
    }
    write_config_echo(out, "reconstruct", 0, extra)?;
    println!(
        "reconstruction finished: {} iterations, final L_rec {:.6}",
        diag.trace.len(),
        diag.trace.last().map_or(f64::NAN, |t| t.l_rec)
    );
    Ok(())
}

fn cmd_eval(
    checkpoint: &Path,
    shapes_path: &Path,
    out: &Path,
    points: usize,
    resolution: usize,
    seed: Option<u64>,
    threads: usize,
) -> Result<()> {
    let seed = seed.unwrap_or(0);
    let ckpt = Checkpoint::load(checkpoint)?;
    let spec = KvFile::load(shapes_path)?;
    let base = shapes_path.parent().unwrap_or(Path::new("."));
    let shapes = parse_shapes(&spec, base)?;
    if shapes.len() > ckpt.latents.len() {
        return Err(FireError::invalid(format!(
            "{} shapes but checkpoint has {} latents",
            shapes.len(),
            ckpt.latents.len()
        )));
    }
    ensure_dir(out)?;

    let mut rows = Vec::new();
    let mut csv = String::from("shape,cd_sdf_x1000,cd_ddf_x1000\n");
    for (i, (name, oracle)) in shapes.iter().enumerate() {
        let z = ckpt.latent(i)?;
        let mesh = marching_cubes_threaded(&ckpt.models, z, resolution, 0.001, threads)?;
        if mesh.tri_count() == 0 {
            return Err(FireError::invalid(format!(
                "empty level set for shape {name}"
            )));
        }
        let mesh_pts = sample_mesh_points(&mesh, points, seed.wrapping_add(i as u64));
        let mut rng = <rand_chacha::ChaCha12Rng as rand_chacha::rand_core::SeedableRng>::seed_from_u64(
            seed.wrapping_add(500 + i as u64),
        );
        let gt_pts: Vec<Vec3> = (0..points).map(|_| oracle.sample_surface(&mut rng)).collect();
        let cd_sdf = chamfer(&mesh_pts, &gt_pts)? * 1000.0;
        let ddf_pts = ddf_surface_points(
            &ckpt.models,
            z,
            points,
            SIGMA_THRESHOLD,
            seed.wrapping_add(900 + i as u64),
        )?;
        let cd_ddf = chamfer(&ddf_pts, &gt_pts)? * 1000.0;
        csv.push_str(&format!("{name},{cd_sdf},{cd_ddf}\n"));
        rows.push((name.clone(), cd_sdf, cd_ddf));
    }
    write_text(&out.join("eval.csv"), &csv)?;
    let table = format_eval_table(&rows);
    write_text(&out.join("eval_table.txt"), &table)?;
    print!("{table}");

    let mut extra = KvFile::new();
    let s = extra.section_mut("eval");
    s.set("points", points);
    s.set("resolution", resolution);
    s.set("shapes", shapes.len());
    write_config_echo(out, "eval", seed, extra)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_bench(
    checkpoint: &Path,
    shapes_path: &Path,
    shape_index: usize,
    camera_path: Option<&Path>,
    out: &Path,
    warmup: usize,
    iterations: usize,
) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let spec = KvFile::load(shapes_path)?;
    let base = shapes_path.parent().unwrap_or(Path::new("."));
    let shapes = parse_shapes(&spec, base)?;
    let (name, oracle) = shapes.get(shape_index).ok_or_else(|| {
        FireError::invalid(format!(
            "shape index {shape_index} out of range ({} shapes)",
            shapes.len()
        ))
    })?;
    let camera = match camera_path {
        Some(p) => Camera::load(p)?,
        None => default_camera(128, 128),
    };
    let depth = render_oracle_depth(oracle, &camera)?;
    let obs = DepthObservation::new(depth, camera)?;
    ensure_dir(out)?;

    let mut reports = Vec::new();
    for method in [BenchMethod::Fire, BenchMethod::SphereTraced] {
        reports.push(benchmark(
            &ckpt.models,
            &obs,
            method,
            name,
            warmup,
            iterations,
        )?);
    }
    let mut csv = String::from(BENCH_CSV_HEADER);
    csv.push('\n');
    for r in &reports {
        csv.push_str(&r.to_csv_row());
        csv.push('\n');
    }
    write_text(&out.join("bench.csv"), &csv)?;
    let table = format_bench_table(&reports);
    write_text(&out.join("bench_table.txt"), &table)?;
    print!("{table}");

    let mut extra = KvFile::new();
    let s = extra.section_mut("bench");
    s.set("scene", name);
    s.set("warmup", warmup);
    s.set("iterations", iterations);
    write_config_echo(out, "bench", 0, extra)?;
    Ok(())
}
