//! `polaris` command-line driver.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use polaris_core::fresnel::{phase_delay_cos, reflectances, ComplexIor};
use polaris_core::imageio::{
    dolp_plane, load_dataset, polarizer_planes, read_pfm, stokes_planes, write_csv, write_csv_records, write_pfm,
    write_text, write_view, DatasetMeta, ViewMeta, META_FILE,
};
use polaris_core::inverse::{
    grid, landscape_scan, recover_materials, AdamConfig, FreeParams, GeomParam, Init, InitValues, LossKind,
    Observations, RecoverConfig,
};
use polaris_core::renderer::{render_view, RenderOptions};
use polaris_core::scene::{parse_scene, Scene};

const THREADS_ENV: &str = "POLARIS_THREADS";

#[derive(Parser)]
#[command(name = "polaris", version, about = "Polarimetric rendering and material recovery")]
struct Cli {
    /// Worker threads (falls back to POLARIS_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a scene into a directory of PFM planes plus meta.json.
    Render(RenderArgs),
    /// Tabulate Fresnel reflectances and phase delay against incidence angle.
    FresnelCurve(FresnelArgs),
    /// Convert between Stokes, polarizer and DoLP images.
    Stokes(StokesArgs),
    /// Recover material parameters from a rendered dataset.
    Invert(InvertArgs),
    /// Scan a loss over one geometric parameter of the first sphere.
    Landscape(LandscapeArgs),
}

#[derive(Args)]
struct RenderArgs {
    /// Scene description (JSON).
    scene: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Override the scene's sampling seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of hemisphere samples per shading point.
    #[arg(long)]
    samples: Option<usize>,
    /// Render this many views on a circle about the camera's up axis.
    #[arg(long)]
    views: Option<usize>,
    /// Multiply all environment radiance by this factor.
    #[arg(long, default_value_t = 1.0)]
    env_scale: f64,
    /// Replace every Mueller term by its depolarizing part.
    #[arg(long)]
    depolarize: bool,
}

#[derive(Args)]
struct FresnelArgs {
    /// Real part of the refractive index.
    #[arg(long)]
    eta: f64,
    /// Extinction coefficient (index is eta - i k).
    #[arg(long, default_value_t = 0.0)]
    k: f64,
    /// First incidence angle in degrees.
    #[arg(long, default_value_t = 0.0)]
    theta_min: f64,
    /// Last incidence angle in degrees.
    #[arg(long, default_value_t = 90.0)]
    theta_max: f64,
    /// Angular step in degrees.
    #[arg(long, default_value_t = 0.1)]
    step: f64,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StokesArgs {
    #[arg(value_enum)]
    mode: StokesMode,
    /// Directory holding the input planes (s0/s1/s2.pfm or i000..i135.pfm).
    #[arg(long)]
    input: PathBuf,
    /// Output directory (to-polarizer, from-polarizer) or file (dolp).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum StokesMode {
    /// s0, s1, s2 -> i000, i045, i090, i135
    ToPolarizer,
    /// i000, i045, i090, i135 -> s0, s1, s2
    FromPolarizer,
    /// s0, s1, s2 -> dolp
    Dolp,
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum InitMode {
    /// roughness 0.3, albedo 0.5, ks 0.5, eta 1.0, k 1.0
    Neutral,
    /// The material values in the scene file.
    Scene,
}

#[derive(Args)]
struct InvertArgs {
    /// Scene with the known geometry; its materials are the reference values.
    scene: PathBuf,
    /// Dataset directory written by `render`.
    #[arg(long)]
    obs: PathBuf,
    /// Free parameters, e.g. `roughness,eta,k,ks` or `0:roughness,1:albedo`.
    #[arg(long)]
    free: String,
    /// Output directory for report.csv, loss_trace.csv and materials.json.
    #[arg(long)]
    out: PathBuf,
    /// Weight of the Stokes L1 term.
    #[arg(long, default_value_t = 1.0)]
    lambda_s: f64,
    /// Weight of the DoLP L1 term.
    #[arg(long, default_value_t = 0.1)]
    lambda_dolp: f64,
    /// Apply the DoLP term to every pixel instead of masked pixels only.
    #[arg(long)]
    dolp_all_pixels: bool,
    /// Adam learning rate in transformed space.
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    /// Final learning rate as a fraction of --lr (geometric decay).
    #[arg(long, default_value_t = 1.0)]
    lr_final_fraction: f64,
    /// Adam iterations.
    #[arg(long, default_value_t = 300)]
    iters: usize,
    /// Starting point for the free parameters.
    #[arg(long, value_enum, default_value_t = InitMode::Neutral)]
    init: InitMode,
}

#[derive(Args)]
struct LandscapeArgs {
    /// Scene template; the scanned parameter of its first sphere is varied.
    scene: PathBuf,
    /// Dataset directory written by `render`.
    #[arg(long)]
    obs: PathBuf,
    /// radius, center_x, center_y or center_z.
    #[arg(long, default_value = "radius")]
    param: String,
    /// lo,hi,steps
    #[arg(long, default_value = "0.9,1.1,21")]
    grid: String,
    /// Comma-separated loss kinds: stokes_l1, intensity_l1, dolp_l1.
    #[arg(long, default_value = "dolp_l1,intensity_l1")]
    loss: String,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn resolve_threads(flag: Option<usize>) -> Result<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => Ok(Some(v.trim().parse().with_context(|| format!("{THREADS_ENV}={v:?} is not a count"))?)),
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> Result<()> {
    let threads = resolve_threads(cli.threads)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            bail!("--threads must be >= 1");
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build()?;
    let threads_json = json!(threads);
    pool.install(|| match cli.command {
        Command::Render(a) => cmd_render(a, threads_json),
        Command::FresnelCurve(a) => cmd_fresnel_curve(a),
        Command::Stokes(a) => cmd_stokes(a),
        Command::Invert(a) => cmd_invert(a, threads_json),
        Command::Landscape(a) => cmd_landscape(a, threads_json),
    })
}

fn print_config(value: serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(&value).expect("JSON values serialize"));
}

fn load_scene(path: &Path) -> Result<Scene> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_scene(&text).with_context(|| format!("parsing {}", path.display()))
}

fn cmd_render(a: RenderArgs, threads: serde_json::Value) -> Result<()> {
    let mut scene = load_scene(&a.scene)?;
    if let Some(seed) = a.seed {
        scene.seed = seed;
    }
    if let Some(n) = a.samples {
        scene.hemisphere_samples = n;
    }
    if !(a.env_scale >= 0.0 && a.env_scale.is_finite()) {
        bail!("--env-scale must be finite and >= 0");
    }
    scene = scene.with_env_scale(a.env_scale);
    scene.validate()?;
    let views = match a.views {
        None => vec![(".".to_string(), scene.camera)],
        Some(0) => bail!("--views must be >= 1"),
        Some(n) => scene
            .camera
            .orbit_views(n)
            .into_iter()
            .enumerate()
            .map(|(i, c)| (format!("view_{i:03}"), c))
            .collect(),
    };
    print_config(json!({
        "command": "render",
        "scene": a.scene.display().to_string(),
        "out": a.out.display().to_string(),
        "seed": scene.seed,
        "hemisphere_samples": scene.hemisphere_samples,
        "views": views.len(),
        "env_scale": a.env_scale,
        "depolarize": a.depolarize,
        "width": scene.camera.width,
        "height": scene.camera.height,
        "threads": threads,
    }));
    let options = RenderOptions { depolarize: a.depolarize };
    let mut meta_views = Vec::new();
    for (dir, camera) in views {
        let view = render_view(&scene.with_camera(camera), &options);
        let target = if dir == "." { a.out.clone() } else { a.out.join(&dir) };
        write_view(target, &view)?;
        meta_views.push(ViewMeta { dir, camera });
    }
    let meta = DatasetMeta {
        scene: a.scene.display().to_string(),
        seed: scene.seed,
        hemisphere_samples: scene.hemisphere_samples,
        env_scale: a.env_scale,
        views: meta_views,
    };
    write_text(a.out.join(META_FILE), &(serde_json::to_string_pretty(&meta)? + "\n"))?;
    Ok(())
}

fn cmd_fresnel_curve(a: FresnelArgs) -> Result<()> {
    let ior = ComplexIor::new([a.eta; 3], [a.k; 3])?;
    if !(a.step > 0.0) || !(0.0..=90.0).contains(&a.theta_min) || !(a.theta_min..=90.0).contains(&a.theta_max) {
        bail!("need 0 <= theta-min <= theta-max <= 90 and step > 0");
    }
    print_config(json!({
        "command": "fresnel-curve",
        "eta": a.eta,
        "k": a.k,
        "theta_min": a.theta_min,
        "theta_max": a.theta_max,
        "step": a.step,
        "out": a.out.display().to_string(),
    }));
    let n = ior.channel(0);
    let count = ((a.theta_max - a.theta_min) / a.step + 1e-9).floor() as usize;
    let rows: Vec<Vec<f64>> = (0..=count)
        .map(|i| {
            // snap to the decimal grid so 56.3 prints as 56.3
            let deg = ((a.theta_min + i as f64 * a.step) * 1e9).round() / 1e9;
            let theta = deg.to_radians();
            let (rs, rp) = reflectances(n, theta);
            vec![deg, rs, rp, 0.5 * (rs + rp), phase_delay_cos(n, theta)]
        })
        .collect();
    write_csv(&a.out, &["theta_deg", "R_s", "R_p", "R_avg", "cos_delta"], &rows)?;
    Ok(())
}

fn cmd_stokes(a: StokesArgs) -> Result<()> {
    let mode = match a.mode {
        StokesMode::ToPolarizer => "to-polarizer",
        StokesMode::FromPolarizer => "from-polarizer",
        StokesMode::Dolp => "dolp",
    };
    print_config(json!({
        "command": "stokes",
        "mode": mode,
        "input": a.input.display().to_string(),
        "out": a.out.display().to_string(),
    }));
    let load = |name: &str| read_pfm(a.input.join(format!("{name}.pfm")));
    match a.mode {
        StokesMode::ToPolarizer => {
            let planes = polarizer_planes(&load("s0")?, &load("s1")?, &load("s2")?)?;
            fs::create_dir_all(&a.out)?;
            for (name, img) in ["i000", "i045", "i090", "i135"].iter().zip(&planes) {
                write_pfm(a.out.join(format!("{name}.pfm")), img)?;
            }
        }
        StokesMode::FromPolarizer => {
            let planes = stokes_planes(&[load("i000")?, load("i045")?, load("i090")?, load("i135")?])?;
            fs::create_dir_all(&a.out)?;
            for (name, img) in ["s0", "s1", "s2"].iter().zip(&planes) {
                write_pfm(a.out.join(format!("{name}.pfm")), img)?;
            }
        }
        StokesMode::Dolp => {
            let img = dolp_plane(&load("s0")?, &load("s1")?, &load("s2")?)?;
            if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            write_pfm(&a.out, &img)?;
        }
    }
    Ok(())
}

/// Loads a dataset and aligns the scene's sampling and lighting with it.
fn load_observations(scene: &mut Scene, dir: &Path) -> Result<(DatasetMeta, Observations)> {
    let (meta, views) = load_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))?;
    scene.seed = meta.seed;
    scene.hemisphere_samples = meta.hemisphere_samples;
    *scene = scene.with_env_scale(meta.env_scale);
    Ok((meta, Observations::new(views)))
}

fn cmd_invert(a: InvertArgs, threads: serde_json::Value) -> Result<()> {
    let mut scene = load_scene(&a.scene)?;
    let ground_truth = scene.materials.clone();
    let free = FreeParams::parse(&scene.materials, &a.free)?;
    let (meta, mut obs) = load_observations(&mut scene, &a.obs)?;
    obs.lambda_s = a.lambda_s;
    obs.lambda_dolp = a.lambda_dolp;
    obs.mask_dolp = !a.dolp_all_pixels;
    let adam = AdamConfig { lr: a.lr, iters: a.iters, lr_final_fraction: a.lr_final_fraction, ..Default::default() };
    let init = match a.init {
        InitMode::Neutral => Init::Neutral(InitValues::default()),
        InitMode::Scene => Init::FromScene,
    };
    print_config(json!({
        "command": "invert",
        "scene": a.scene.display().to_string(),
        "obs": a.obs.display().to_string(),
        "views": meta.views.len(),
        "seed": meta.seed,
        "hemisphere_samples": meta.hemisphere_samples,
        "free": free.slots().iter().map(ToString::to_string).collect::<Vec<_>>(),
        "lambda_s": obs.lambda_s,
        "lambda_dolp": obs.lambda_dolp,
        "mask_dolp": obs.mask_dolp,
        "lr": adam.lr,
        "lr_final_fraction": adam.lr_final_fraction,
        "beta1": adam.beta1,
        "beta2": adam.beta2,
        "eps": adam.eps,
        "iters": adam.iters,
        "fd_step": adam.fd_step,
        "init": if a.init == InitMode::Scene { "scene" } else { "neutral" },
        "out": a.out.display().to_string(),
        "threads": threads,
    }));
    let result = recover_materials(&scene, &obs, &free, &RecoverConfig { adam, init }, Some(&ground_truth))?;
    fs::create_dir_all(&a.out)?;
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let rows: Vec<Vec<String>> = result
        .report
        .iter()
        .map(|r| vec![r.name.clone(), fmt(r.gt), r.recovered.to_string(), fmt(r.abs_error())])
        .collect();
    write_csv_records(a.out.join("report.csv"), &["param_name", "gt", "recovered", "abs_error"], &rows)?;
    let trace: Vec<Vec<f64>> = result.adam.trace.iter().enumerate().map(|(i, l)| vec![i as f64, *l]).collect();
    write_csv(a.out.join("loss_trace.csv"), &["iter", "loss"], &trace)?;
    let materials: Vec<serde_json::Value> = result
        .materials
        .iter()
        .map(|m| {
            json!({
                "m": m.m.value(),
                "albedo": m.albedo,
                "roughness": m.roughness,
                "ks": m.ks,
                "eta": m.ior.eta,
                "k": m.ior.k,
            })
        })
        .collect();
    write_text(
        a.out.join("materials.json"),
        &(serde_json::to_string_pretty(&json!({ "materials": materials, "best_loss": result.adam.best_loss }))? + "\n"),
    )?;
    for r in &result.report {
        println!("{:<16} gt={:<22} recovered={}", r.name, fmt(r.gt), r.recovered);
    }
    println!("best loss {} after {} iterations", result.adam.best_loss, result.adam.iterations());
    Ok(())
}

fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let [lo, hi, steps] = parts.as_slice() else {
        bail!("--grid expects lo,hi,steps (got {text:?})");
    };
    Ok(grid(lo.parse()?, hi.parse()?, steps.parse()?)?)
}

fn cmd_landscape(a: LandscapeArgs, threads: serde_json::Value) -> Result<()> {
    let param = GeomParam::parse(&a.param).with_context(|| format!("unknown --param {:?}", a.param))?;
    let kinds = a
        .loss
        .split(',')
        .map(|s| LossKind::parse(s.trim()).with_context(|| format!("unknown loss kind {s:?}")))
        .collect::<Result<Vec<_>>>()?;
    let values = parse_grid(&a.grid)?;
    let mut scene = load_scene(&a.scene)?;
    let (meta, obs) = load_observations(&mut scene, &a.obs)?;
    print_config(json!({
        "command": "landscape",
        "scene": a.scene.display().to_string(),
        "obs": a.obs.display().to_string(),
        "views": meta.views.len(),
        "param": a.param,
        "grid": values,
        "loss": a.loss,
        "out": a.out.display().to_string(),
        "threads": threads,
    }));
    let scans = kinds
        .iter()
        .map(|k| landscape_scan(&scene, &obs, param, &values, *k))
        .collect::<Result<Vec<_>, _>>()?;
    let rows: Vec<Vec<f64>> = (0..values.len())
        .map(|i| std::iter::once(values[i]).chain(scans.iter().map(|s| s[i].1)).collect())
        .collect();
    let mut headers = vec!["value"];
    headers.extend(a.loss.split(',').map(str::trim));
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_csv(&a.out, &headers, &rows)?;
    for (kind, scan) in a.loss.split(',').zip(&scans) {
        let best = scan.iter().min_by(|x, y| x.1.total_cmp(&y.1)).expect("grid is non-empty");
        println!("{}: argmin {} (loss {})", kind.trim(), best.0, best.1);
    }
    Ok(())
}
