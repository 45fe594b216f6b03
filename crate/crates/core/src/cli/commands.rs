use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde_json::json;

use super::{write_manifest, CliError, RunManifest, Settings, Subcommand, UsageError};
use crate::analysis::{ablate_sigma, default_cutoff, trajectory_report};
use crate::dataset::{generate_with, load_dataset, save_dataset, GeneratorOptions};
use crate::denoiser::{load_checkpoint, param_layout, save_checkpoint, Denoiser, ModelConfig};
use crate::pnm::{clamp_for_display, extension, write_image};
use crate::sampler::{run_rng, sample, SamplerConfig};
use crate::schedule::NoiseSchedule;
use crate::training::{train, write_loss_csv, Precision, TrainConfig};

type CliResult<T> = Result<T, CliError>;

pub(crate) fn execute(sc: &Subcommand, s: &Settings, argv: &[String]) -> CliResult<()> {
    let start = Instant::now();
    let (dir, prefix, outputs) = match sc.name {
        "gen-data" => gen_data(s)?,
        "train" => run_train(s)?,
        "sample" => run_sample(s, argv, start)?,
        "trajectory" => run_trajectory(s)?,
        "ablate" => run_ablate(s)?,
        "inspect" => return inspect(s),
        other => unreachable!("unregistered subcommand {other}"),
    };
    let manifest = RunManifest {
        command: argv.to_vec(),
        subcommand: sc.name.to_string(),
        config: s.values().clone(),
        seed: s.get("seed").ok(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_secs: start.elapsed().as_secs_f64(),
        outputs,
    };
    let written = write_manifest(&dir, &prefix, &manifest, s)?;
    println!("manifest: {}", written[0].display());
    Ok(())
}

type Outputs = (PathBuf, String, Vec<PathBuf>);

fn gen_data(s: &Settings) -> CliResult<Outputs> {
    let opts = GeneratorOptions {
        n: s.get("n")?,
        size: s.get("size")?,
        channels: s.get("channels")?,
        seed: s.get("seed")?,
        texture_amplitude: s.get("texture")?,
    };
    let out = s.path("out");
    let ds = generate_with(&opts)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    save_dataset(&ds, &out)?;
    println!("wrote {} images to {}", ds.len(), out.display());
    let dir = out.parent().map(Path::to_path_buf).unwrap_or_default();
    let name = out
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok((dir, format!("{name}."), vec![out]))
}

fn run_train(s: &Settings) -> CliResult<Outputs> {
    let precision = match s.raw("precision") {
        "f32" => Precision::F32,
        "f64" => Precision::F64,
        other => {
            return Err(UsageError(format!(
                "invalid value `{other}` for --precision: expected f32 or f64"
            ))
            .into())
        }
    };
    let cfg = TrainConfig {
        batch_size: s.get("batch")?,
        lr: s.get("lr")?,
        steps: s.get("steps")?,
        label_dropout_p: s.get("dropout-p")?,
        seed: s.get("seed")?,
        checkpoint_every: s.get("ckpt-every")?,
        precision,
        ..TrainConfig::default()
    };
    let (patch_size, embed_dim, depth, heads, num_classes, mlp_ratio) = (
        s.get("patch")?,
        s.get("embed-dim")?,
        s.get("depth")?,
        s.get("heads")?,
        s.get("num-classes")?,
        s.get("mlp-ratio")?,
    );
    let data = load_dataset(s.path("data"))?;
    let [c, h, _] = data.image_shape();
    let model_cfg = ModelConfig {
        image_size: h,
        channels: c,
        patch_size,
        embed_dim,
        depth,
        heads,
        num_classes,
        mlp_ratio,
    };
    let out = s.path("out");
    std::fs::create_dir_all(&out)?;
    let mut outputs = Vec::new();
    let outcome = train(
        &data,
        &model_cfg,
        &cfg,
        &NoiseSchedule::default(),
        |step, m| {
            let p = out.join(format!("ckpt_{step:06}.cdif"));
            save_checkpoint(m, &p)?;
            println!("step {step}: checkpoint {}", p.display());
            outputs.push(p);
            Ok(())
        },
    )?;
    let model_path = out.join("model.cdif");
    save_checkpoint(&outcome.model, &model_path)?;
    let loss_path = out.join("loss.csv");
    write_loss_csv(&loss_path, &outcome.losses)?;
    if let Some(last) = outcome.losses.last() {
        println!("final loss {last:.5} after {} steps", outcome.losses.len());
    }
    outputs.extend([model_path, loss_path]);
    Ok((out, String::new(), outputs))
}

fn sampler_config(s: &Settings) -> CliResult<SamplerConfig> {
    Ok(SamplerConfig {
        lambda: s.get("lambda")?,
        sigma: s.get_or("sigma", 0)?,
        class: s.get_or("class", 0)?,
        steps: s.get("steps")?,
        seed: s.get("seed")?,
        stochastic: s.get("stochastic")?,
        eps_norm: s.get("eps-norm")?,
        snapshot_steps: if s.has("snapshots") {
            s.list("snapshots")?
        } else {
            Vec::new()
        },
    })
}

fn load_model(s: &Settings) -> CliResult<Denoiser<f32>> {
    Ok(load_checkpoint(s.path("checkpoint"))?)
}

fn run_sample(s: &Settings, argv: &[String], start: Instant) -> CliResult<Outputs> {
    let cfg = sampler_config(s)?;
    let count: usize = s.get("count")?;
    let model = load_model(s)?;
    let sched = NoiseSchedule::default();
    let out = s.path("out-dir");
    std::fs::create_dir_all(&out)?;

    let records = (0..count)
        .into_par_iter()
        .map(|i| -> crate::Result<serde_json::Value> {
            let t0 = Instant::now();
            let res = sample(&model, &sched, &cfg, &mut run_rng(cfg.seed, i as u64))?;
            let img = clamp_for_display(&res.image);
            let path = out.join(format!("sample_{i:04}.{}", extension(&img)?));
            write_image(&img, &path)?;
            let mut snaps = Vec::new();
            for snap in &res.snapshots {
                let x0 = clamp_for_display(&snap.x0_pred);
                let p = out.join(format!("sample_{i:04}_t{:04}.{}", snap.t, extension(&x0)?));
                write_image(&x0, &p)?;
                snaps.push(p);
            }
            Ok(json!({
                "run": i,
                "class": cfg.class,
                "seed": cfg.seed,
                "path": path,
                "snapshots": snaps,
                "wall_time_secs": t0.elapsed().as_secs_f64(),
            }))
        })
        .collect::<crate::Result<Vec<_>>>()?;

    let jsonl = out.join("manifest.jsonl");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&jsonl)?);
    let header = json!({
        "command": argv,
        "config": s.values(),
        "tool_version": env!("CARGO_PKG_VERSION"),
        "wall_time_secs": start.elapsed().as_secs_f64(),
    });
    writeln!(f, "{header}")?;
    let mut outputs = Vec::new();
    for r in &records {
        writeln!(f, "{r}")?;
        outputs.push(PathBuf::from(r["path"].as_str().unwrap_or_default()));
    }
    f.flush()?;
    println!("wrote {count} image(s) to {}", out.display());
    outputs.push(jsonl);
    Ok((out, String::new(), outputs))
}

/// A non-positive `--rho` selects the default cutoff for the model's size.
fn cutoff(rho: f64, model: &Denoiser<f32>) -> f64 {
    if rho > 0.0 {
        rho
    } else {
        default_cutoff(model.config().image_size)
    }
}

fn run_trajectory(s: &Settings) -> CliResult<Outputs> {
    let cfg = sampler_config(s)?;
    let (runs, rho): (usize, f64) = (s.get("runs")?, s.get("rho")?);
    let model = load_model(s)?;
    let rho = cutoff(rho, &model);
    let report = trajectory_report(
        &model,
        &NoiseSchedule::default(),
        &cfg,
        &cfg.snapshot_steps,
        runs,
        rho,
    )?;
    let out = s.path("out-dir");
    std::fs::create_dir_all(&out)?;
    let mut outputs = Vec::new();
    for (row, img) in report.rows.iter().zip(&report.first_run) {
        let p = out.join(format!("t_{:04}.{}", row.t, extension(img)?));
        write_image(img, &p)?;
        outputs.push(p);
    }
    let csv = out.join("trajectory.csv");
    std::fs::write(&csv, report.to_csv())?;
    print!("{}", report.to_csv());
    if let Some((from, to)) = report.peak_detail_growth() {
        println!("high-band energy grows fastest between t={from} and t={to}");
    }
    outputs.push(csv);
    Ok((out, String::new(), outputs))
}

fn run_ablate(s: &Settings) -> CliResult<Outputs> {
    let cfg = sampler_config(s)?;
    let sigmas: Vec<usize> = s.list("sigmas")?;
    let (n, grid_cols, rho): (usize, usize, f64) =
        (s.get("n")?, s.get("grid-cols")?, s.get("rho")?);
    let model = load_model(s)?;
    let rho = cutoff(rho, &model);
    let nc = model.config().num_classes;
    let table = ablate_sigma(
        &model,
        &NoiseSchedule::default(),
        &cfg,
        &sigmas,
        n,
        rho,
        |i| i % nc,
    )?;
    let out = s.path("out-dir");
    let outputs = table.write(&out, grid_cols)?;
    print!("{}", std::fs::read_to_string(out.join("ablation.csv"))?);
    Ok((out, String::new(), outputs))
}

fn inspect(s: &Settings) -> CliResult<()> {
    let model = load_model(s)?;
    let c = model.config();
    println!("checkpoint: {}", s.raw("checkpoint"));
    println!("image_size = {}", c.image_size);
    println!("channels = {}", c.channels);
    println!("patch_size = {}", c.patch_size);
    println!("embed_dim = {}", c.embed_dim);
    println!("depth = {}", c.depth);
    println!("heads = {}", c.heads);
    println!("num_classes = {}", c.num_classes);
    println!("mlp_ratio = {}", c.mlp_ratio);
    println!("tensors:");
    for ((name, shape), t) in param_layout(c).iter().zip(model.params().tensors()) {
        println!(
            "  {name:<28} {shape:?} rms={:.4e}",
            (t.sum_sq() as f64 / t.numel() as f64).sqrt()
        );
    }
    println!("parameters: {}", model.params().num_scalars());
    Ok(())
}
