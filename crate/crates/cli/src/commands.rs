use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use planmae_core::dataset::{build_corpus_with, load_corpus_split, Palette, Split};
use planmae_core::metrics::{evaluate, psnr_masked};
use planmae_core::training::history_csv;
use planmae_core::{
    fit, load_checkpoint, save_checkpoint, Checkpoint, Mae, MaskPlan, MaskSpec, MetricPair, Mode, Raster,
    Strategy,
};

use crate::args::{EvaluateArgs, GenerateArgs, ReconstructArgs, TrainArgs};
use crate::config::Resolved;

/// Gray level painted over masked patches in the masked-input view.
pub const MASK_GRAY: f32 = 0.5;

pub fn checkpoint_name(step: u64) -> String {
    format!("checkpoint_step{step:06}.pmae")
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write(path: PathBuf, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn load_model(path: &Path) -> Result<(Checkpoint, Mae<f32>, Mode)> {
    let ck = load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let mode = Mode::from_channels(ck.config.channels)?;
    let model = Mae::new(ck.config, ck.params.clone())?;
    Ok((ck, model, mode))
}

pub fn generate_data(args: &GenerateArgs, cfg: &Resolved) -> Result<()> {
    create_dir(&args.out)?;
    let manifest = build_corpus_with(
        &args.out,
        cfg.counts,
        cfg.dataset_seed,
        cfg.mode,
        cfg.resolution,
        &cfg.constraints,
        &Palette::default(),
    )?;
    println!(
        "{}",
        manifest.root.join(planmae_core::dataset::MANIFEST_FILE).display()
    );
    Ok(())
}

pub fn train(args: &TrainArgs, cfg: &Resolved) -> Result<()> {
    let Some(data) = &cfg.data_root else {
        bail!("no corpus given (--data or dataset.root)");
    };
    let Some(out) = &cfg.train_out else {
        bail!("no output directory given (--out or training.out_dir)");
    };
    if !data.is_dir() {
        bail!("corpus directory {} does not exist", data.display());
    }
    let corpus = load_corpus_split(
        data,
        Split::Train,
        cfg.mode,
        Some(cfg.model.image_size),
        cfg.train_limit,
    )
    .with_context(|| format!("loading training split of {}", data.display()))?;
    let resume = match &args.resume {
        Some(p) => Some(load_checkpoint(p).with_context(|| format!("loading checkpoint {}", p.display()))?),
        None => None,
    };
    create_dir(out)?;
    write(out.join("config.json"), cfg.dump())?;
    eprintln!(
        "training on {} images for {} steps (batch {})",
        corpus.len(),
        cfg.train.steps,
        cfg.train.batch_size
    );
    let outcome = fit(&cfg.model, &cfg.train, &corpus, resume, |ck| {
        save_checkpoint(out.join(checkpoint_name(ck.step)), ck)
    })?;
    write(out.join("loss.csv"), history_csv(&outcome.history))?;
    let final_path = out.join("final.pmae");
    save_checkpoint(&final_path, &outcome.checkpoint)?;
    if let (Some(first), Some(last)) = (outcome.history.first(), outcome.history.last()) {
        eprintln!(
            "loss {:.6} (step {}) -> {:.6} (step {})",
            first.loss, first.step, last.loss, last.step
        );
    }
    println!("{}", final_path.display());
    Ok(())
}

/// The input with every masked patch painted [`MASK_GRAY`].
pub fn masked_view(image: &Raster, plan: &MaskPlan) -> Raster {
    let mut out = image.clone();
    let p = plan.grid.patch_size;
    for &i in &plan.masked {
        let (r, c) = plan.grid.cell(i);
        for y in r * p..(r + 1) * p {
            for x in c * p..(c + 1) * p {
                for ch in 0..out.channels() {
                    out.set(y, x, ch, MASK_GRAY);
                }
            }
        }
    }
    out
}

pub fn reconstruct(args: &ReconstructArgs) -> Result<()> {
    let (_, model, mode) = load_model(&args.checkpoint)?;
    let grid = model.grid();
    let image = Raster::load_png(&args.input, mode, Some((grid.height(), grid.width())), false)
        .with_context(|| format!("reading {}", args.input.display()))?;
    let plan = match &args.plan {
        Some(path) => {
            let text =
                std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let plan: MaskPlan =
                serde_json::from_str(&text).with_context(|| format!("parsing plan {}", path.display()))?;
            if plan.grid != grid {
                bail!(
                    "plan grid {:?} does not match the model grid {:?}",
                    plan.grid,
                    grid
                );
            }
            plan
        }
        None => {
            let strategy = args.strategy.unwrap_or(Strategy::Random);
            let spec = MaskSpec {
                strategy,
                ratio: args.ratio.unwrap_or(strategy.default_ratio()),
                seed: args.seed.unwrap_or(0),
                side: args.side,
                anchor: args.anchor,
            };
            spec.plan(grid)?
        }
    };
    let recon = model.reconstruct(&image, &plan)?;
    create_dir(&args.out)?;
    masked_view(&image, &plan).save_png(args.out.join("masked.png"))?;
    recon.save_png(args.out.join("reconstruction.png"))?;
    write(args.out.join("plan.json"), plan.to_json())?;
    let metrics = MetricPair::compute(&image, &recon).ok();
    let summary = serde_json::json!({
        "masked": plan.num_masked(),
        "realized_ratio": plan.realized_ratio(),
        "metrics": metrics.map(|m| serde_json::to_value(m).expect("metrics serialize")),
        "psnr_masked": fmt_db(psnr_masked(&image, &recon, &plan, 1.0)?),
    });
    println!("{summary}");
    Ok(())
}

fn fmt_db(v: f64) -> serde_json::Value {
    if v.is_finite() {
        v.into()
    } else {
        "inf".into()
    }
}

pub fn evaluate_cmd(args: &EvaluateArgs, cfg: &Resolved) -> Result<()> {
    let (_, model, mode) = load_model(&args.checkpoint)?;
    let Some(data) = &cfg.data_root else {
        bail!("no corpus given (--data or dataset.root)");
    };
    let grid = model.grid();
    let images = load_corpus_split(data, Split::Test, mode, Some(grid.height()), args.limit)
        .with_context(|| format!("loading test split of {}", data.display()))?;
    let report = evaluate(&model, &images, &cfg.eval_specs)?;
    let table = report.to_table();
    if let Some(out) = &args.out {
        create_dir(out)?;
        write(out.join("report.csv"), report.to_csv())?;
        write(out.join("report.txt"), &table)?;
        write(out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    }
    print!("{table}");
    Ok(())
}

pub fn serve(cfg: &Resolved) -> Result<()> {
    let Some(checkpoint) = cfg.service.checkpoint.clone() else {
        bail!("no checkpoint given (--checkpoint or service.checkpoint)");
    };
    if !checkpoint.is_file() {
        bail!("checkpoint {} does not exist", checkpoint.display());
    }
    let runtime = tokio::runtime::Runtime::new().context("starting async runtime")?;
    runtime.block_on(crate::service::serve(cfg.service.clone(), checkpoint))
}
