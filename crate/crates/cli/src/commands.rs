use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use matmvp::dataset::sample::target_azimuths;
use matmvp::dataset::store::{decode_png_rgb, encode_png_rgb};
use matmvp::dataset::{generate_scenes, read_dataset, write_dataset, Dataset, GridConfig, Split, ViewSource};
use matmvp::render::{relight, CameraPose, LightingCondition, MaterialMaps, Raster};
use matmvp::sampler_eval::{evaluate, sample_multiview, write_contact_sheet, write_report, EvalConfig, EvalReport};
use matmvp::seed::{rng_for, streams};
use matmvp::trainer::{apply_override, load_checkpoint, load_layered, train_to_dir, Checkpoint, TrainConfig, Trainer};
use matmvp::{Error, Result};

use crate::{Cli, Command, SplitArg, Which};

/// Settings of `gen-data`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenDataConfig {
    pub scenes: usize,
    pub heldout: Option<usize>,
    pub seed: u64,
    pub grid: GridConfig,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        GenDataConfig { scenes: 20, heldout: None, seed: 0, grid: GridConfig::default() }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenData { scenes, heldout, res, azimuths } => gen_data(cli, *scenes, *heldout, *res, *azimuths),
        Command::Train { data, steps, resume } => train(cli, data, *steps, resume.as_deref()),
        Command::Sample { data, checkpoint, scene, reference, elevation, offset } => {
            sample(cli, data, checkpoint, scene, reference, *elevation, *offset)
        }
        Command::Relight { data, scene, view, maps, lightings } => relight_cmd(cli, data, scene, view, maps.as_deref(), lightings),
        Command::Eval { data, checkpoint, split, limit } => eval(cli, data, checkpoint, *split, *limit),
        Command::Ablate { which, data, steps, limit } => ablate(cli, *which, data, *steps, *limit),
    }
}

fn create_out(cli: &Cli) -> Result<()> {
    std::fs::create_dir_all(&cli.out).map_err(|e| Error::io(&cli.out, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_png(path: &Path, r: &Raster) -> Result<()> {
    std::fs::write(path, encode_png_rgb(r)?).map_err(|e| Error::io(path, e))
}

fn config_label(cli: &Cli) -> String {
    cli.config.as_ref().map_or_else(|| "default".to_string(), |p| p.display().to_string())
}

fn resolve_scene(data: &Dataset, scene: &str) -> Result<usize> {
    let idx = match scene.parse::<usize>() {
        Ok(i) => Some(i).filter(|&i| i < data.scene_count()),
        Err(_) => data.scene_index(scene),
    };
    idx.ok_or_else(|| Error::invalid(format!("dataset has no scene {scene}")))
}

/// Training config plus the evaluation settings of its optional `[eval]` table.
fn train_config(cli: &Cli, steps: Option<usize>) -> Result<(TrainConfig, EvalConfig)> {
    let text = match &cli.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
        None => String::new(),
    };
    let mut doc: toml::Value = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    for o in &cli.overrides {
        apply_override(&mut doc, o)?;
    }
    let eval_doc = doc
        .as_table_mut()
        .and_then(|t| t.remove("eval"))
        .unwrap_or_else(|| toml::Value::Table(toml::Table::new()));
    let de = |e: toml::de::Error| Error::Config(e.to_string());
    let mut cfg: TrainConfig = doc.try_into().map_err(de)?;
    let mut eval: EvalConfig = eval_doc.try_into().map_err(de)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
        eval.seed = s;
    }
    if let Some(s) = steps {
        cfg.steps = s;
    }
    cfg.validate()?;
    Ok((cfg, eval))
}

fn eval_config(cli: &Cli) -> Result<EvalConfig> {
    let mut cfg: EvalConfig = load_layered(cli.config.as_deref(), &cli.overrides)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn check_model_matches_data(cfg: &TrainConfig, data: &Dataset) -> Result<()> {
    let g = data.grid();
    if cfg.model.n_views != g.target_views || cfg.model.resolution != g.resolution {
        return Err(Error::Config(format!(
            "model expects {} views at {}px, dataset provides {} at {}px",
            cfg.model.n_views, cfg.model.resolution, g.target_views, g.resolution
        )));
    }
    Ok(())
}

fn gen_data(cli: &Cli, scenes: Option<usize>, heldout: Option<usize>, res: Option<usize>, azimuths: Option<usize>) -> Result<()> {
    let mut cfg: GenDataConfig = load_layered(cli.config.as_deref(), &cli.overrides)?;
    if let Some(n) = scenes {
        cfg.scenes = n;
    }
    if heldout.is_some() {
        cfg.heldout = heldout;
    }
    if let Some(r) = res {
        cfg.grid.resolution = r;
    }
    if let Some(a) = azimuths {
        cfg.grid.azimuths = a;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.grid.validate()?;
    if cfg.scenes == 0 {
        return Err(Error::invalid("--scenes must be at least 1"));
    }
    let heldout = cfg.heldout.unwrap_or(cfg.scenes / 5);
    let workers = cli
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let index = write_dataset(&cli.out, &generate_scenes(cfg.seed, cfg.scenes), &cfg.grid, heldout, workers)?;
    let g = &cfg.grid;
    let views: usize = index.scenes.iter().map(|s| s.views.len()).sum();
    println!("scenes {} (train {}, heldout {heldout})", cfg.scenes, cfg.scenes - heldout);
    println!(
        "candidates per scene {} = {} elevations x {} azimuths x {} presets{}",
        g.expected_count(),
        g.fixed_elevations.len(),
        g.azimuths,
        g.env_presets,
        if g.random_tier { format!(" + {} random-elevation", g.azimuths) } else { String::new() }
    );
    println!("candidates total {}", index.candidate_count());
    println!("views total {views}");
    println!("seed {}", cfg.seed);
    let text = toml::to_string(&cfg).map_err(|e| Error::Config(e.to_string()))?;
    write_text(&cli.out.join("gen_data.toml"), &text)
}

fn train(cli: &Cli, data_dir: &Path, steps: Option<usize>, resume: Option<&Path>) -> Result<()> {
    let data = read_dataset(data_dir)?;
    let trainer = match resume {
        Some(p) => {
            let ckpt = load_checkpoint(p)?;
            let mut t = Trainer::from_checkpoint(&ckpt)?;
            if let Some(s) = steps {
                t.set_total_steps(s);
            }
            t
        }
        None => Trainer::new(train_config(cli, steps)?.0)?,
    };
    check_model_matches_data(trainer.config(), &data)?;
    let train = data.split(Split::Train);
    let run = train_to_dir(&data, &train, trainer, &cli.out)?;
    if let Some(last) = run.logs.last() {
        println!(
            "step {} l_pbr {:.5} l_cons {:.5} l_total {:.5}",
            last.step, last.loss.l_pbr, last.loss.l_cons, last.loss.l_total
        );
    }
    println!("checkpoint {}", run.final_checkpoint.display());
    println!("loss log {}", run.loss_csv.display());
    Ok(())
}

fn load_for(data: &Dataset, path: &Path) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    ckpt.ensure_views(data.grid().target_views, data.grid().resolution)?;
    Ok(ckpt)
}

fn sample(cli: &Cli, data_dir: &Path, ckpt_path: &Path, scene: &str, reference: &str, elevation: f64, offset: f64) -> Result<()> {
    let data = read_dataset(data_dir)?;
    let ckpt = load_for(&data, ckpt_path)?;
    let cfg = eval_config(cli)?;
    let s = resolve_scene(&data, scene)?;
    if !data.grid().fixed_elevations.contains(&elevation) {
        return Err(Error::invalid(format!(
            "target elevation {elevation} is not one of the dataset's fixed elevations {:?}",
            data.grid().fixed_elevations
        )));
    }
    data.candidate_by_path(s, reference)?;
    let ref_img = data.load_image_path(s, reference)?;
    let targets = target_azimuths(offset, data.grid().target_views)
        .into_iter()
        .map(|az| data.target(s, elevation, az))
        .collect::<Result<Vec<_>>>()?;
    let geometry: Vec<_> = targets.iter().map(|t| t.geometry.clone()).collect();
    let model = ckpt.denoiser()?;
    let mut rng = rng_for(cfg.seed, streams::SAMPLING);
    let maps = sample_multiview(&model, &ckpt.schedule, &geometry, &ref_img, &cfg.sampler, &mut rng)?;
    create_out(cli)?;
    let mut manifest = String::new();
    let _ = writeln!(manifest, "checkpoint={}", ckpt_path.display());
    let _ = writeln!(manifest, "scene={}", data.scene_entry(s)?.id);
    let _ = writeln!(manifest, "reference={reference}");
    let _ = writeln!(manifest, "seed={}", cfg.seed);
    let _ = writeln!(manifest, "config={}", config_label(cli));
    for (k, (m, t)) in maps.iter().zip(&targets).enumerate() {
        write_png(&cli.out.join(format!("view{k}_albedo.png")), &m.albedo)?;
        write_png(&cli.out.join(format!("view{k}_mr.png")), &m.mr)?;
        let _ = writeln!(manifest, "view{k}=e{}_a{}", t.pose.elevation, t.pose.azimuth);
    }
    write_text(&cli.out.join("sample.txt"), &manifest)?;
    println!("wrote {} view map pairs to {}", maps.len(), cli.out.display());
    Ok(())
}

fn relight_cmd(cli: &Cli, data_dir: &Path, scene: &str, view: &str, maps_dir: Option<&Path>, tags: &[String]) -> Result<()> {
    let data = read_dataset(data_dir)?;
    let s = resolve_scene(&data, scene)?;
    let entry = data.view_entry(s, view).map_err(|_| Error::invalid(format!("scene has no view {view}")))?;
    let pose = CameraPose::new(entry.elevation, entry.azimuth)?;
    let geometry = data.load_geometry(s, view)?;
    let maps = match maps_dir {
        Some(dir) => {
            let read = |name: &str| -> Result<Raster> {
                let p = dir.join(name);
                decode_png_rgb(&std::fs::read(&p).map_err(|e| Error::io(&p, e))?)
            };
            MaterialMaps { albedo: read("albedo.png")?, mr: read("mr.png")? }
        }
        None => data.load_maps(s, view)?,
    };
    if maps.albedo.height != geometry.normal.height || maps.albedo.width != geometry.normal.width {
        return Err(Error::invalid("maps and view geometry differ in resolution"));
    }
    let lightings = if tags.is_empty() {
        entry.lightings.iter().map(|t| LightingCondition::from_tag(t)).collect::<Result<Vec<_>>>()?
    } else {
        tags.iter().map(|t| LightingCondition::from_tag(t)).collect::<Result<Vec<_>>>()?
    };
    if lightings.is_empty() {
        return Err(Error::invalid(format!("view {view} has no stored lightings; pass --lighting")));
    }
    create_out(cli)?;
    for light in &lightings {
        let img = relight(&maps, &geometry, light, &pose)?;
        let name = format!("rgb_{}.png", light.tag());
        write_png(&cli.out.join(&name), &img)?;
        let stored = if entry.lightings.contains(&light.tag()) {
            let d = data.load_image_path(s, &format!("{view}/{name}"))?;
            let diff = img.data.iter().zip(&d.data).fold(0.0f32, |m, (a, b)| m.max((a - b).abs()));
            format!(" (max abs difference to dataset render {diff})")
        } else {
            String::new()
        };
        println!("{name}{stored}");
    }
    Ok(())
}

fn summary_lines(r: &EvalReport) -> String {
    format!(
        "albedo_mae {:.5}\nmr_mae {:.5}\nbaseline_albedo_mae {:.5}\nillumination_invariance_score {:.5}\ncross_view_consistency_score {:.5}\nalignment_score {:.5}",
        r.albedo_mae, r.mr_mae, r.baseline_albedo_mae, r.illumination_invariance_score, r.cross_view_consistency_score, r.alignment_score
    )
}

fn split_scenes(data: &Dataset, split: SplitArg, limit: Option<usize>) -> Vec<usize> {
    let mut scenes = data.split(match split {
        SplitArg::Train => Split::Train,
        SplitArg::Heldout => Split::Heldout,
    });
    if let Some(n) = limit {
        scenes.truncate(n);
    }
    scenes
}

fn evaluate_to(cli: &Cli, cfg: &EvalConfig, data: &Dataset, ckpt_path: &Path, scenes: &[usize], split: &str, out: &Path) -> Result<EvalReport> {
    let ckpt = load_for(data, ckpt_path)?;
    let model = ckpt.denoiser()?;
    let (report, preds) = evaluate(&model, &ckpt.schedule, data, scenes, cfg)?;
    let eval_json = serde_json::to_string(cfg).map_err(|e| Error::Config(e.to_string()))?;
    let context = [
        ("checkpoint", ckpt_path.display().to_string()),
        ("checkpoint_step", ckpt.step.to_string()),
        ("dataset", data.root.display().to_string()),
        ("split", split.to_string()),
        ("seed", cfg.seed.to_string()),
        ("train_seed", ckpt.config.seed.to_string()),
        ("config", config_label(cli)),
        ("eval_config", eval_json),
    ];
    write_report(&out.join("report.txt"), &report, &context)?;
    write_contact_sheet(&out.join("contact_sheet.png"), &preds[..preds.len().min(4)])?;
    Ok(report)
}

fn eval(cli: &Cli, data_dir: &Path, ckpt: &Path, split: SplitArg, limit: Option<usize>) -> Result<()> {
    let data = read_dataset(data_dir)?;
    let scenes = split_scenes(&data, split, limit);
    let name = format!("{split:?}").to_lowercase();
    let report = evaluate_to(cli, &eval_config(cli)?, &data, ckpt, &scenes, &name, &cli.out)?;
    println!("{}", summary_lines(&report));
    println!("report {}", cli.out.join("report.txt").display());
    Ok(())
}

fn ablate(cli: &Cli, which: Which, data_dir: &Path, steps: Option<usize>, limit: Option<usize>) -> Result<()> {
    let data = read_dataset(data_dir)?;
    let (base, eval_cfg) = train_config(cli, steps)?;
    check_model_matches_data(&base, &data)?;
    let (name, variant) = match which {
        Which::Consistency => ("no_consistency", TrainConfig { disable_consistency: true, ..base.clone() }),
        Which::Mcaa => ("no_mcaa", TrainConfig { disable_mcaa: true, ..base.clone() }),
    };
    let train = data.split(Split::Train);
    let heldout = split_scenes(&data, SplitArg::Heldout, limit);
    let mut reports = Vec::new();
    for (arm, cfg) in [("baseline", base), (name, variant)] {
        let dir = cli.out.join(arm);
        log::info!("training {arm}");
        let run = train_to_dir(&data, &train, Trainer::new(cfg)?, &dir)?;
        log::info!("evaluating {arm}");
        reports.push(evaluate_to(cli, &eval_cfg, &data, &run.final_checkpoint, &heldout, "heldout", &dir)?);
    }
    let (b, v) = (&reports[0], &reports[1]);
    let rows = [
        ("albedo_mae", b.albedo_mae, v.albedo_mae),
        ("mr_mae", b.mr_mae, v.mr_mae),
        ("illumination_invariance_score", b.illumination_invariance_score, v.illumination_invariance_score),
        ("cross_view_consistency_score", b.cross_view_consistency_score, v.cross_view_consistency_score),
        ("alignment_score", b.alignment_score, v.alignment_score),
    ];
    let mut table = String::new();
    let _ = writeln!(table, "# ablation {name}; config {}; seed {}", config_label(cli), cli.seed.map_or("config".into(), |s| s.to_string()));
    let _ = writeln!(table, "{:<32} {:>12} {:>12} {:>12}", "metric", "baseline", name, "difference");
    for (m, x, y) in rows {
        let _ = writeln!(table, "{m:<32} {x:>12.6} {y:>12.6} {:>12.6}", y - x);
    }
    match which {
        Which::Consistency => {
            let _ = writeln!(table, "invariance_gap={}", v.illumination_invariance_score - b.illumination_invariance_score);
        }
        Which::Mcaa => {
            let _ = writeln!(table, "alignment_gap={}", b.alignment_score - v.alignment_score);
        }
    }
    write_text(&cli.out.join("ablation.txt"), &table)?;
    print!("{table}");
    Ok(())
}
