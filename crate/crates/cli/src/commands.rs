use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde_json::json;

use color_lab::geometry::LayoutSet;
use color_lab::graph::{SceneGraph, Vocab};
use color_lab::render::{render_hard, render_soft, Palette, Rgb};
use color_lab::scenes::{generate_dataset, load_dataset, save_dataset, sg_duplication_stats, Dataset, Scene, SceneConfig};
use color_lab::trainer::checkpoint;
use color_lab::trainer::{evaluate, evaluate_ground_truth, layouts_for_graph, EvalOptions, Prepared, StepRecord, TrainConfig, TrainState};

use crate::{Ablate, EvalArgs, GenDataArgs, RenderArgs, StatsArgs, TrainArgs};

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const LOG_FILE: &str = "train.jsonl";

fn load(path: &Path) -> Result<Dataset> {
    load_dataset(path).with_context(|| format!("reading dataset {}", path.display()))
}

fn check_vocab(model: &Vocab, data: &Vocab) -> Result<()> {
    if model != data {
        bail!("vocabulary mismatch: checkpoint classes {:?}, dataset classes {:?}", model.classes, data.classes);
    }
    Ok(())
}

/// The last `held_out` scenes, or all of them when `held_out` is 0.
fn tail(scenes: &[Scene], held_out: usize) -> &[Scene] {
    if held_out == 0 {
        scenes
    } else {
        &scenes[scenes.len().saturating_sub(held_out)..]
    }
}

pub fn gen_data(a: &GenDataArgs) -> Result<()> {
    let config = SceneConfig {
        height: a.height,
        width: a.width,
        min_objects: a.min_objects,
        max_objects: a.max_objects,
        max_edges: a.max_edges,
        ..SceneConfig::default()
    };
    let data = generate_dataset(a.count, &config, a.seed.seed.unwrap_or(0))?;
    if a.count == 0 {
        eprintln!("warning: writing a dataset with no scenes");
    }
    save_dataset(&data, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let stats = sg_duplication_stats(&data);
    println!("{}", json!({"scenes": data.scenes.len(), "duplication": stats}));
    Ok(())
}

fn resolve_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match (&a.config, &a.resume) {
        (Some(p), _) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
        }
        (None, Some(r)) => checkpoint::load(r).with_context(|| format!("reading checkpoint {}", r.display()))?.config,
        (None, None) => TrainConfig::default(),
    };
    for o in &a.overrides {
        cfg.set(o)?;
    }
    for ab in &a.ablate {
        match ab {
            Ablate::NoDiscriminator => cfg.ablation.disable_discriminator = true,
            Ablate::NoLayoutLoss => cfg.ablation.disable_layout_loss = true,
            Ablate::Baseline => cfg.ablation.baseline_mode = true,
        }
    }
    if let Some(steps) = a.steps {
        cfg.steps = steps;
    }
    if let Some(seed) = a.seed.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let cfg = resolve_config(a)?;
    let data = load(&a.dataset)?;
    cfg.check_grid(data.header.height, data.header.width)?;
    if a.held_out >= data.scenes.len() {
        bail!("held-out count {} leaves no training scenes out of {}", a.held_out, data.scenes.len());
    }
    let mut state = match &a.resume {
        Some(path) => checkpoint::resume(path, &cfg).with_context(|| format!("resuming from {}", path.display()))?,
        None => TrainState::new(cfg.clone(), data.vocab().clone())?,
    };
    check_vocab(&state.vocab, data.vocab())?;

    let cut = data.scenes.len() - a.held_out;
    let mask = cfg.model.mask_size;
    let train = Prepared::prepare_all(&data.scenes[..cut], data.vocab(), mask)?;
    let held = Prepared::prepare_all(&data.scenes[cut..], data.vocab(), mask)?;

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    fs::write(a.out.join("config.json"), cfg.to_json())?;
    let log = OpenOptions::new()
        .create(true)
        .write(true)
        .append(a.resume.is_some())
        .truncate(a.resume.is_none())
        .open(a.out.join(LOG_FILE))?;
    let mut log = BufWriter::new(log);

    let remaining = cfg.steps.saturating_sub(state.step);
    let vocab = data.vocab().clone();
    let opts = EvalOptions { samples: cfg.eval_samples, seed: cfg.seed, ..EvalOptions::default() };
    let out = a.out.clone();
    state.run(&train, remaining, |s, record: &StepRecord| {
        writeln!(log, "{}", record.to_json())?;
        if cfg.eval_every > 0 && s.step % cfg.eval_every == 0 && !held.is_empty() {
            let report = evaluate(&s.model, &vocab, &held, &opts)?;
            fs::write(out.join(format!("eval_step{}.json", s.step)), report.to_json())?;
            eprint!("{}", report.table(&format!("step {}", s.step)));
        }
        Ok(())
    })?;
    log.flush()?;
    checkpoint::save(&state, &a.out.join(CHECKPOINT_FILE))?;
    eprintln!("trained to step {}; checkpoint in {}", state.step, a.out.display());
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let data = load(&a.dataset)?;
    let scenes = tail(&data.scenes, a.held_out);
    let mut opts = EvalOptions { samples: a.k.max(1), ..EvalOptions::default() };
    let (report, label) = match &a.checkpoint {
        None => (evaluate_ground_truth(scenes, data.vocab(), &opts), "ground truth".to_string()),
        Some(path) => {
            let state = checkpoint::load(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
            state.config.check_grid(data.header.height, data.header.width)?;
            check_vocab(&state.vocab, data.vocab())?;
            opts.seed = a.seed.seed.unwrap_or(state.config.seed);
            let prepared = Prepared::prepare_all(scenes, data.vocab(), state.config.model.mask_size)?;
            (evaluate(&state.model, data.vocab(), &prepared, &opts)?, format!("step {}", state.step))
        }
    };
    if let Some(out) = &a.out {
        fs::write(out, report.to_json()).with_context(|| format!("writing {}", out.display()))?;
    }
    print!("{}", report.table(&label));
    Ok(())
}

fn load_palette(path: Option<&Path>) -> Result<Palette> {
    let mut palette = Palette::default();
    if let Some(p) = path {
        let text = fs::read_to_string(p).with_context(|| format!("reading palette {}", p.display()))?;
        let extra: BTreeMap<String, Rgb> = serde_json::from_str(&text).with_context(|| format!("parsing palette {}", p.display()))?;
        palette.colors.extend(extra);
    }
    Ok(palette)
}

fn write_pair(dir: &Path, stem: &str, ls: &LayoutSet, colors: &[Rgb]) -> Result<()> {
    fs::write(dir.join(format!("{stem}_soft.ppm")), render_soft(ls, colors).to_ppm())?;
    fs::write(dir.join(format!("{stem}_hard.ppm")), render_hard(ls, colors).to_ppm())?;
    Ok(())
}

fn colors_for(palette: &Palette, vocab: &Vocab, classes: &[usize]) -> Vec<Rgb> {
    let names: Vec<&str> = classes.iter().map(|&c| vocab.classes[c].as_str()).collect();
    let (colors, missing) = palette.resolve(&names);
    for name in missing {
        eprintln!("warning: no palette color for class {name:?}; using a fallback color");
    }
    colors
}

pub fn render(a: &RenderArgs) -> Result<()> {
    let palette = load_palette(a.palette.as_deref())?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    if let (Some(path), Some(id)) = (&a.dataset, a.scene) {
        let data = load(path)?;
        let scene = data.scenes.iter().find(|s| s.id == id).with_context(|| format!("no scene with id {id}"))?;
        let colors = colors_for(&palette, data.vocab(), &scene.graph.classes[..scene.objects.len()]);
        return write_pair(&a.out, &format!("scene{id}"), &scene.layouts(), &colors);
    }
    let (Some(ckpt), Some(graph_path)) = (&a.checkpoint, &a.graph) else {
        bail!("render needs either --checkpoint with --graph, or --dataset with --scene");
    };
    let state = checkpoint::load(ckpt).with_context(|| format!("reading checkpoint {}", ckpt.display()))?;
    let text = fs::read_to_string(graph_path).with_context(|| format!("reading graph {}", graph_path.display()))?;
    let graph = SceneGraph::from_record(text.trim())?;
    let problems = graph.validate(&state.vocab);
    if !problems.is_empty() {
        bail!("invalid scene graph: {}", problems.join("; "));
    }
    let graph = if graph.dummy { graph } else { graph.augment_with_dummy(&state.vocab)? };
    let colors = colors_for(&palette, &state.vocab, &graph.classes[..graph.num_objects()]);
    for &seed in &a.seeds {
        let ls = layouts_for_graph(&state.model, &graph, seed)?;
        write_pair(&a.out, &format!("seed{seed}"), &ls, &colors)?;
    }
    Ok(())
}

fn dataset_summary(data: &Dataset) -> serde_json::Value {
    let vocab = data.vocab();
    let mut objects: BTreeMap<usize, usize> = BTreeMap::new();
    let mut classes: BTreeMap<&str, usize> = BTreeMap::new();
    let mut relations: BTreeMap<&str, usize> = BTreeMap::new();
    for s in &data.scenes {
        *objects.entry(s.objects.len()).or_default() += 1;
        for o in &s.objects {
            *classes.entry(vocab.classes[o.class].as_str()).or_default() += 1;
        }
        for e in &s.graph.edges {
            *relations.entry(vocab.relations[e.rel].as_str()).or_default() += 1;
        }
    }
    json!({
        "scenes": data.scenes.len(),
        "H": data.header.height,
        "W": data.header.width,
        "seed": data.header.seed,
        "objects_per_scene": objects,
        "classes": classes,
        "relations": relations,
        "duplication": sg_duplication_stats(data),
    })
}

/// One character per bucket of the series, scaled between its min and max.
fn sparkline(values: &[f64], width: usize) -> String {
    const BARS: [char; 8] = ['▁', '▂', '▃', '▄', '▅', '▆', '▇', '█'];
    if values.is_empty() {
        return String::new();
    }
    let buckets = width.min(values.len());
    let means: Vec<f64> = (0..buckets)
        .map(|b| {
            let chunk = &values[b * values.len() / buckets..(b + 1) * values.len() / buckets];
            chunk.iter().sum::<f64>() / chunk.len() as f64
        })
        .collect();
    let lo = means.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    means
        .iter()
        .map(|&m| {
            let t = if hi > lo { (m - lo) / (hi - lo) } else { 0.0 };
            BARS[((t * 7.0).round() as usize).min(7)]
        })
        .collect()
}

fn log_summary(path: &Path) -> Result<String> {
    let text = fs::read_to_string(path).with_context(|| format!("reading log {}", path.display()))?;
    let mut series: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let value: serde_json::Value = serde_json::from_str(line).with_context(|| format!("log line {}", i + 1))?;
        let Some(obj) = value.as_object() else { bail!("log line {} is not an object", i + 1) };
        for (k, v) in obj {
            if let (true, Some(x)) = (k != "step", v.as_f64()) {
                series.entry(k.clone()).or_default().push(x);
            }
        }
    }
    let mut out = format!("{:<10} {:>7} {:>12} {:>12} {:>12}  trend\n", "term", "count", "first", "last", "mean");
    for (k, v) in &series {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        out += &format!("{:<10} {:>7} {:>12.4} {:>12.4} {:>12.4}  {}\n", k, v.len(), v[0], v[v.len() - 1], mean, sparkline(v, 40));
    }
    Ok(out)
}

pub fn stats(a: &StatsArgs) -> Result<()> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    if let Some(path) = &a.dataset {
        let data = load(path)?;
        writeln!(out, "{}", serde_json::to_string_pretty(&dataset_summary(&data))?)?;
    }
    if let Some(path) = &a.log {
        write!(out, "{}", log_summary(path)?)?;
    }
    Ok(())
}
