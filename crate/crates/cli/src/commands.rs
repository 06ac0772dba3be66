use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use ndarray::Array2;

use gausskey_core::dynamics::{
    checkpoint, rollout, train::train_with, Feedback, LstmModel, ModelConfig, Normalizer, RolloutConfig, TrainConfig,
};
use gausskey_core::heatmap::render_heatmap_regularized;
use gausskey_core::interpolate::interpolate_sequence;
use gausskey_core::metrics::{psnr, ssim, write_report, FrameMetrics, Image};
use gausskey_core::rng::child_seed;
use gausskey_core::seqcsv::{read_sequence_file, write_sequence_file};
use gausskey_core::state::{fit_all, pack_state, softmax_normalize, ActivationMap};
use gausskey_core::synthetic::{generate, TrajectorySpec};
use gausskey_core::{pgm, PoseState, StateSequence};

use crate::manifest::{beside, Run};
use crate::{EvalArgs, FitArgs, InterpArgs, Normalize, PredictArgs, RenderArgs, SynthArgs, TrainArgs};

fn create_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))?;
    }
    Ok(())
}

fn read_csv(path: &Path) -> Result<StateSequence> {
    read_sequence_file(path).with_context(|| format!("reading {}", path.display()))
}

fn write_csv(seq: &StateSequence, path: &Path) -> Result<()> {
    create_parent(path)?;
    write_sequence_file(seq, path).with_context(|| format!("writing {}", path.display()))
}

fn frame_dir(root: &Path, t: usize) -> PathBuf {
    root.join(format!("frame_{t:04}"))
}

fn write_frames(root: &Path, seq: &StateSequence, size: usize, eps: f64) -> Result<()> {
    for (t, state) in seq.frames().iter().enumerate() {
        let heat =
            render_heatmap_regularized(state, size, size, eps).with_context(|| format!("rendering frame {t}"))?;
        pgm::write_parts(&frame_dir(root, t), heat.data())?;
    }
    Ok(())
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let run = Run::start("synth", a, Some(a.seed))?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut outputs = Vec::new();
    for i in 0..a.count as usize {
        let seed = if a.count == 1 { a.seed } else { child_seed(a.seed, "synth/dataset", i as u64) };
        let spec = TrajectorySpec {
            kind: a.kind.into(),
            landmarks: a.k as usize,
            frames: a.t as usize,
            seed,
            noise_sigma: a.noise,
            covariance: a.covariance.into(),
            speed: a.speed,
            render: None,
        };
        let generated = generate(&spec)?;
        let csv = a.out.join(format!("seq_{i:04}.csv"));
        write_csv(&generated.sequence, &csv)?;
        outputs.push(csv);
        if let Some(size) = a.render {
            ensure!(size > 0, "--render size must be positive");
            let dir = a.out.join(format!("frames_{i:04}"));
            write_frames(&dir, &generated.sequence, size, gausskey_core::state::DEFAULT_EPS)?;
            outputs.push(dir);
        }
    }
    run.finish(&a.out.join("manifest.json"), vec![], outputs)
}

/// Frame directories under `root`, or `root` itself when it holds parts.
fn frame_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    ensure!(root.is_dir(), "{} is not a directory", root.display());
    if pgm::part_path(root, 0).exists() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && pgm::part_path(p, 0).exists())
        .collect();
    dirs.sort();
    ensure!(!dirs.is_empty(), "no frames (part_<k>.pgm) found under {}", root.display());
    Ok(dirs)
}

pub fn fit(a: &FitArgs) -> Result<()> {
    let run = Run::start("fit", a, None)?;
    let dirs = frame_dirs(&a.frames)?;
    let mut frames = Vec::with_capacity(dirs.len());
    let mut shape = None;
    for dir in &dirs {
        let grids = pgm::read_parts(dir).with_context(|| format!("frame {}", dir.display()))?;
        let dim = grids.dim();
        match shape {
            None => shape = Some(dim),
            Some(s) if s != dim => {
                bail!("frame {} has K×H×W = {:?}, expected {:?} like the first frame", dir.display(), dim, s)
            }
            _ => {}
        }
        let prob = match a.normalize {
            Normalize::Softmax => softmax_normalize(&ActivationMap::raw(grids), a.temperature),
            Normalize::Sum => ActivationMap::normalize_by_sum(grids),
        }
        .with_context(|| format!("normalizing frame {}", dir.display()))?;
        let gaussians = fit_all(&prob, a.eps).with_context(|| format!("fitting frame {}", dir.display()))?;
        frames.push(pack_state(&gaussians)?);
    }
    write_csv(&StateSequence::new(frames)?, &a.out)?;
    run.finish(&beside(&a.out), vec![a.frames.clone()], vec![a.out.clone()])
}

pub fn render(a: &RenderArgs) -> Result<()> {
    let run = Run::start("render", a, None)?;
    let seq = read_csv(&a.input)?;
    fs::create_dir_all(&a.out)?;
    write_frames(&a.out, &seq, a.size as usize, a.eps)?;
    run.finish(&a.out.join("manifest.json"), vec![a.input.clone()], vec![a.out.clone()])
}

pub fn interp(a: &InterpArgs) -> Result<()> {
    let run = Run::start("interp", a, None)?;
    let seq = read_csv(&a.input)?;
    let last = seq.len() - 1;
    let (from, to) = (a.from.unwrap_or(0), a.to.unwrap_or(last));
    ensure!(from <= last && to <= last, "frame index out of range (sequence has {} frames)", seq.len());
    let out = interpolate_sequence(&seq.frames()[from], &seq.frames()[to], a.steps as usize)?;
    write_csv(&out, &a.out)?;
    run.finish(&beside(&a.out), vec![a.input.clone()], vec![a.out.clone()])
}

fn collect_csvs(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "csv"))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    ensure!(!out.is_empty(), "no training CSVs found");
    Ok(out)
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let run = Run::start("train", a, Some(a.seed))?;
    let files = collect_csvs(&a.data)?;
    let data = files.iter().map(|f| read_csv(f)).collect::<Result<Vec<_>>>()?;
    let k = data[0].landmarks();
    let rollout_cfg = RolloutConfig::new(a.n_inputs as usize, a.m_future as usize)?;
    let config = ModelConfig { landmarks: k, layers: a.layers as usize, hidden: a.hidden as usize };
    let mut model =
        LstmModel::new(config, child_seed(a.seed, "train/init", 0))?.with_normalizer(Normalizer::fit(&data)?)?;
    let train_cfg = TrainConfig {
        learning_rate: a.lr,
        weight_decay: a.weight_decay,
        batch_size: a.batch_size as usize,
        max_steps: a.steps as usize,
        seed: a.seed,
        grad_clip: (a.grad_clip > 0.0).then_some(a.grad_clip),
        feedback: Feedback::Attached,
        augment: a.augment,
        ..Default::default()
    };
    let mut losses = Vec::with_capacity(train_cfg.max_steps);
    let result = train_with(&mut model, &data, &rollout_cfg, &train_cfg, |_, l| losses.push(l));
    let loss_path = {
        let mut name = a.out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".loss.csv");
        a.out.with_file_name(name)
    };
    create_parent(&a.out)?;
    let mut text = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        text.push_str(&format!("{i},{l:.16e}\n"));
    }
    fs::write(&loss_path, text)?;
    if let Err(e) = result {
        let last = losses.last().map_or("none".to_string(), |l| format!("{l:e}"));
        bail!("training failed: {e} (last completed loss {last})");
    }
    checkpoint::save(&model, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    eprintln!("trained {} steps, final loss {:e}", losses.len(), losses.last().copied().unwrap_or(f64::NAN));
    run.finish(&beside(&a.out), files, vec![a.out.clone(), loss_path])
}

pub fn predict(a: &PredictArgs) -> Result<()> {
    let run = Run::start("predict", a, None)?;
    let model = checkpoint::load(&a.ckpt).with_context(|| format!("loading {}", a.ckpt.display()))?;
    let seq = read_csv(&a.seeds)?;
    ensure!(
        seq.landmarks() == model.config.landmarks,
        "seed CSV has K = {} but the checkpoint expects K = {}",
        seq.landmarks(),
        model.config.landmarks
    );
    let n = a.n_seed.map_or(seq.len(), |n| n as usize);
    ensure!(n <= seq.len(), "--n-seed {n} exceeds the {} frames available", seq.len());
    let out = rollout(&model, &seq.frames()[..n], a.horizon as usize)?;
    write_csv(&out, &a.out)?;
    run.finish(&beside(&a.out), vec![a.ckpt.clone(), a.seeds.clone()], vec![a.out.clone()])
}

/// All parts of a frame composited by per-pixel maximum.
fn frame_image(state: &PoseState, size: usize) -> Result<Image> {
    let heat = render_heatmap_regularized(state, size, size, gausskey_core::state::DEFAULT_EPS)?;
    let mut img = Array2::<f64>::zeros((size, size));
    for part in heat.data().outer_iter() {
        img.zip_mut_with(&part, |a, &b| *a = a.max(b));
    }
    Ok(Image::new(img)?)
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let run = Run::start("eval", a, None)?;
    let pred = read_csv(&a.pred)?;
    let reference = read_csv(&a.reference)?;
    ensure!(
        pred.landmarks() == reference.landmarks(),
        "prediction has K = {}, reference K = {}",
        pred.landmarks(),
        reference.landmarks()
    );
    ensure!(pred.len() == reference.len(), "prediction has {} frames, reference {}", pred.len(), reference.len());
    ensure!(a.skip < pred.len(), "--skip {} leaves no frames", a.skip);
    let size = a.size as usize;
    let mut rows = Vec::new();
    for (p, r) in pred.frames().iter().zip(reference.frames()).skip(a.skip) {
        let (ip, ir) = (frame_image(p, size)?, frame_image(r, size)?);
        let state_mse =
            p.as_slice().iter().zip(r.as_slice()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / p.len() as f64;
        rows.push(FrameMetrics { psnr_db: psnr(&ip, &ir)?, ssim: ssim(&ip, &ir)?, state_mse });
    }
    create_parent(&a.out)?;
    let mut buf = Vec::new();
    write_report(&rows, &mut buf)?;
    fs::write(&a.out, buf)?;
    run.finish(&beside(&a.out), vec![a.pred.clone(), a.reference.clone()], vec![a.out.clone()])
}
