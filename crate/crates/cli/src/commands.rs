//! The four subcommands. Input validation errors are usage errors (exit 2);
//! failures past setup are runtime errors (exit 1).

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use snakeseg_core::mask::Mask;
use snakeseg_core::metrics::{self, MetricsReport};
use snakeseg_core::network::{self, DscNet};
use snakeseg_core::persistence::{compute_persistence, diagrams_to_text, CubicalFiltration};
use snakeseg_core::snake::trace_to_text;
use snakeseg_core::synth;
use snakeseg_core::tensor::Tensor;

use crate::config::RunConfig;
use crate::{run_err, setup_err, CliError};

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn runtime(msg: impl Into<String>) -> CliError {
    CliError::Runtime(msg.into())
}

fn parse_size(s: &str) -> Result<(usize, usize), CliError> {
    let parse_one = |v: &str| {
        v.parse::<usize>().map_err(|_| usage(format!("--size: {v:?} is not a pixel count")))
    };
    match s.split_once('x') {
        Some((w, h)) => Ok((parse_one(h)?, parse_one(w)?)),
        None => {
            let side = parse_one(s)?;
            Ok((side, side))
        }
    }
}

pub fn gen(
    n: Option<usize>,
    seed: Option<u64>,
    size: Option<&str>,
    out: &Path,
    config: Option<&Path>,
    sets: &[String],
) -> Result<(), CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = config {
        cfg.load_file(path)?;
    }
    cfg.apply_overrides(sets)?;
    if let Some(n) = n {
        cfg.data_n = n;
    }
    if let Some(seed) = seed {
        cfg.data_seed = seed;
    }
    if let Some(size) = size {
        let (h, w) = parse_size(size)?;
        cfg.data_h = h;
        cfg.data_w = w;
    }
    if cfg.data_n == 0 {
        return Err(usage("--n must be >= 1"));
    }

    let items =
        synth::make_dataset::<f32>(cfg.data_n, cfg.data_seed, &cfg.template()).map_err(setup_err)?;
    std::fs::create_dir_all(out).map_err(|e| runtime(format!("create {}: {e}", out.display())))?;
    synth::save_dataset(out, &items).map_err(run_err)?;

    let mut manifest = format!(
        "n={} seed={} h={} w={}\n",
        cfg.data_n, cfg.data_seed, cfg.data_h, cfg.data_w
    );
    for i in 0..cfg.data_n {
        let _ = writeln!(manifest, "img_{i:04} {}", cfg.data_seed.wrapping_add(i as u64));
    }
    std::fs::write(out.join("manifest.txt"), manifest)
        .map_err(|e| runtime(format!("write manifest: {e}")))?;
    println!("wrote {} items to {}", cfg.data_n, out.display());
    Ok(())
}

/// Builds the validation report used by train and eval; rows a metric is
/// undefined on (empty prediction or label) are skipped with a note.
fn report_for(
    model: &DscNet<f32>,
    items: &[(usize, &(Tensor<f32>, Mask))],
) -> Result<MetricsReport, CliError> {
    let mut report = MetricsReport::new();
    for (idx, (image, label)) in items {
        let prob = network::predict_prob(model, image).map_err(run_err)?;
        let name = format!("img_{idx:04}");
        match metrics::evaluate_image(&name, &prob, label) {
            Ok(row) => report.push(row),
            Err(e) => eprintln!("note: skipping {name}: {e}"),
        }
    }
    Ok(report)
}

pub fn train(
    config: Option<&Path>,
    loss: Option<&str>,
    data: Option<&Path>,
    out: &Path,
    sets: &[String],
) -> Result<(), CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = config {
        cfg.load_file(path)?;
    }
    cfg.apply_overrides(sets)?;
    if let Some(loss) = loss {
        cfg.set("loss.mode", loss)?;
    }
    if let Some(data) = data {
        cfg.data_dir = data.display().to_string();
    }

    let data_dir = Path::new(&cfg.data_dir);
    let items = synth::load_dataset(data_dir)
        .map_err(|e| usage(format!("dataset at {}: {e}", data_dir.display())))?;
    let (train_idx, val_idx) = synth::parity_split(items.len());
    if val_idx.is_empty() {
        return Err(usage("dataset needs at least 2 items for the parity split"));
    }
    let train_items: Vec<_> = train_idx.iter().map(|&i| items[i].clone()).collect();
    let val_items: Vec<_> = val_idx.iter().map(|&i| items[i].clone()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.model_seed);
    let mut model = DscNet::<f32>::new(&cfg.network(), &mut rng).map_err(setup_err)?;
    let train_cfg = cfg.training();
    let log = network::train(&mut model, &train_items, &val_items, &train_cfg).map_err(|e| {
        match e {
            e @ snakeseg_core::Error::InvalidArgument { .. } => setup_err(e),
            other => run_err(other),
        }
    })?;

    std::fs::create_dir_all(out).map_err(|e| runtime(format!("create {}: {e}", out.display())))?;
    model.save_checkpoint(out.join("model.dsck")).map_err(run_err)?;
    std::fs::write(out.join("train_log.csv"), network::training_log_csv(&log))
        .map_err(|e| runtime(format!("write log: {e}")))?;

    let rows: Vec<_> = val_idx.iter().zip(&val_items).map(|(&i, item)| (i, item)).collect();
    let report = report_for(&model, &rows)?;
    print!("{}", report.to_csv());
    Ok(())
}

pub fn eval(checkpoint: &Path, data: &Path, report_path: &Path) -> Result<(), CliError> {
    if !checkpoint.exists() {
        return Err(usage(format!("missing checkpoint {}", checkpoint.display())));
    }
    let model = DscNet::<f32>::load_checkpoint(checkpoint).map_err(setup_err)?;
    let items = synth::load_dataset(data)
        .map_err(|e| usage(format!("dataset at {}: {e}", data.display())))?;
    let rows: Vec<_> = items.iter().enumerate().collect();
    let report = report_for(&model, &rows)?;
    if report.is_empty() {
        return Err(runtime("no evaluable items (all rows skipped)"));
    }
    let csv = report.to_csv();
    std::fs::write(report_path, &csv)
        .map_err(|e| runtime(format!("write {}: {e}", report_path.display())))?;
    // header + mean±std summary on stdout; per-image rows live in the file
    let mut lines = csv.lines();
    let header = lines.next().unwrap_or_default();
    let summary = lines.last().unwrap_or_default();
    println!("{header}");
    println!("{summary}");
    Ok(())
}

/// Overlay gray bands: background 0, prediction-and-label agreement 96,
/// label only 192, prediction only 255 (disagreement is brightest).
fn overlay_gray(pred: &Mask, label: Option<&Mask>) -> Vec<u8> {
    let mut gray = vec![0u8; pred.h() * pred.w()];
    for (i, g) in gray.iter_mut().enumerate() {
        let p = pred.data()[i];
        let l = label.map(|m| m.data()[i]).unwrap_or(false);
        *g = match (p, l) {
            (true, true) => 96,
            (false, true) => 192,
            (true, false) => if label.is_some() { 255 } else { 96 },
            (false, false) => 0,
        };
    }
    gray
}

fn mask_from_pgm(path: &Path) -> Result<Mask, CliError> {
    let bytes = std::fs::read(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let (h, w, gray) = synth::parse_pgm(&bytes).map_err(setup_err)?;
    Mask::new(h, w, gray.iter().map(|&g| g >= 128).collect()).map_err(run_err)
}

fn dump_diagrams(mask: &Mask, path: &Path) -> Result<(), CliError> {
    let filtration = CubicalFiltration::from_mask(mask);
    let (d0, d1) = compute_persistence(&filtration).map_err(run_err)?;
    std::fs::write(path, diagrams_to_text(&d0, &d1))
        .map_err(|e| runtime(format!("write {}: {e}", path.display())))
}

pub fn inspect(
    checkpoint: &Path,
    image_path: &Path,
    point: Option<&str>,
    label: Option<&Path>,
    diagrams: bool,
    out: &Path,
) -> Result<(), CliError> {
    if point.is_none() && !diagrams {
        return Err(usage("nothing to do: pass --point x,y and/or --diagrams"));
    }
    if !checkpoint.exists() {
        return Err(usage(format!("missing checkpoint {}", checkpoint.display())));
    }
    let model = DscNet::<f32>::load_checkpoint(checkpoint).map_err(setup_err)?;
    let image = synth::load_pgm_image::<f32>(image_path).map_err(setup_err)?;
    let (h, w) = (image.shape()[2], image.shape()[3]);
    let label_mask = label.map(|p| mask_from_pgm(p)).transpose()?;
    if let Some(m) = &label_mask {
        if m.h() != h || m.w() != w {
            return Err(usage(format!(
                "label is {}x{} but image is {}x{}",
                m.w(),
                m.h(),
                w,
                h
            )));
        }
    }
    std::fs::create_dir_all(out).map_err(|e| runtime(format!("create {}: {e}", out.display())))?;

    if let Some(spec) = point {
        let (x, y) = spec
            .split_once(',')
            .and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)))
            .ok_or_else(|| usage(format!("--point {spec:?}: expected x,y")))?;
        if x >= w || y >= h {
            return Err(usage(format!("point ({x}, {y}) outside {w}x{h} image")));
        }
        let traces = model.kernel_traces(&image, (x, y)).map_err(run_err)?;
        if traces.is_empty() {
            eprintln!("note: model has no serpentine branches; no traces written");
        }
        for (name, rows) in &traces {
            let file = out.join(format!("trace_{}.txt", name.replace('.', "_")));
            std::fs::write(&file, trace_to_text(rows))
                .map_err(|e| runtime(format!("write {}: {e}", file.display())))?;
            println!("trace {} -> {}", name, file.display());
        }
    }

    let prob = network::predict_prob(&model, &image).map_err(run_err)?;
    let bits = prob.iter().map(|&p| p >= metrics::PRED_THRESHOLD).collect();
    let pred = Mask::new(h, w, bits).map_err(run_err)?;

    let gray = overlay_gray(&pred, label_mask.as_ref());
    let overlay = synth::pgm_bytes(h, w, &gray).map_err(run_err)?;
    let overlay_path = out.join("overlay.pgm");
    std::fs::write(&overlay_path, overlay)
        .map_err(|e| runtime(format!("write {}: {e}", overlay_path.display())))?;
    println!("overlay -> {}", overlay_path.display());

    if diagrams {
        let pred_path = out.join("diagrams_pred.txt");
        dump_diagrams(&pred, &pred_path)?;
        println!("diagrams -> {}", pred_path.display());
        if let Some(m) = &label_mask {
            let label_path = out.join("diagrams_label.txt");
            dump_diagrams(m, &label_path)?;
            println!("diagrams -> {}", label_path.display());
        }
    }
    Ok(())
}
