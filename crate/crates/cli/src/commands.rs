//! Subcommand bodies. Every number written here comes from a library call;
//! this module only moves data between files and the library.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use encgan_core::datasets::{DatasetSource, LabeledDataset, TransformFamily, TransformKind};
use encgan_core::layers::BnMode;
use encgan_core::metrics::svg::{line_chart, Series};
use encgan_core::metrics::{alignment_report, score_pipeline};
use encgan_core::model::{
    encode as encode_sample, sample, sample_grid, style_transfer, BiasSelector, EncodeConfig, LatentPrior,
    MetricRecord, Samples, Trainer,
};
use encgan_core::persistio::image::{image_grid, is_image_shape};
use encgan_core::persistio::{decode_checkpoint, encode_checkpoint, ndjson_string, save_checkpoint, Checkpoint, RunConfig};
use encgan_core::rng::{stream_rng, Stream};
use encgan_core::verify::run_suite;
use encgan_core::{Error, Precision, Result, Scalar, Tensor};
use serde_json::{json, Value};

use crate::output::{read_input, OutDir, RunManifest};

const CHECKPOINT_FILE: &str = "model.ckpt";

fn sample_shape(ckpt: &Checkpoint<f64>) -> Vec<usize> {
    ckpt.metadata
        .get("sample_shape")
        .and_then(|v| serde_json::from_value(v.clone()).ok())
        .filter(|s: &Vec<usize>| s.iter().product::<usize>() == ckpt.generator.d_x())
        .unwrap_or_else(|| vec![ckpt.generator.d_x()])
}

fn load_model(path: &Path, inputs: &mut BTreeMap<String, String>) -> Result<Checkpoint<f64>> {
    let bytes = read_input(path, inputs)?;
    decode_checkpoint(&bytes)
}

fn read_samples(path: &Path, shape: &[usize], inputs: &mut BTreeMap<String, String>) -> Result<LabeledDataset<f64>> {
    let bytes = read_input(path, inputs)?;
    let ds = LabeledDataset::<f64>::read_ndjson(bytes.as_slice())?;
    with_shape(ds, shape)
}

/// Restores an image shape lost in flat NDJSON records.
fn with_shape(ds: LabeledDataset<f64>, shape: &[usize]) -> Result<LabeledDataset<f64>> {
    if ds.sample_shape == shape || shape.iter().product::<usize>() != ds.dim() {
        return Ok(ds);
    }
    LabeledDataset::new(ds.samples, shape.to_vec(), ds.labels, ds.num_manifolds)
}

/// Image grid of `rows × cols` cells; missing cells stay blank.
fn grid(values: &Tensor<f64>, shape: &[usize], rows: usize, cols: usize) -> Result<Vec<u8>> {
    let blank = vec![-1.0; values.cols()];
    let cells: Vec<&[f64]> = (0..rows * cols)
        .map(|k| if k < values.rows() { values.row(k) } else { blank.as_slice() })
        .collect();
    image_grid(&cells, shape, rows, cols)
}

fn image_ext(shape: &[usize]) -> &'static str {
    if shape.len() == 3 {
        "ppm"
    } else {
        "pgm"
    }
}

fn write_image_grid(out: &mut OutDir, stem: &str, values: &Tensor<f64>, shape: &[usize], rows: usize, cols: usize) -> Result<()> {
    if is_image_shape(shape) {
        let bytes = grid(values, shape, rows, cols)?;
        out.write(&format!("{stem}.{}", image_ext(shape)), &bytes)?;
    }
    Ok(())
}

fn with_index(index: usize, mut v: Value) -> Value {
    if let Value::Object(map) = &mut v {
        map.insert("index".into(), json!(index));
    }
    v
}

fn keep_record(rec: &MetricRecord, every: u64, last_epoch: u64) -> bool {
    rec.epoch.is_multiple_of(every) || rec.epoch == last_epoch
}

fn r_bias_chart(log: &[MetricRecord]) -> String {
    let layers = log.iter().map(|r| r.r_bias.len()).max().unwrap_or(0);
    let series: Vec<Series> = (0..layers)
        .map(|l| Series {
            name: format!("layer {l}"),
            points: log
                .iter()
                .filter_map(|r| r.r_bias.get(l).map(|&v| (r.epoch as f64, v)))
                .collect(),
        })
        .collect();
    line_chart("Bias alignment", "epoch", "log(trace(cov(U^T a)) + eps)", &series)
}

pub fn train(config_path: &Path, out_dir: &Path, env_seed: Option<u64>) -> Result<bool> {
    let mut inputs = BTreeMap::new();
    let text = read_input(config_path, &mut inputs)?;
    let text = String::from_utf8(text).map_err(|_| Error::Config(vec!["config is not UTF-8".into()]))?;
    let mut config = RunConfig::from_json(&text)?;
    if let Some(seed) = env_seed {
        config.train.seed = seed;
    }
    let base = config_path.parent().unwrap_or(Path::new("."));
    match &config.dataset {
        DatasetSource::Idx { images, labels, .. } => {
            read_input(&base.join(images), &mut inputs)?;
            read_input(&base.join(labels), &mut inputs)?;
        }
        DatasetSource::Ndjson { path } => {
            read_input(&base.join(path), &mut inputs)?;
        }
        DatasetSource::Segments(_) | DatasetSource::Arcs(_) => {}
    }
    let data = config.dataset.load(config.train.seed, base)?;
    let mut manifest = RunManifest::new("train", config.train.seed, serde_json::to_value(&config)?);
    manifest.label = config.label().map(String::from);
    manifest.inputs = inputs;
    let mut out = OutDir::create(out_dir, manifest)?;
    let outcome = match config.model.precision {
        Precision::F64 => train_typed::<f64>(&config, &data, &mut out),
        Precision::F32 => train_typed::<f32>(&config, &data, &mut out),
    };
    // The manifest is written even after an abort so the partial outputs stay traceable.
    out.finish()?;
    outcome.map(|()| true)
}

fn train_typed<T: Scalar>(config: &RunConfig, data: &LabeledDataset<f64>, out: &mut OutDir) -> Result<()> {
    let (gen, disc) = config.build_models::<T>(data.dim())?;
    let mut trainer = Trainer::new(gen, disc, config.train.clone())?;
    let samples: Tensor<T> = data.samples.cast();
    let mut log = Vec::new();
    let outcome = trainer.train(&samples, |rec, _| log.push(rec.clone()));

    let last = log.last().map_or(0, |r| r.epoch);
    let kept: Vec<&MetricRecord> = log
        .iter()
        .filter(|r| keep_record(r, config.metrics.every_epochs, last))
        .collect();
    out.write("metrics.ndjson", ndjson_string(&kept).as_bytes())?;
    if let Err(e) = outcome {
        if let Error::NumericAbort { step, quantity, snapshot } = &e {
            let snapshot: Value = serde_json::from_str(snapshot).unwrap_or_else(|_| json!(snapshot));
            let diag = json!({"step": step, "quantity": quantity, "snapshot": snapshot});
            out.write("abort.json", diag.to_string().as_bytes())?;
        }
        return Err(e);
    }
    if config.metrics.svg {
        out.write("alignment.svg", r_bias_chart(&log).as_bytes())?;
    }
    out.write(
        "alignment.ndjson",
        ndjson_string([alignment_report(&trainer.generator)]).as_bytes(),
    )?;
    let mut ckpt = Checkpoint::from_trainer(&trainer);
    ckpt.label = config.label().map(String::from);
    ckpt.metadata = json!({
        "sample_shape": data.sample_shape,
        "num_manifolds": data.num_manifolds,
        "config_hash": out.manifest.config_hash,
    });
    let path = out.path(CHECKPOINT_FILE);
    save_checkpoint(&ckpt, &path)?;
    out.record(CHECKPOINT_FILE, &encode_checkpoint(&ckpt)?);
    Ok(())
}

pub fn generate(checkpoint: &Path, n: usize, per_bias: bool, seed: u64, out_dir: &Path) -> Result<bool> {
    let mut inputs = BTreeMap::new();
    let ckpt = load_model(checkpoint, &mut inputs)?;
    let gen = &ckpt.generator;
    let mut rng = stream_rng(seed, Stream::Sampling, 0);
    let samples: Samples<f64> = if per_bias {
        sample_grid(gen, n, &mut rng)?
    } else {
        let prior = LatentPrior::new(gen.d_z())?;
        let selector = BiasSelector::new(gen.num_biases())?;
        sample(gen, &prior, &selector, n, BnMode::Eval, &mut rng)?
    };
    let mut manifest = RunManifest::new("generate", seed, json!({"n": n, "per_bias": per_bias, "seed": seed}));
    manifest.label = ckpt.label.clone();
    manifest.inputs = inputs;
    let mut out = OutDir::create(out_dir, manifest)?;
    out.write("samples.ndjson", ndjson_string(samples.records()).as_bytes())?;
    let (rows, cols) = if per_bias {
        (gen.num_biases(), n)
    } else {
        let cols = n.clamp(1, 10);
        (n.div_ceil(cols), cols)
    };
    write_image_grid(&mut out, "samples", &samples.x, &sample_shape(&ckpt), rows, cols)?;
    out.finish()?;
    Ok(true)
}

fn encode_config(mu: f64, seed: u64) -> EncodeConfig {
    EncodeConfig {
        mu,
        seed,
        ..Default::default()
    }
}

pub fn encode(checkpoint: &Path, input: &Path, mu: f64, seed: u64, out_dir: &Path) -> Result<bool> {
    let mut inputs = BTreeMap::new();
    let ckpt = load_model(checkpoint, &mut inputs)?;
    let data = read_samples(input, &sample_shape(&ckpt), &mut inputs)?;
    let config = encode_config(mu, seed);
    let mut lines = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let r = encode_sample(&ckpt.generator, &data.sample(i), &config).map_err(|e| e.at(i))?;
        lines.push(with_index(i, r.to_json()));
    }
    let mut manifest = RunManifest::new("encode", seed, serde_json::to_value(&config)?);
    manifest.label = ckpt.label.clone();
    manifest.inputs = inputs;
    let mut out = OutDir::create(out_dir, manifest)?;
    out.write("encode.ndjson", ndjson_string(&lines).as_bytes())?;
    out.finish()?;
    Ok(true)
}

pub fn transfer(checkpoint: &Path, input: &Path, target: &Path, mu: f64, seed: u64, out_dir: &Path) -> Result<bool> {
    let mut inputs = BTreeMap::new();
    let ckpt = load_model(checkpoint, &mut inputs)?;
    let shape = sample_shape(&ckpt);
    let sources = read_samples(input, &shape, &mut inputs)?;
    let targets = read_samples(target, &shape, &mut inputs)?;
    if targets.len() != 1 && targets.len() != sources.len() {
        return Err(Error::Config(vec![format!(
            "target: {} records, expected 1 or {} to match the input",
            targets.len(),
            sources.len()
        )]));
    }
    let config = encode_config(mu, seed);
    let mut lines = Vec::with_capacity(sources.len());
    let mut outputs = Vec::with_capacity(sources.len());
    for i in 0..sources.len() {
        let t = if targets.len() == 1 { 0 } else { i };
        let r = style_transfer(&ckpt.generator, &sources.sample(i), &targets.sample(t), &config).map_err(|e| e.at(i))?;
        lines.push(json!({
            "index": i,
            "output": r.output.to_f64_vec(),
            "source": r.source.to_json(),
            "target": r.target.to_json(),
        }));
        outputs.push(r.output.flatten());
    }
    let mut manifest = RunManifest::new("transfer", seed, serde_json::to_value(&config)?);
    manifest.label = ckpt.label.clone();
    manifest.inputs = inputs;
    let mut out = OutDir::create(out_dir, manifest)?;
    out.write("transfer.ndjson", ndjson_string(&lines).as_bytes())?;
    let cols = outputs.len().clamp(1, 10);
    write_image_grid(&mut out, "transfer", &Tensor::stack_rows(&outputs)?, &shape, outputs.len().div_ceil(cols), cols)?;
    out.finish()?;
    Ok(true)
}

#[allow(clippy::too_many_arguments)]
pub fn score(
    checkpoint: &Path,
    dataset: &Path,
    transform: TransformKind,
    levels: usize,
    images: usize,
    mu: f64,
    seed: u64,
    out_dir: &Path,
) -> Result<bool> {
    let mut inputs = BTreeMap::new();
    let ckpt = load_model(checkpoint, &mut inputs)?;
    let shape = sample_shape(&ckpt);
    let data = if dataset.extension().is_some_and(|e| e == "json") {
        let bytes = read_input(dataset, &mut inputs)?;
        let source: DatasetSource =
            serde_json::from_slice(&bytes).map_err(|e| Error::Config(vec![format!("dataset: {e}")]))?;
        with_shape(source.load(seed, dataset.parent().unwrap_or(Path::new(".")))?, &shape)?
    } else {
        read_samples(dataset, &shape, &mut inputs)?
    };
    let family = TransformFamily::standard(transform, levels)?;
    let config = encode_config(mu, seed);
    let run = score_pipeline(&ckpt.generator, &data, &family, images, &config)?;
    let settings = json!({"transform": transform, "levels": levels, "images": images, "encode": config});
    let mut manifest = RunManifest::new("score", seed, settings);
    manifest.label = ckpt.label.clone();
    manifest.inputs = inputs;
    let mut out = OutDir::create(out_dir, manifest)?;
    out.write("score.ndjson", ndjson_string([&run]).as_bytes())?;
    let spectrum = Series {
        name: "eigenvalue".into(),
        points: run
            .report
            .spectrum
            .iter()
            .enumerate()
            .map(|(k, &v)| ((k + 1) as f64, v))
            .collect(),
    };
    out.write(
        "spectrum.svg",
        line_chart("Latent PCA spectrum", "component", "eigenvalue", &[spectrum]).as_bytes(),
    )?;
    out.finish()?;
    Ok(true)
}

pub fn verify(trials: u64, seed: u64, out_dir: Option<&Path>) -> Result<bool> {
    let (records, summary) = run_suite(trials, seed)?;
    let mut report = ndjson_string(&records);
    report.push_str(&ndjson_string([json!({ "summary": summary })]));
    let manifest = RunManifest::new("verify", seed, json!({"trials": trials, "seed": seed}));
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    let io = |e| Error::io("<stdout>", e);
    match out_dir {
        Some(dir) => {
            let mut out = OutDir::create(dir, manifest)?;
            out.write("verify.ndjson", report.as_bytes())?;
            out.finish()?;
        }
        None => writeln!(lock, "{}", json!({ "manifest": manifest })).map_err(io)?,
    }
    lock.write_all(report.as_bytes()).map_err(io)?;
    Ok(summary.pass)
}
