use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use atc_core::codec::featio::{read_features, write_features, Dtype, FEATURE_MAGIC};
use atc_core::codec::format::{MODEL_MAGIC, STREAM_MAGIC};
use atc_core::codec::{decode_set, deserialize_model, encode_set, measure_rate, serialize_model, CodecModel, CoderMode, EncodedStream};
use atc_core::evalkit::{compare_adaptive, rd_sweep, Normalization};
use atc_core::gmm::{fit_em, fit_supervised, EmConfig, FeatureSet, GmmModel};
use atc_core::pca::{fit_global_pca, param_count, select_m, ParamVariant, PcaStage};
use atc_core::quantizer::{QuantizerBank, DEFAULT_LADDER};
use atc_core::rdtheory::{theta_grid, MixtureSpectrum};
use atc_core::synth::{generate, SynthConfig};
use serde_json::json;

use crate::manifest::{self, read_file, Recorder};
use crate::{
    Cli, CliError, CliResult, CoderArg, Command, CompareArgs, DecodeArgs, DtypeArg, EncodeArgs, FitOpts, NormArg, ReportFormat,
    SweepArgs, SynthArgs,
};

impl From<DtypeArg> for Dtype {
    fn from(d: DtypeArg) -> Self {
        match d {
            DtypeArg::F32 => Dtype::F32,
            DtypeArg::F64 => Dtype::F64,
        }
    }
}

impl From<CoderArg> for CoderMode {
    fn from(c: CoderArg) -> Self {
        match c {
            CoderArg::Ac => CoderMode::Arithmetic,
            CoderArg::Flc => CoderMode::Flc,
        }
    }
}

impl From<NormArg> for Normalization {
    fn from(n: NormArg) -> Self {
        match n {
            NormArg::Variance => Normalization::Variance,
            NormArg::SecondMoment => Normalization::SecondMoment,
        }
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("config serializes")
}

pub fn dispatch(cli: &Cli, argv: &[String]) -> CliResult<()> {
    let mut rec = Recorder::default();
    let (name, config, primary) = match &cli.command {
        Command::Synth(a) => ("synth", synth(a, &mut rec)?, a.out.clone()),
        Command::Fit(a) => ("fit", fit(&a.fit, None, &mut rec)?, a.fit.out.clone()),
        Command::PcaFit(a) => ("pca-fit", fit(&a.fit, Some(a.gamma), &mut rec)?, a.fit.out.clone()),
        Command::Encode(a) => ("encode", encode(a, &mut rec)?, a.out.clone()),
        Command::Decode(a) => ("decode", decode(a, &mut rec)?, a.out.clone()),
        Command::Sweep(a) => ("sweep", sweep(a, &mut rec)?, a.out.clone()),
        Command::Compare(a) => ("compare", compare(a, &mut rec)?, a.out.clone()),
        Command::Info(a) => return info(&a.path),
        Command::Replay(a) => return replay(&a.manifest),
    };
    if !cli.no_manifest {
        rec.finish(name, argv, json!({ "threads": cli.threads, "command": config }), &primary)?;
    }
    Ok(())
}

fn load_features(path: &Path, rec: &mut Recorder) -> CliResult<FeatureSet> {
    let bytes = read_file(path)?;
    rec.input(path, &bytes);
    Ok(read_features(&bytes)?.0)
}

fn load_model(path: &Path, rec: &mut Recorder) -> CliResult<CodecModel> {
    let bytes = read_file(path)?;
    rec.input(path, &bytes);
    Ok(deserialize_model(&bytes)?)
}

fn synth(a: &SynthArgs, rec: &mut Recorder) -> CliResult<serde_json::Value> {
    let cfg = SynthConfig {
        k: a.k,
        dim: a.dim,
        separation: a.separation,
        eig_max: a.eig_max,
        eig_min: a.eig_min,
        unequal_weights: a.unequal_weights,
        shared_basis: a.shared_basis,
        seed: a.seed,
    };
    let truth = generate(&cfg)?;
    let data = truth.sample(a.n, a.sample_seed.unwrap_or(a.seed));
    rec.output(&a.out, &write_features(&data, a.dtype.into()))?;
    println!("wrote {} vectors of dim {} from a {}-component mixture to {}", a.n, a.dim, a.k, a.out.display());
    Ok(json!({ "args": to_json(a), "generator": to_json(&cfg), "weights": truth.weights() }))
}

fn superclass_map(opts: &FitOpts, data: &FeatureSet) -> CliResult<BTreeMap<u32, u32>> {
    let Some(path) = &opts.superclass_map else {
        let labels = data.labels().ok_or_else(|| CliError::Usage("--supervised needs a labelled feature file".into()))?;
        return Ok(labels.iter().map(|&l| (l, l)).collect());
    };
    let bytes = read_file(path)?;
    let raw: BTreeMap<String, u32> =
        serde_json::from_slice(&bytes).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))?;
    raw.into_iter()
        .map(|(k, v)| {
            k.trim()
                .parse::<u32>()
                .map(|k| (k, v))
                .map_err(|_| CliError::Format(format!("{}: label key {k:?} is not an integer", path.display())))
        })
        .collect()
}

fn fit(opts: &FitOpts, gamma: Option<f64>, rec: &mut Recorder) -> CliResult<serde_json::Value> {
    let data = load_features(&opts.features, rec)?;
    let stage: Option<PcaStage> = match gamma {
        Some(g) => {
            let global = fit_global_pca(&data)?;
            let m = select_m(&global.eigen.values, g)?;
            Some(global.stage(m)?)
        }
        None => None,
    };
    let train = match &stage {
        Some(s) => s.reduce(&data)?,
        None => data,
    };
    let (gmm, trace): (GmmModel, Vec<f64>) = if opts.supervised {
        (fit_supervised(&train, &superclass_map(opts, &train)?, opts.reg)?, Vec::new())
    } else {
        let k = opts.k.expect("clap enforces --k without --supervised");
        let cfg = EmConfig { k, reg: opts.reg, seed: opts.seed, tol: opts.tol, max_iter: opts.max_iter };
        let (g, report) = fit_em(&train, &cfg)?;
        if opts.verbose {
            for (i, ll) in report.log_likelihood.iter().enumerate() {
                eprintln!("iter {i:4}  log-likelihood {ll:.6}");
            }
            eprintln!("{} iterations, converged: {}, reseeds: {}", report.iterations, report.converged, report.reinitializations);
        }
        (g, report.log_likelihood)
    };
    let ladder = opts.ladder.clone().unwrap_or_else(|| DEFAULT_LADDER.to_vec());
    let bank = QuantizerBank::design(&ladder)?;
    let thetas = match &opts.thetas {
        Some(t) => t.clone(),
        None => theta_grid(&MixtureSpectrum::from_model(&gmm), opts.theta_count, opts.max_bits),
    };
    let model = CodecModel::new(gmm, bank, &thetas, stage)?;
    rec.output(&opts.out, &serialize_model(&model))?;
    rec.model_id = Some(model.model_id_hex());
    let (n, m, k) = (model.input_dim() as u64, model.coded_dim() as u64, model.k() as u64);
    println!(
        "model {}: K={k}, N={n}, M={m}, {} quality points, written to {}",
        model.model_id_hex(),
        thetas.len(),
        opts.out.display()
    );
    let mut extra = json!({});
    if let Some(g) = gamma {
        let full = param_count(n, n, k, ParamVariant::Full);
        let reduced = param_count(n, m, k, ParamVariant::Pca);
        println!("M = {m} of {n} at gamma {g}; parameters full {full} vs pca {reduced}");
        extra = json!({ "m": m, "param_count_full": full, "param_count_pca": reduced });
    }
    Ok(json!({
        "args": to_json(opts),
        "gamma": gamma,
        "ladder": ladder,
        "thetas": thetas,
        "log_likelihood": trace,
        "pca": extra,
    }))
}

fn encode(a: &EncodeArgs, rec: &mut Recorder) -> CliResult<serde_json::Value> {
    let model = load_model(&a.model, rec)?;
    let data = load_features(&a.features, rec)?;
    let mode: CoderMode = a.coder.into();
    let stream = encode_set(&model, a.theta_index, &data, mode)?;
    let bytes = stream.to_bytes();
    rec.output(&a.out, &bytes)?;
    rec.model_id = Some(model.model_id_hex());
    let n = data.len();
    let payload = stream.payload_bytes();
    let mut flc_total = 0u64;
    for x in data.rows() {
        flc_total += model.flc_bits_for(a.theta_index, model.analyze(a.theta_index, x)?.component)?;
    }
    let rates = if n > 0 { Some(measure_rate(&model, a.theta_index, &data)?) } else { None };
    let summary = json!({
        "count": n,
        "theta_index": a.theta_index,
        "theta": model.map(a.theta_index)?.theta,
        "coder": a.coder,
        "stream_bytes": bytes.len(),
        "payload_bytes": payload,
        "payload_bits_per_vector": if n > 0 { 8.0 * payload as f64 / n as f64 } else { 0.0 },
        "model_rate_bits": rates.map(|r| r.model_bits),
        "actual_bits": rates.map(|r| r.actual_bits),
        "flc_bits": rates.map(|r| r.flc_bits),
        "flc_bits_total": flc_total,
    });
    println!("{summary}");
    Ok(json!({ "args": to_json(a), "summary": summary }))
}

fn decode(a: &DecodeArgs, rec: &mut Recorder) -> CliResult<serde_json::Value> {
    let model = load_model(&a.model, rec)?;
    let bytes = read_file(&a.stream)?;
    rec.input(&a.stream, &bytes);
    let stream = EncodedStream::from_bytes(&bytes)?;
    let data = decode_set(&model, &stream)?;
    rec.output(&a.out, &write_features(&data, a.dtype.into()))?;
    rec.model_id = Some(model.model_id_hex());
    println!("decoded {} vectors of dim {} to {}", data.len(), data.dim(), a.out.display());
    Ok(json!({ "args": to_json(a) }))
}

fn sweep(a: &SweepArgs, rec: &mut Recorder) -> CliResult<serde_json::Value> {
    let models = a.models.iter().map(|p| load_model(p, rec)).collect::<CliResult<Vec<_>>>()?;
    let data = load_features(&a.features, rec)?;
    let report = rd_sweep(&models, &data, a.thetas.as_deref(), a.normalization.into())?;
    let text = match a.format {
        ReportFormat::Csv => report.to_csv(),
        ReportFormat::Jsonl => report.to_jsonl(),
    };
    rec.output(&a.out, text.as_bytes())?;
    println!("{} rows from {} models written to {}", report.rows.len(), models.len(), a.out.display());
    let ids: Vec<String> = models.iter().map(CodecModel::model_id_hex).collect();
    Ok(json!({ "args": to_json(a), "model_ids": ids }))
}

fn compare(a: &CompareArgs, rec: &mut Recorder) -> CliResult<serde_json::Value> {
    let adaptive = load_model(&a.adaptive, rec)?;
    let baseline = load_model(&a.baseline, rec)?;
    let data = load_features(&a.features, rec)?;
    let (cmp, ra, rb) = compare_adaptive(&adaptive, &baseline, &data, a.normalization.into())?;
    let mut text = serde_json::to_string_pretty(&json!({ "comparison": cmp, "adaptive": ra, "baseline": rb }))
        .expect("report serializes");
    text.push('\n');
    rec.output(&a.out, text.as_bytes())?;
    let best = cmp.buckets.iter().map(|b| b.relative_gain).fold(f64::NEG_INFINITY, f64::max);
    println!(
        "win rate {:.3} over {} matched rates ({} / {} unmatched), best relative NMSE gain {:.3}",
        cmp.win_rate,
        cmp.buckets.len(),
        cmp.unmatched_first,
        cmp.unmatched_second,
        best
    );
    Ok(json!({ "args": to_json(a), "model_ids": [adaptive.model_id_hex(), baseline.model_id_hex()] }))
}

fn describe_model(m: &CodecModel) -> serde_json::Value {
    let maps: Vec<serde_json::Value> = m
        .maps()
        .iter()
        .map(|q| {
            let active: Vec<usize> = (0..m.k()).map(|c| q.active(c)).collect();
            json!({ "theta": q.theta, "active": active, "saturated": q.saturated })
        })
        .collect();
    json!({
        "kind": "model",
        "model_id": m.model_id_hex(),
        "k": m.k(),
        "input_dim": m.input_dim(),
        "coded_dim": m.coded_dim(),
        "weights": m.gmm().weights(),
        "ladder": m.bank().ladder(),
        "pca": m.pca().map(|p| json!({ "m": p.m(), "discarded_energy": p.discarded_energy() })),
        "quality_points": maps,
    })
}

fn info(path: &Path) -> CliResult<()> {
    let bytes = read_file(path)?;
    let magic = bytes.get(..4).unwrap_or(&[]);
    let v = if magic == MODEL_MAGIC {
        describe_model(&deserialize_model(&bytes)?)
    } else if magic == STREAM_MAGIC {
        let s = EncodedStream::from_bytes(&bytes)?;
        json!({
            "kind": "stream",
            "model_id": hex::encode(s.model_id),
            "theta_index": s.theta_index,
            "coder": match s.mode { CoderMode::Arithmetic => "ac", CoderMode::Flc => "flc" },
            "count": s.segments.len(),
            "payload_bytes": s.payload_bytes(),
        })
    } else if magic == FEATURE_MAGIC {
        let (f, dtype) = read_features(&bytes)?;
        json!({
            "kind": "features",
            "dim": f.dim(),
            "count": f.len(),
            "dtype": match dtype { Dtype::F32 => "f32", Dtype::F64 => "f64" },
            "labels": f.labels().is_some(),
        })
    } else {
        return Err(CliError::Format(format!("{}: unrecognised magic {:?}", path.display(), magic)));
    };
    println!("{}", serde_json::to_string_pretty(&v).expect("info serializes"));
    Ok(())
}

fn replay(path: &Path) -> CliResult<()> {
    let m = manifest::load(path)?;
    if m.command == "replay" {
        return Err(CliError::Usage("a manifest cannot replay another replay".into()));
    }
    let base: PathBuf = if m.cwd.is_dir() {
        m.cwd.clone()
    } else {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    };
    std::env::set_current_dir(&base).map_err(|e| CliError::Io(base.clone(), e))?;
    let changed = manifest::diff(&m.inputs, Path::new("."))?;
    if !changed.is_empty() {
        return Err(CliError::Replay(format!("inputs differ from the manifest: {}", changed.join(", "))));
    }
    crate::execute(m.argv.clone())?;
    let bad = manifest::diff(&m.outputs, Path::new("."))?;
    if !bad.is_empty() {
        return Err(CliError::Replay(bad.join(", ")));
    }
    println!("replayed {}: {} artifacts reproduced", m.command, m.outputs.len());
    Ok(())
}
