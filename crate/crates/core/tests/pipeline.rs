//! End-to-end checks of design, coding, file formats and sweeps.

mod common;

use std::collections::BTreeMap;

use atc_core::codec::featio::{read_features, write_features, Dtype};
use atc_core::codec::{decode_set, deserialize_model, design, encode_set, serialize_model, CodecModel, CoderMode, EncodedStream};
use atc_core::entropycoder::flc_bits;
use atc_core::evalkit::{compare_curves, rd_sweep, Normalization, RdCurve, RdReport, CSV_COLUMNS};
use atc_core::gmm::{fit_supervised, EmConfig, FeatureSet, GmmModel};
use atc_core::linalg::{EigenPair, Matrix};
use atc_core::quantizer::QuantizerBank;
use atc_core::rdtheory::{mode_entropy_bits, theta_grid, MixtureSpectrum};
use atc_core::synth::{generate, SynthConfig};
use atc_core::AtcError;

const LADDER: [usize; 10] = [1, 2, 3, 4, 6, 8, 12, 16, 32, 64];

fn source() -> GmmModel {
    generate(&SynthConfig { k: 3, dim: 8, separation: 4.0, eig_min: 0.01, unequal_weights: true, seed: 17, ..Default::default() })
        .unwrap()
}

fn designed(train: &FeatureSet, k: usize) -> CodecModel {
    let (m, _) = design(train, &EmConfig::new(k), &LADDER, &[1.0]).unwrap();
    let thetas = theta_grid(&m.spectrum(), 7, 4.0);
    CodecModel::new(m.gmm().clone(), m.bank().clone(), &thetas, None).unwrap()
}

#[test]
fn model_and_stream_survive_serialization() {
    let truth = source();
    let model = designed(&truth.sample(3000, 1), 3);
    let data = truth.sample(10_000, 2);
    let loaded = deserialize_model(&serialize_model(&model)).unwrap();
    assert_eq!(loaded.model_id(), model.model_id());
    assert_eq!(serialize_model(&loaded), serialize_model(&model));
    for mode in [CoderMode::Arithmetic, CoderMode::Flc] {
        let stream = encode_set(&model, 3, &data, mode).unwrap();
        let bytes = stream.to_bytes();
        let parsed = EncodedStream::from_bytes(&bytes).unwrap();
        assert_eq!(parsed, stream);
        let a = decode_set(&loaded, &parsed).unwrap();
        let b = decode_set(&model, &stream).unwrap();
        assert_eq!(a.len(), data.len());
        assert_eq!(a.dim(), data.dim());
        assert_eq!(a.as_slice(), b.as_slice());
        assert_eq!(encode_set(&loaded, 3, &data, mode).unwrap().to_bytes(), bytes);
    }
}

#[test]
fn design_is_deterministic() {
    let train = source().sample(2000, 3);
    assert_eq!(designed(&train, 3).model_id(), designed(&train, 3).model_id());
}

#[test]
fn empty_set_gives_header_only_stream() {
    let model = designed(&source().sample(1500, 4), 2);
    let empty = FeatureSet::empty(8).unwrap();
    let stream = encode_set(&model, 0, &empty, CoderMode::Arithmetic).unwrap();
    assert_eq!(stream.to_bytes().len(), EncodedStream::HEADER_BYTES);
    assert!(decode_set(&model, &stream).unwrap().is_empty());
}

#[test]
fn wrong_model_is_rejected() {
    let truth = source();
    let a = designed(&truth.sample(1500, 5), 2);
    let b = designed(&truth.sample(1500, 6), 2);
    let stream = encode_set(&a, 1, &truth.sample(10, 7), CoderMode::Arithmetic).unwrap();
    assert!(matches!(decode_set(&b, &stream), Err(AtcError::ModelMismatch { .. })));
}

#[test]
fn flc_segments_match_analytic_size() {
    let truth = source();
    let model = designed(&truth.sample(1500, 8), 3);
    let data = truth.sample(200, 9);
    for t in 0..model.maps().len() {
        let stream = encode_set(&model, t, &data, CoderMode::Flc).unwrap();
        for (x, seg) in data.rows().zip(&stream.segments) {
            let c = model.analyze(t, x).unwrap().component;
            let bits = flc_bits(model.maps()[t].row(c), model.k());
            assert_eq!(seg.len() as u64, bits.div_ceil(8));
            assert_eq!(model.flc_bits_for(t, c).unwrap(), bits);
        }
    }
}

#[test]
fn sweep_columns_behave() {
    let truth = source();
    let model = designed(&truth.sample(4000, 10), 3);
    let test = truth.sample(2000, 11);
    let report = rd_sweep(std::slice::from_ref(&model), &test, None, Normalization::Variance).unwrap();
    let h = mode_entropy_bits(&model.gmm().weights());
    for w in report.rows.windows(2) {
        assert!(w[0].theta < w[1].theta);
        assert!(w[0].nmse <= w[1].nmse, "NMSE must not improve as θ grows");
        assert!(w[0].model_rate_bits >= w[1].model_rate_bits);
        assert!(w[0].theory_conditional_rate >= w[1].theory_conditional_rate);
    }
    for r in &report.rows {
        assert!((r.theory_genie_rate - r.theory_conditional_rate - h).abs() < 1e-12);
        assert!((r.mse_per_vector - r.reduced_mse).abs() <= 1e-9 * r.mse_per_vector.max(1e-300));
    }
    let csv = report.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
    assert_eq!(lines.count(), report.rows.len());
    for line in report.to_jsonl().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.get("nmse").is_some() && v.get("theta").is_some());
    }
    let back: RdReport = serde_json::from_str(&serde_json::to_string(&report).unwrap()).unwrap();
    assert_eq!(back, report);
}

#[test]
fn zero_rate_reconstructs_selected_mean() {
    let truth = source();
    let model = designed(&truth.sample(3000, 12), 3).with_theta(1e6).unwrap();
    let t = model.maps().len() - 1;
    assert!(model.maps()[t].levels.iter().flatten().all(|&l| l == 1));
    let test = truth.sample(500, 13);
    let decoded = decode_set(&model, &encode_set(&model, t, &test, CoderMode::Arithmetic).unwrap()).unwrap();
    let g = model.gmm();
    let mean = test.mean();
    let (mut num, mut den) = (0.0, 0.0);
    for (x, xh) in test.rows().zip(decoded.rows()) {
        let mu = &g.component(g.map_component(x)).mean;
        assert_eq!(xh, mu.as_slice());
        num += x.iter().zip(mu).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        den += x.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    let report = rd_sweep(std::slice::from_ref(&model), &test, None, Normalization::Variance).unwrap();
    let last = report.rows.last().unwrap();
    assert!((last.nmse - num / den).abs() <= 1e-12 * (num / den));
    assert!((last.model_rate_bits - mode_entropy_bits(&g.weights())).abs() < 0.2);
}

#[test]
fn single_component_zero_rate_costs_nothing() {
    let g = GmmModel::from_eigen(&[1.0], vec![vec![1.0, -2.0]], vec![EigenPair { values: vec![3.0, 1.0], vectors: Matrix::identity(2) }], 1e-9)
        .unwrap();
    let model = CodecModel::new(g, QuantizerBank::design(&LADDER).unwrap(), &[5.0], None).unwrap();
    let x = [0.3, 0.7];
    let code = model.analyze(0, &x).unwrap();
    assert_eq!(code.model_bits, 0.0);
    let seg = model.encode_vector(0, &x, CoderMode::Arithmetic).unwrap();
    assert_eq!(seg.len(), 4);
    assert_eq!(model.decode_vector(0, &seg, CoderMode::Arithmetic).unwrap(), vec![1.0, -2.0]);
    assert!(model.encode_vector(0, &x, CoderMode::Flc).unwrap().is_empty());
}

#[test]
fn coding_the_mean_follows_tie_rule() {
    let rot = std::f64::consts::FRAC_1_SQRT_2;
    let v = Matrix::from_row_major(3, 3, vec![rot, -rot, 0.0, rot, rot, 0.0, 0.0, 0.0, 1.0]).unwrap();
    let g = GmmModel::from_eigen(&[1.0], vec![vec![2.0, 1.0, -1.0]], vec![EigenPair { values: vec![50.0, 6.0, 0.4], vectors: v.clone() }], 1e-9)
        .unwrap();
    let model = CodecModel::new(g, QuantizerBank::design(&LADDER).unwrap(), &[0.05, 0.5, 2.0], None).unwrap();
    let mu = [2.0, 1.0, -1.0];
    let mut saw_even = false;
    for t in 0..3 {
        let levels = model.maps()[t].row(0).to_vec();
        let zhat: Vec<f64> = levels
            .iter()
            .map(|&l| {
                let q = model.bank().quantizer(l as usize).unwrap();
                if l % 2 == 1 {
                    0.0
                } else {
                    saw_even = true;
                    q.centroids()[l as usize / 2 - 1]
                }
            })
            .collect();
        let lambdas = [50.0f64, 6.0, 0.4];
        let expect: Vec<f64> =
            (0..3).map(|r| mu[r] + (0..3).map(|k| v.get(r, k) * zhat[k] * lambdas[k].sqrt()).sum::<f64>()).collect();
        let seg = model.encode_vector(t, &mu, CoderMode::Arithmetic).unwrap();
        let got = model.decode_vector(t, &seg, CoderMode::Arithmetic).unwrap();
        for (a, b) in got.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12, "θ index {t}: {got:?} vs {expect:?}");
        }
    }
    assert!(saw_even);
}

#[test]
fn sampled_labels_follow_weights() {
    let g = generate(&SynthConfig { k: 5, dim: 3, unequal_weights: true, seed: 23, ..Default::default() }).unwrap();
    let n = 50_000;
    let data = g.sample(n, 24);
    let mut counts = [0usize; 5];
    data.labels().unwrap().iter().for_each(|&l| counts[l as usize] += 1);
    let chi2: f64 = g
        .weights()
        .iter()
        .zip(&counts)
        .map(|(w, &c)| {
            let e = w * n as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    // 4 degrees of freedom; 23.5 is the 0.9999 quantile.
    assert!(chi2 < 23.5, "chi2 {chi2}, counts {counts:?}");
}

#[test]
fn supervised_fit_recovers_generator() {
    let g = generate(&SynthConfig { k: 3, dim: 4, separation: 3.0, eig_min: 0.1, unequal_weights: true, seed: 29, ..Default::default() }).unwrap();
    let n = 60_000;
    let data = g.sample(n, 30);
    let map: BTreeMap<u32, u32> = (0..3).map(|c| (c, c)).collect();
    let fit = fit_supervised(&data, &map, 1e-9).unwrap();
    for c in 0..3 {
        let (a, b) = (g.component(c), fit.component(c));
        assert!((a.weight - b.weight).abs() < 5.0 * (a.weight * (1.0 - a.weight) / n as f64).sqrt());
        let nc = a.weight * n as f64;
        let se = (a.eigenvalues()[0] / nc).sqrt();
        for (x, y) in a.mean.iter().zip(&b.mean) {
            assert!((x - y).abs() < 5.0 * se);
        }
        let (ca, cb) = (a.covariance(), b.covariance());
        for r in 0..4 {
            for s in 0..4 {
                let tol = 5.0 * a.eigenvalues()[0] * (2.0 / nc).sqrt();
                assert!((ca.get(r, s) - cb.get(r, s)).abs() < tol);
            }
        }
    }
}

#[test]
fn comparison_is_antisymmetric() {
    let truth = source();
    let train = truth.sample(3000, 31);
    let test = truth.sample(1000, 32);
    let adaptive = designed(&train, 3);
    let thetas = adaptive.thetas();
    let (single, _) = design(&train, &EmConfig::new(1), &LADDER, &thetas).unwrap();
    let curve = |m: &CodecModel| {
        let r = rd_sweep(std::slice::from_ref(m), &test, None, Normalization::Variance).unwrap();
        RdCurve::from_rows(&r.rows.iter().collect::<Vec<_>>()).unwrap()
    };
    let (ca, cb) = (curve(&adaptive), curve(&single));
    let ab = compare_curves(&ca, &cb);
    let ba = compare_curves(&cb, &ca);
    assert_eq!(ab.buckets.len(), ba.buckets.len());
    for (x, y) in ab.buckets.iter().zip(&ba.buckets) {
        assert_eq!(x.rate_bits, y.rate_bits);
        assert_eq!(x.delta_nmse, -y.delta_nmse);
        assert_eq!(x.delta_cosine, -y.delta_cosine);
    }
    let same = compare_curves(&cb, &cb);
    assert!(same.buckets.iter().all(|b| b.delta_nmse == 0.0 && b.delta_cosine == 0.0));
}

/// Byte layout an external producer writes (little-endian header, row-major
/// payload, optional trailing labels), assembled by hand.
fn producer_bytes(dim: u32, rows: &[Vec<f32>], labels: Option<&[u32]>) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(b"ATCF");
    b.extend_from_slice(&1u16.to_le_bytes());
    b.extend_from_slice(&dim.to_le_bytes());
    b.extend_from_slice(&(rows.len() as u64).to_le_bytes());
    b.push(0);
    b.push(labels.is_some() as u8);
    for v in rows.iter().flatten() {
        b.extend_from_slice(&v.to_le_bytes());
    }
    for l in labels.into_iter().flatten() {
        b.extend_from_slice(&l.to_le_bytes());
    }
    b
}

#[test]
fn externally_produced_features_load() {
    let rows = vec![vec![0.5f32, -1.25, 3.0], vec![1e-3, 7.5, -0.0]];
    let bytes = producer_bytes(3, &rows, Some(&[1, 0]));
    let (set, dtype) = read_features(&bytes).unwrap();
    assert_eq!(dtype, Dtype::F32);
    assert_eq!(set.len(), 2);
    assert_eq!(set.labels(), Some(&[1u32, 0][..]));
    assert_eq!(set.row(1), &[1e-3f32 as f64, 7.5, 0.0]);
    assert_eq!(write_features(&set, Dtype::F32), bytes);

    let (empty, _) = read_features(&producer_bytes(16, &[], None)).unwrap();
    assert!(empty.is_empty() && empty.dim() == 16 && empty.labels().is_none());

    assert!(read_features(&bytes[..bytes.len() - 1]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(read_features(&bad), Err(AtcError::Format(_))));
    let mut future = bytes.clone();
    future[4] = 9;
    assert!(matches!(read_features(&future), Err(AtcError::UnsupportedVersion { .. })));
    let mut extra = bytes;
    extra.push(0);
    assert!(read_features(&extra).is_err());
}

#[test]
fn synthetic_pipeline_through_files() {
    let truth = source();
    let dir = std::env::temp_dir().join(format!("atc-pipeline-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("train.atcf");
    atc_core::codec::featio::save_features(&path, &truth.sample(2000, 40), Dtype::F32).unwrap();
    let train = atc_core::codec::featio::load_features(&path).unwrap();
    assert_eq!(train.labels().unwrap().len(), 2000);
    let model = designed(&train, 3);
    let spec = MixtureSpectrum::from_model(model.gmm());
    assert_eq!(model.spectrum(), spec);
    std::fs::remove_dir_all(&dir).unwrap();
}
