//! CSV exports: normalized CSI embeddings for external visualization and
//! the information-analysis table.

use crate::channel::ChannelMatrix;
use crate::error::{Error, Result};
use crate::info::{InfoEstimate, Points};
use std::io::{Read, Write};

/// Realified `H / ‖H‖_F`, antenna-major `(re, im)` pairs. A zero `H` maps to
/// zeros.
pub fn normalized_features(h: &ChannelMatrix) -> Vec<f64> {
    let norm = h.frobenius_sq().sqrt();
    let s = if norm > 0.0 { 1.0 / norm } else { 0.0 };
    h.to_real_vec().into_iter().map(|v| v * s).collect()
}

/// Normalized features of every sample as one point set.
pub fn normalized_points(samples: &[&ChannelMatrix]) -> Result<Points> {
    let dim = samples.first().map_or(1, |h| 2 * h.n_t() * h.n_c());
    let mut data = Vec::with_capacity(samples.len() * dim);
    for h in samples {
        if 2 * h.n_t() * h.n_c() != dim {
            return Err(Error::Dimension("samples have different shapes".into()));
        }
        data.extend(normalized_features(h));
    }
    Points::new(dim, data)
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Contract(format!("csv: {other:?}")),
    }
}

/// Writes one row per sample: `f0..f{2N_tN_c−1}` normalized features and the
/// wideband CQI label.
pub fn write_embeddings<W: Write>(out: W, samples: &[&ChannelMatrix], labels: &[u8]) -> Result<()> {
    if samples.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} samples with {} labels",
            samples.len(),
            labels.len()
        )));
    }
    let dim = samples.first().map_or(0, |h| 2 * h.n_t() * h.n_c());
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (0..dim).map(|i| format!("f{i}")).collect();
    header.push("cqi".into());
    w.write_record(&header).map_err(csv_err)?;
    for (h, k) in samples.iter().zip(labels) {
        let f = normalized_features(h);
        if f.len() != dim {
            return Err(Error::Dimension("samples have different shapes".into()));
        }
        let mut row: Vec<String> = f.iter().map(|v| format!("{v:.8e}")).collect();
        row.push(k.to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an embeddings CSV back into `(features, labels)`.
pub fn read_embeddings<R: Read>(input: R) -> Result<(Vec<Vec<f64>>, Vec<u8>)> {
    let mut r = csv::Reader::from_reader(input);
    let width = r.headers().map_err(csv_err)?.len();
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != width || width == 0 {
            return Err(Error::format("row", format!("expected {width} fields, found {}", rec.len())));
        }
        let parse = |s: &str| s.parse::<f64>().map_err(|e| Error::format("feature", e.to_string()));
        let f = rec.iter().take(width - 1).map(parse).collect::<Result<Vec<_>>>()?;
        let k = rec[width - 1]
            .parse::<u8>()
            .map_err(|e| Error::format("cqi", e.to_string()))?;
        feats.push(f);
        labels.push(k);
    }
    Ok((feats, labels))
}

/// One line of `analysis.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisRow {
    pub variable: String,
    pub estimate: InfoEstimate,
}

/// Writes `analysis.csv` (quantity, variable, k, N, nats, bits).
pub fn write_analysis<W: Write>(out: W, rows: &[AnalysisRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["quantity", "variable", "k", "N", "nats", "bits"])
        .map_err(csv_err)?;
    for r in rows {
        let e = &r.estimate;
        w.write_record([
            e.quantity.to_string(),
            r.variable.clone(),
            e.k.to_string(),
            e.n.to_string(),
            e.nats.to_string(),
            e.bits.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_samples, ScenarioConfig};
    use crate::exec::Execution;
    use crate::info::{knn_entropy, KnnConfig};

    fn samples() -> Vec<ChannelMatrix> {
        let cfg = ScenarioConfig {
            n_t: 4,
            n_v: 2,
            n_h: 2,
            n_c: 8,
            ..Default::default()
        };
        generate_samples(&cfg, 12, Execution::Sequential).unwrap()
    }

    #[test]
    fn features_have_unit_norm() {
        for h in samples() {
            let f = normalized_features(&h);
            assert_eq!(f.len(), 64);
            let n: f64 = f.iter().map(|v| v * v).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
        assert!(normalized_features(&ChannelMatrix::zeros(2, 2)).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn embeddings_round_trip() {
        let hs = samples();
        let refs: Vec<&ChannelMatrix> = hs.iter().collect();
        let labels: Vec<u8> = (0..hs.len() as u8).collect();
        let mut buf = Vec::new();
        write_embeddings(&mut buf, &refs, &labels).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let header = text.lines().next().unwrap();
        assert!(header.starts_with("f0,f1,"));
        assert!(header.ends_with(",f63,cqi"));
        assert_eq!(text.lines().count(), hs.len() + 1);

        let (feats, back) = read_embeddings(buf.as_slice()).unwrap();
        assert_eq!(back, labels);
        for (f, h) in feats.iter().zip(&hs) {
            for (a, b) in f.iter().zip(normalized_features(h)) {
                assert!((a - b).abs() <= 5e-9 * b.abs().max(1e-300));
            }
        }
        assert!(write_embeddings(Vec::new(), &refs, &labels[..1]).is_err());
    }

    #[test]
    fn analysis_layout() {
        let p = Points::scalar((0..100).map(|i| i as f64 * 0.37 % 1.0).collect()).unwrap();
        let e = knn_entropy(&p, &KnnConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_analysis(
            &mut buf,
            &[AnalysisRow {
                variable: "cqi_subband".into(),
                estimate: e,
            }],
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "quantity,variable,k,N,nats,bits");
        assert!(lines.next().unwrap().starts_with("entropy,cqi_subband,3,100,"));
    }
}
