//! Entropy-measurement experiment driver: feed token documents through the
//! toy model, aggregate per-layer attention entropy at chosen query
//! positions, and emit plot-ready reports.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::attention::TraceMode;
use crate::model::{forward, ModelError, ModelSpec, ModelWeights};
use crate::rope::RopeConfig;
use crate::scaling::ScalingPolicy;
use crate::Real;

#[derive(Debug, Error)]
pub enum ProfilerError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("no valid documents in {0}")]
    NoValidDocuments(String),
    #[error("no document is long enough for position {0}")]
    NoDocumentLongEnough(usize),
    #[error("positions must be sorted ascending")]
    PositionsUnsorted,
    #[error("position {position} exceeds model max {max}")]
    PositionOutOfRange { position: usize, max: usize },
    #[error("duplicate configuration label {0:?}")]
    DuplicateLabel(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Token-id documents, one per input line.
#[derive(Debug, Clone)]
pub struct DocumentSet {
    pub docs: Vec<Vec<usize>>,
    pub source_path: String,
    /// One message per skipped malformed line, with its line number.
    pub warnings: Vec<String>,
}

/// Load up to `limit` documents from a file of space-separated decimal token
/// ids, one document per line. Malformed lines are skipped with a warning.
pub fn load_documents(path: &Path, limit: usize) -> Result<DocumentSet, ProfilerError> {
    let reader = BufReader::new(File::open(path)?);
    let mut docs = Vec::new();
    let mut warnings = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        if docs.len() >= limit {
            break;
        }
        let line = line?;
        let line_no = idx + 1;
        if line.trim().is_empty() {
            warnings.push(format!("line {line_no}: empty, skipped"));
            continue;
        }
        let parsed: Result<Vec<usize>, _> =
            line.split_whitespace().map(|tok| tok.parse()).collect();
        match parsed {
            Ok(ids) => docs.push(ids),
            Err(e) => warnings.push(format!("line {line_no}: {e}, skipped")),
        }
    }
    if docs.is_empty() {
        return Err(ProfilerError::NoValidDocuments(path.display().to_string()));
    }
    Ok(DocumentSet {
        docs,
        source_path: path.display().to_string(),
        warnings,
    })
}

/// Default position grid: powers of two minus one, up to `max` exclusive.
pub fn default_positions(max: usize) -> Vec<usize> {
    (4..)
        .map(|k| (1usize << k) - 1)
        .take_while(|&p| p < max)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyRow<T: Real> {
    pub layer: usize,
    pub position: usize,
    pub mean_entropy: T,
    pub std_entropy: T,
    pub uniform_baseline: T,
    pub n_docs: usize,
}

/// Per-document entropy sample, emitted in verbose mode.
#[derive(Debug, Clone, PartialEq)]
pub struct DocEntropyRow<T: Real> {
    pub doc: usize,
    pub layer: usize,
    pub position: usize,
    pub entropy: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyReport<T: Real> {
    pub label: String,
    pub rows: Vec<EntropyRow<T>>,
    pub per_document: Option<Vec<DocEntropyRow<T>>>,
}

impl<T: Real> EntropyReport<T> {
    /// Report CSV: `label,layer,position,mean_entropy,std_entropy,uniform_baseline,n_docs`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(
            out,
            "label,layer,position,mean_entropy,std_entropy,uniform_baseline,n_docs"
        )?;
        for row in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                self.label,
                row.layer,
                row.position,
                row.mean_entropy,
                row.std_entropy,
                row.uniform_baseline,
                row.n_docs
            )?;
        }
        Ok(())
    }

    /// Verbose per-document CSV: `label,doc,layer,position,entropy`.
    pub fn write_verbose_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "label,doc,layer,position,entropy")?;
        if let Some(rows) = &self.per_document {
            for row in rows {
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    self.label, row.doc, row.layer, row.position, row.entropy
                )?;
            }
        }
        Ok(())
    }
}

fn check_positions(positions: &[usize], max: usize) -> Result<(), ProfilerError> {
    if positions.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ProfilerError::PositionsUnsorted);
    }
    if let Some(&p) = positions.iter().find(|&&p| p >= max) {
        return Err(ProfilerError::PositionOutOfRange { position: p, max });
    }
    Ok(())
}

/// Run the entropy experiment for one configuration.
///
/// For every document long enough to contain a query position, the per-layer
/// entropy at that position is the mean over heads of the per-head row
/// entropies. Means and standard deviations are taken across documents;
/// documents too short for a position simply do not contribute to it.
pub fn profile<T: Real>(
    spec: &ModelSpec,
    weights: &ModelWeights<T>,
    rope_config: &RopeConfig<T>,
    policy: &ScalingPolicy<T>,
    docs: &DocumentSet,
    positions: &[usize],
    label: &str,
    verbose: bool,
) -> Result<EntropyReport<T>, ProfilerError> {
    check_positions(positions, spec.max_positions)?;
    let largest = *positions.last().ok_or(ProfilerError::PositionsUnsorted)?;
    if !docs.docs.iter().any(|d| d.len() > largest) {
        return Err(ProfilerError::NoDocumentLongEnough(largest));
    }

    // Causality makes the entropy at position p a function of the prefix
    // 0..=p, so each document can be truncated to the largest position.
    let needed = largest + 1;

    // Per-document results are computed in parallel but aggregated in
    // document order so the output is independent of scheduling.
    let per_doc: Vec<Option<Vec<Vec<T>>>> = docs
        .docs
        .par_iter()
        .map(|doc| -> Result<Option<Vec<Vec<T>>>, ProfilerError> {
            let len = doc.len().min(needed);
            let usable: Vec<usize> = positions.iter().copied().filter(|&p| p < len).collect();
            if usable.is_empty() {
                return Ok(None);
            }
            let (_, traces) = forward(
                spec,
                weights,
                &doc[..len],
                rope_config,
                policy,
                TraceMode::EntropyOnly,
            )?;
            // [layer][position slot] head-averaged entropy; NaN marks slots
            // the document is too short for.
            let n_heads = T::from_usize_lossy(spec.n_heads);
            let rows = traces
                .iter()
                .map(|heads| {
                    positions
                        .iter()
                        .map(|&p| {
                            if p < len {
                                heads.iter().map(|h| h.entropy[p]).sum::<T>() / n_heads
                            } else {
                                T::nan()
                            }
                        })
                        .collect()
                })
                .collect();
            Ok(Some(rows))
        })
        .collect::<Result<_, _>>()?;

    let mut rows = Vec::new();
    let mut per_document = verbose.then(Vec::new);
    for layer in 0..spec.n_layers {
        for (slot, &position) in positions.iter().enumerate() {
            let mut sum = T::zero();
            let mut sum_sq = T::zero();
            let mut n_docs = 0usize;
            for (doc_idx, doc_rows) in per_doc.iter().enumerate() {
                let Some(doc_rows) = doc_rows else { continue };
                let h = doc_rows[layer][slot];
                if h.is_nan() {
                    continue;
                }
                sum += h;
                sum_sq += h * h;
                n_docs += 1;
                if let Some(dump) = per_document.as_mut() {
                    dump.push(DocEntropyRow {
                        doc: doc_idx,
                        layer,
                        position,
                        entropy: h,
                    });
                }
            }
            if n_docs == 0 {
                continue;
            }
            let count = T::from_usize_lossy(n_docs);
            let mean = sum / count;
            let variance = (sum_sq / count - mean * mean).max(T::zero());
            rows.push(EntropyRow {
                layer,
                position,
                mean_entropy: mean,
                std_entropy: variance.sqrt(),
                uniform_baseline: T::from_usize_lossy(position + 1).ln(),
                n_docs,
            });
        }
    }
    Ok(EntropyReport {
        label: label.to_string(),
        rows,
        per_document,
    })
}

/// Run `profile` once per labeled configuration on identical inputs.
pub fn compare_methods<T: Real>(
    spec: &ModelSpec,
    weights: &ModelWeights<T>,
    configs: &[(String, RopeConfig<T>, ScalingPolicy<T>)],
    docs: &DocumentSet,
    positions: &[usize],
    verbose: bool,
) -> Result<Vec<EntropyReport<T>>, ProfilerError> {
    for (i, (label, _, _)) in configs.iter().enumerate() {
        if configs[..i].iter().any(|(other, _, _)| other == label) {
            return Err(ProfilerError::DuplicateLabel(label.clone()));
        }
    }
    configs
        .iter()
        .map(|(label, rope_config, policy)| {
            profile(spec, weights, rope_config, policy, docs, positions, label, verbose)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_weights;
    use crate::rope::{RopeConfig, RopeMethod};
    fn small_spec() -> ModelSpec {
        ModelSpec {
            n_layers: 2,
            n_heads: 2,
            d_head: 4,
            vocab_size: 64,
            max_positions: 128,
            seed: 11,
            init_range: 0.02,
        }
    }

    fn doc_set(lengths: &[usize]) -> DocumentSet {
        DocumentSet {
            docs: lengths
                .iter()
                .enumerate()
                .map(|(i, &len)| (0..len).map(|j| (i * 17 + j * 5) % 64).collect())
                .collect(),
            source_path: "<test>".into(),
            warnings: Vec::new(),
        }
    }

    #[test]
    fn load_documents_parses_and_warns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("docs.txt");
        let mut f = File::create(&path).unwrap();
        writeln!(f, "5 17 9").unwrap();
        writeln!(f).unwrap();
        writeln!(f, "1 2 oops").unwrap();
        writeln!(f, "3 4").unwrap();
        drop(f);
        let set = load_documents(&path, 10).unwrap();
        assert_eq!(set.docs, vec![vec![5, 17, 9], vec![3, 4]]);
        assert_eq!(set.warnings.len(), 2);
        assert!(set.warnings[0].starts_with("line 2:"));

        let limited = load_documents(&path, 1).unwrap();
        assert_eq!(limited.docs.len(), 1);
    }

    #[test]
    fn load_documents_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_documents(&dir.path().join("missing.txt"), 5),
            Err(ProfilerError::Io(_))
        ));
        let path = dir.path().join("empty.txt");
        std::fs::write(&path, "\nnot numbers\n").unwrap();
        assert!(matches!(
            load_documents(&path, 5),
            Err(ProfilerError::NoValidDocuments(_))
        ));
    }

    #[test]
    fn default_position_grid() {
        assert_eq!(default_positions(128), vec![15, 31, 63, 127]);
        assert_eq!(default_positions(128)[..3], [15, 31, 63]);
    }

    #[test]
    fn zero_q_profile_hits_uniform_baseline() {
        let spec = small_spec();
        let mut weights = init_weights::<f64>(&spec).unwrap();
        weights.zero_query_projections();
        let rope = RopeConfig::new(RopeMethod::Rope, spec.d_head, 128, 128);
        let docs = doc_set(&[64, 64, 64]);
        let report = profile(
            &spec,
            &weights,
            &rope,
            &ScalingPolicy::None,
            &docs,
            &[15, 31, 63],
            "zero-q",
            false,
        )
        .unwrap();
        assert_eq!(report.rows.len(), 2 * 3);
        for row in &report.rows {
            assert!((row.mean_entropy - row.uniform_baseline).abs() < 1e-6);
            assert!(row.std_entropy < 1e-9);
            assert_eq!(row.n_docs, 3);
        }
    }

    #[test]
    fn position_zero_has_zero_entropy() {
        let spec = small_spec();
        let weights = init_weights::<f64>(&spec).unwrap();
        let rope = RopeConfig::new(RopeMethod::Rope, spec.d_head, 128, 128);
        let docs = doc_set(&[8]);
        let report = profile(
            &spec,
            &weights,
            &rope,
            &ScalingPolicy::None,
            &docs,
            &[0],
            "p0",
            false,
        )
        .unwrap();
        for row in &report.rows {
            assert_eq!(row.mean_entropy, 0.0);
            assert_eq!(row.uniform_baseline, 0.0);
        }
    }

    #[test]
    fn short_documents_do_not_contribute() {
        let spec = small_spec();
        let weights = init_weights::<f64>(&spec).unwrap();
        let rope = RopeConfig::new(RopeMethod::Rope, spec.d_head, 128, 128);
        let docs = doc_set(&[20, 40]);
        let report = profile(
            &spec,
            &weights,
            &rope,
            &ScalingPolicy::None,
            &docs,
            &[15, 31],
            "mixed",
            true,
        )
        .unwrap();
        for row in &report.rows {
            match row.position {
                15 => assert_eq!(row.n_docs, 2),
                31 => assert_eq!(row.n_docs, 1),
                _ => unreachable!(),
            }
        }
        // verbose dump reproduces the aggregates
        let dump = report.per_document.as_ref().unwrap();
        for row in &report.rows {
            let samples: Vec<f64> = dump
                .iter()
                .filter(|d| d.layer == row.layer && d.position == row.position)
                .map(|d| d.entropy)
                .collect();
            assert_eq!(samples.len(), row.n_docs);
            let mean = samples.iter().sum::<f64>() / samples.len() as f64;
            assert!((mean - row.mean_entropy).abs() < 1e-12);
        }
    }

    #[test]
    fn errors_on_unreachable_position() {
        let spec = small_spec();
        let weights = init_weights::<f64>(&spec).unwrap();
        let rope = RopeConfig::new(RopeMethod::Rope, spec.d_head, 128, 128);
        let docs = doc_set(&[10]);
        assert!(matches!(
            profile(
                &spec,
                &weights,
                &rope,
                &ScalingPolicy::None,
                &docs,
                &[63],
                "x",
                false
            ),
            Err(ProfilerError::NoDocumentLongEnough(63))
        ));
        assert!(matches!(
            profile(
                &spec,
                &weights,
                &rope,
                &ScalingPolicy::None,
                &docs,
                &[31, 15],
                "x",
                false
            ),
            Err(ProfilerError::PositionsUnsorted)
        ));
        assert!(matches!(
            profile(
                &spec,
                &weights,
                &rope,
                &ScalingPolicy::None,
                &docs,
                &[500],
                "x",
                false
            ),
            Err(ProfilerError::PositionOutOfRange { position: 500, .. })
        ));
    }

    #[test]
    fn compare_rejects_duplicate_labels() {
        let spec = small_spec();
        let weights = init_weights::<f64>(&spec).unwrap();
        let rope = RopeConfig::new(RopeMethod::Rope, spec.d_head, 128, 128);
        let docs = doc_set(&[32]);
        let configs = vec![
            ("a".to_string(), rope.clone(), ScalingPolicy::None),
            ("a".to_string(), rope, ScalingPolicy::None),
        ];
        assert!(matches!(
            compare_methods(&spec, &weights, &configs, &docs, &[15], false),
            Err(ProfilerError::DuplicateLabel(_))
        ));
    }

    #[test]
    fn stronger_constant_scale_never_raises_entropy() {
        let spec = small_spec();
        let weights = init_weights::<f64>(&spec).unwrap();
        let rope = RopeConfig::new(RopeMethod::Rope, spec.d_head, 128, 128);
        let docs = doc_set(&[48, 48]);
        let configs = vec![
            ("t1".to_string(), rope.clone(), ScalingPolicy::Constant(1.0)),
            ("t4".to_string(), rope, ScalingPolicy::Constant(4.0)),
        ];
        let reports =
            compare_methods(&spec, &weights, &configs, &docs, &[15, 31], false).unwrap();
        for (a, b) in reports[0].rows.iter().zip(reports[1].rows.iter()) {
            assert!(b.mean_entropy <= a.mean_entropy + 1e-12);
        }
    }

    #[test]
    fn head_aggregation_is_mean_of_per_head_entropies() {
        let spec = small_spec();
        let weights = init_weights::<f64>(&spec).unwrap();
        let rope = RopeConfig::new(RopeMethod::Rope, spec.d_head, 128, 128);
        let docs = doc_set(&[24]);
        let report = profile(
            &spec,
            &weights,
            &rope,
            &ScalingPolicy::None,
            &docs,
            &[15],
            "heads",
            false,
        )
        .unwrap();
        let (_, traces) = crate::model::forward(
            &spec,
            &weights,
            &docs.docs[0][..16],
            &rope,
            &ScalingPolicy::None,
            TraceMode::EntropyOnly,
        )
        .unwrap();
        for row in &report.rows {
            let heads = &traces[row.layer];
            let manual =
                heads.iter().map(|h| h.entropy[15]).sum::<f64>() / heads.len() as f64;
            assert!((manual - row.mean_entropy).abs() < 1e-12);
        }
    }

    #[test]
    fn entropy_aware_matches_none_inside_window() {
        let spec = small_spec();
        let weights = init_weights::<f64>(&spec).unwrap();
        // pretrained window larger than every profiled position
        let rope = RopeConfig::new(RopeMethod::Rope, spec.d_head, 128, 128);
        let docs = doc_set(&[48, 48]);
        let configs = vec![
            ("aware".to_string(), rope.clone(), ScalingPolicy::entropy_aware(128)),
            ("none".to_string(), rope, ScalingPolicy::None),
        ];
        let reports =
            compare_methods(&spec, &weights, &configs, &docs, &[15, 31], false).unwrap();
        for (a, b) in reports[0].rows.iter().zip(reports[1].rows.iter()) {
            assert!((a.mean_entropy - b.mean_entropy).abs() < 1e-12);
            assert!((a.std_entropy - b.std_entropy).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_shape() {
        let spec = small_spec();
        let weights = init_weights::<f64>(&spec).unwrap();
        let rope = RopeConfig::new(RopeMethod::Rope, spec.d_head, 128, 128);
        let docs = doc_set(&[32]);
        let report = profile(
            &spec,
            &weights,
            &rope,
            &ScalingPolicy::None,
            &docs,
            &[7, 15],
            "shape",
            false,
        )
        .unwrap();
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "label,layer,position,mean_entropy,std_entropy,uniform_baseline,n_docs"
        );
        assert_eq!(lines.len(), 1 + spec.n_layers * 2);
        assert!(lines[1].starts_with("shape,0,7,"));
    }
}
