//! Report writers. CSV files are the stable contract: header row, comma
//! separators, `.`-decimal floats in shortest round-trip form, LF endings.
//! The text tables exist for reading at the terminal.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use tsgcl_core::data::{Dataset, LabelScheme};
use tsgcl_core::metrics::Metrics;
use tsgcl_core::train::{AblationRow, EpochStats};

use crate::error::{CliError, CliResult};

/// Per-class rows plus the support-weighted summary row. The per-class
/// accuracy column is the class recall.
pub fn metrics_csv(scheme: &LabelScheme, m: &Metrics) -> String {
    let mut text = String::from("class,support,acc,f1\n");
    let mut total = 0usize;
    for (name, c) in scheme.names().iter().zip(&m.per_class) {
        total += c.support;
        let _ = writeln!(text, "{name},{},{},{}", c.support, c.recall, c.f1);
    }
    let _ = writeln!(text, "weighted,{total},{},{}", m.accuracy, m.weighted_f1);
    text
}

pub fn write_metrics_csv(path: &Path, scheme: &LabelScheme, m: &Metrics) -> CliResult<()> {
    fs::write(path, metrics_csv(scheme, m))?;
    Ok(())
}

pub fn metrics_table(scheme: &LabelScheme, m: &Metrics) -> String {
    let width = scheme
        .names()
        .iter()
        .map(|n| n.len())
        .chain([8])
        .max()
        .unwrap_or(8);
    let mut text = format!("{:<width$}  {:>7}  {:>6}  {:>6}\n", "class", "support", "acc", "f1");
    let mut total = 0usize;
    for (name, c) in scheme.names().iter().zip(&m.per_class) {
        total += c.support;
        let _ = writeln!(
            text,
            "{name:<width$}  {:>7}  {:>6.3}  {:>6.3}",
            c.support, c.recall, c.f1
        );
    }
    let _ = writeln!(
        text,
        "{:<width$}  {total:>7}  {:>6.3}  {:>6.3}",
        "weighted", m.accuracy, m.weighted_f1
    );
    text
}

pub fn history_csv(history: &[EpochStats]) -> String {
    let mut text = String::from("epoch,train_loss,mmd_loss,cls_loss,val_wf1\n");
    for h in history {
        let _ = writeln!(
            text,
            "{},{},{},{},{}",
            h.epoch, h.train_total, h.train_contrastive, h.train_classification, h.val_weighted_f1
        );
    }
    text
}

pub fn write_history_csv(path: &Path, history: &[EpochStats]) -> CliResult<()> {
    fs::write(path, history_csv(history))?;
    Ok(())
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut text = String::from("variant,seeds,mean_acc,std_acc,mean_wf1,std_wf1\n");
    for r in rows {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{}",
            r.variant.name(),
            r.per_seed_weighted_f1.len(),
            r.mean_accuracy,
            r.std_accuracy,
            r.mean_weighted_f1,
            r.std_weighted_f1
        );
    }
    text
}

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> CliResult<()> {
    fs::write(path, ablation_csv(rows))?;
    Ok(())
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut text = format!(
        "{:<8}  {:>5}  {:>9}  {:>9}  {:>9}  {:>9}\n",
        "variant", "seeds", "mean_acc", "std_acc", "mean_wf1", "std_wf1"
    );
    for r in rows {
        let _ = writeln!(
            text,
            "{:<8}  {:>5}  {:>9.4}  {:>9.4}  {:>9.4}  {:>9.4}",
            r.variant.name(),
            r.per_seed_weighted_f1.len(),
            r.mean_accuracy,
            r.std_accuracy,
            r.mean_weighted_f1,
            r.std_weighted_f1
        );
    }
    text
}

/// One `<dialogue_id>\t<turn>\t<label_name>` line per utterance.
pub fn predictions_text(ds: &Dataset, predictions: &[Vec<usize>]) -> String {
    let mut text = String::new();
    for (d, preds) in ds.dialogues.iter().zip(predictions) {
        for (turn, &p) in preds.iter().enumerate() {
            let _ = writeln!(text, "{}\t{turn}\t{}", d.id, ds.scheme.name(p));
        }
    }
    text
}

pub fn write_predictions(path: &Path, ds: &Dataset, predictions: &[Vec<usize>]) -> CliResult<()> {
    fs::write(path, predictions_text(ds, predictions))?;
    Ok(())
}

/// Parse a predictions file into (dialogue id, turn, label name) triples.
pub fn read_predictions(path: &Path) -> CliResult<Vec<(String, usize, String)>> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        let (id, turn, label) = match (fields.next(), fields.next(), fields.next(), fields.next())
        {
            (Some(i), Some(t), Some(l), None) => (i, t, l),
            _ => {
                return Err(CliError::Data(format!(
                    "{}:{}: expected <dialogue>\\t<turn>\\t<label>",
                    path.display(),
                    lineno + 1
                )))
            }
        };
        let turn: usize = turn.parse().map_err(|_| {
            CliError::Data(format!("{}:{}: bad turn {turn:?}", path.display(), lineno + 1))
        })?;
        out.push((id.to_string(), turn, label.to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;
    use tsgcl_core::model::Variant;

    fn toy_metrics() -> (LabelScheme, Metrics) {
        let names: Vec<String> = vec!["a".into(), "b".into()];
        let scheme = LabelScheme::from_names_cycling(&names).unwrap();
        let m = Metrics::from_pairs(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        (scheme, m)
    }

    #[test]
    fn metrics_csv_has_class_rows_and_weighted_summary() {
        let (scheme, m) = toy_metrics();
        let text = metrics_csv(&scheme, &m);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "class,support,acc,f1");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("a,2,0.5,"));
        assert!(lines[3].starts_with("weighted,4,0.75,"));
        assert!(text.ends_with('\n'));
    }

    #[test]
    fn history_csv_columns_are_stable() {
        let history = vec![EpochStats {
            epoch: 1,
            train_total: 2.5,
            train_contrastive: 0.5,
            train_classification: 2.0,
            val_accuracy: 0.25,
            val_weighted_f1: 0.2,
        }];
        let text = history_csv(&history);
        assert_eq!(text, "epoch,train_loss,mmd_loss,cls_loss,val_wf1\n1,2.5,0.5,2,0.2\n");
    }

    #[test]
    fn ablation_csv_lists_variants_in_order() {
        let row = |v: Variant| AblationRow {
            variant: v,
            per_seed_accuracy: vec![0.5, 0.7],
            per_seed_weighted_f1: vec![0.4, 0.6],
            mean_accuracy: 0.6,
            std_accuracy: 0.1,
            mean_weighted_f1: 0.5,
            std_weighted_f1: 0.1,
        };
        let text = ablation_csv(&[
            row(Variant::Full),
            row(Variant::NoContrastive),
            row(Variant::NoTwoStage),
        ]);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "variant,seeds,mean_acc,std_acc,mean_wf1,std_wf1");
        assert!(lines[1].starts_with("full,2,"));
        assert!(lines[2].starts_with("no-gcl,2,"));
        assert!(lines[3].starts_with("no-ts,2,"));
    }

    #[test]
    fn predictions_round_trip() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        write!(file, "# preds\nd1\t0\thappy\nd1\t1\tsad\n\nd2\t0\tneutral\n").unwrap();
        let preds = read_predictions(file.path()).unwrap();
        assert_eq!(
            preds,
            vec![
                ("d1".to_string(), 0, "happy".to_string()),
                ("d1".to_string(), 1, "sad".to_string()),
                ("d2".to_string(), 0, "neutral".to_string()),
            ]
        );

        let mut bad = tempfile::NamedTempFile::new().unwrap();
        writeln!(bad, "d1\tzero\thappy").unwrap();
        assert_eq!(read_predictions(bad.path()).unwrap_err().exit_code(), 3);
    }
}
