//! Agreement metrics: Cohen's kappa (overall and one-vs-rest per class) on
//! concatenated recordings, with confusion matrix and per-class rates.

use crate::error::{Error, Result};
use crate::Label;

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch(a, b));
    }
    if a == 0 {
        return Err(Error::InvalidArgument("kappa of empty sequences".into()));
    }
    Ok(())
}

/// Kappa from a square contingency table (`table[a][b]` counts).
/// Returns 0 when chance agreement is 1.
pub fn kappa_from_table(table: &[Vec<u64>]) -> f64 {
    let k = table.len();
    let total: u64 = table.iter().flatten().sum();
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    let agree: u64 = (0..k).map(|i| table[i][i]).sum();
    let p_o = agree as f64 / n;
    let p_e: f64 = (0..k)
        .map(|i| {
            let row: u64 = table[i].iter().sum();
            let col: u64 = table.iter().map(|r| r[i]).sum();
            (row as f64 / n) * (col as f64 / n)
        })
        .sum();
    if p_e >= 1.0 {
        return 0.0;
    }
    (p_o - p_e) / (1.0 - p_e)
}

/// Cohen's kappa between two class-code sequences.
pub fn cohen_kappa(a: &[usize], b: &[usize]) -> Result<f64> {
    check_lengths(a.len(), b.len())?;
    let k = a.iter().chain(b).max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; k]; k];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    Ok(kappa_from_table(&table))
}

/// Kappa after mapping class `k` to 1 and everything else to 0.
pub fn per_class_kappa_codes(pred: &[usize], reference: &[usize], k: usize) -> Result<f64> {
    check_lengths(pred.len(), reference.len())?;
    let mut table = vec![vec![0u64; 2]; 2];
    for (&p, &r) in pred.iter().zip(reference) {
        table[usize::from(p == k)][usize::from(r == k)] += 1;
    }
    Ok(kappa_from_table(&table))
}

pub fn per_class_kappa(pred: &[Label], reference: &[Label], k: Label) -> Result<f64> {
    let p: Vec<usize> = pred.iter().map(|l| l.code()).collect();
    let r: Vec<usize> = reference.iter().map(|l| l.code()).collect();
    per_class_kappa_codes(&p, &r, k.code())
}

/// Agreement summary over concatenated recordings.
#[derive(Debug, Clone, PartialEq)]
pub struct KappaReport {
    pub class_names: Vec<String>,
    /// One-vs-rest kappa per class.
    pub kappa: Vec<f64>,
    /// `confusion[reference][prediction]`.
    pub confusion: Vec<Vec<u64>>,
    pub accuracy: f64,
    /// `TP / (TP + FN)`; `None` when the class never occurs in the reference.
    pub sensitivity: Vec<Option<f64>>,
    /// `TN / (TN + FP)`; `None` when every reference sample is the class.
    pub specificity: Vec<Option<f64>>,
    pub total: u64,
}

impl KappaReport {
    pub fn kappa_of(&self, name: &str) -> Option<f64> {
        self.class_names.iter().position(|n| n == name).map(|i| self.kappa[i])
    }
}

/// Class names for `n_classes`-way reports: the four scoring classes, or
/// `nonMSE`/`MSE` for binary detectors.
pub fn class_names(n_classes: usize) -> Vec<String> {
    match n_classes {
        4 => Label::ALL.iter().map(|l| l.name().to_string()).collect(),
        2 => vec!["nonMSE".into(), "MSE".into()],
        n => (0..n).map(|i| i.to_string()).collect(),
    }
}

/// Concatenates `(prediction, reference)` pairs and scores them jointly.
pub fn concatenated_report(pairs: &[(&[usize], &[usize])], n_classes: usize) -> Result<KappaReport> {
    if pairs.is_empty() || n_classes == 0 {
        return Err(Error::InvalidArgument("no recordings to evaluate".into()));
    }
    let mut confusion = vec![vec![0u64; n_classes]; n_classes];
    for (pred, reference) in pairs {
        if pred.len() != reference.len() {
            return Err(Error::LengthMismatch(pred.len(), reference.len()));
        }
        for (&p, &r) in pred.iter().zip(reference.iter()) {
            if p >= n_classes || r >= n_classes {
                return Err(Error::InvalidArgument(format!("class code {} >= {n_classes}", p.max(r))));
            }
            confusion[r][p] += 1;
        }
    }
    let total: u64 = confusion.iter().flatten().sum();
    if total == 0 {
        return Err(Error::InvalidArgument("no samples to evaluate".into()));
    }
    let trace: u64 = (0..n_classes).map(|i| confusion[i][i]).sum();
    let mut kappa = Vec::with_capacity(n_classes);
    let mut sensitivity = Vec::with_capacity(n_classes);
    let mut specificity = Vec::with_capacity(n_classes);
    for k in 0..n_classes {
        let tp = confusion[k][k];
        let fn_ = confusion[k].iter().sum::<u64>() - tp;
        let fp = confusion.iter().map(|r| r[k]).sum::<u64>() - tp;
        let tn = total - tp - fn_ - fp;
        // Binary table indexed [pred == k][ref == k].
        kappa.push(kappa_from_table(&[vec![tn, fn_], vec![fp, tp]]));
        sensitivity.push((tp + fn_ > 0).then(|| tp as f64 / (tp + fn_) as f64));
        specificity.push((tn + fp > 0).then(|| tn as f64 / (tn + fp) as f64));
    }
    Ok(KappaReport {
        class_names: class_names(n_classes),
        kappa,
        confusion,
        accuracy: trace as f64 / total as f64,
        sensitivity,
        specificity,
        total,
    })
}

/// Binary MSE/non-MSE view of a 4-class label sequence.
pub fn binarize_mse(labels: &[Label]) -> Vec<usize> {
    labels.iter().map(|&l| usize::from(l == Label::Mse)).collect()
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

/// Report table: one `arch W MSE MSEc ED` row per entry (`-` where a network
/// has no such class), then commented per-class details.
pub fn format_report_table(rows: &[(String, KappaReport)]) -> String {
    let mut out = String::from("arch W MSE MSEc ED\n");
    for (arch, rep) in rows {
        let cells: Vec<String> = Label::ALL.iter().map(|l| fmt_opt(rep.kappa_of(l.name()))).collect();
        out.push_str(&format!("{arch} {}\n", cells.join(" ")));
    }
    for (arch, rep) in rows {
        out.push_str(&format!("# {arch} samples {} accuracy {:.4}\n", rep.total, rep.accuracy));
        for (i, name) in rep.class_names.iter().enumerate() {
            out.push_str(&format!(
                "# {arch} {name} kappa {:.4} sensitivity {} specificity {}\n",
                rep.kappa[i],
                fmt_opt(rep.sensitivity[i]),
                fmt_opt(rep.specificity[i])
            ));
        }
        let row_text: Vec<String> = rep
            .confusion
            .iter()
            .map(|r| r.iter().map(u64::to_string).collect::<Vec<_>>().join(" "))
            .collect();
        out.push_str(&format!("# {arch} confusion(ref x pred) {}\n", row_text.join(" | ")));
    }
    out
}
