//! Model agreement report over two or three prediction dumps: the share
//! of questions answered correctly (fuzzy) by exactly each subset of the
//! models.

use srqa_core::error::{Result, SrqaError};
use srqa_core::evaluation::PredictionRecord;
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Clone, Debug)]
pub struct CompareCell {
    /// Bitmask over models; bit i set means model i answered correctly.
    pub mask: usize,
    pub label: String,
    pub count: usize,
    pub percent: f64,
}

#[derive(Clone, Debug)]
pub struct CompareReport {
    pub labels: Vec<String>,
    pub total: usize,
    pub cells: Vec<CompareCell>,
}

fn read_dump(path: &Path) -> Result<BTreeMap<String, bool>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| SrqaError::data(format!("cannot read {}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredictionRecord = serde_json::from_str(line)
            .map_err(|e| SrqaError::data(format!("{} line {}: {e}", path.display(), i + 1)))?;
        map.insert(rec.id, rec.answered && rec.fuzzy);
    }
    Ok(map)
}

fn mask_label(mask: usize, k: usize) -> String {
    if mask == 0 {
        return "none".to_string();
    }
    let names = ["A", "B", "C"];
    (0..k)
        .filter(|i| mask & (1 << i) != 0)
        .map(|i| names[i])
        .collect::<Vec<_>>()
        .join("+")
}

pub fn compare_dumps(paths: &[std::path::PathBuf]) -> Result<CompareReport> {
    if !(2..=3).contains(&paths.len()) {
        return Err(SrqaError::config("compare takes two or three dumps"));
    }
    let dumps: Vec<BTreeMap<String, bool>> =
        paths.iter().map(|p| read_dump(p)).collect::<Result<_>>()?;
    let base_ids: Vec<&String> = dumps[0].keys().collect();
    for (i, d) in dumps.iter().enumerate().skip(1) {
        if d.len() != dumps[0].len() || !d.keys().eq(dumps[0].keys()) {
            let missing: Vec<&String> = base_ids
                .iter()
                .filter(|id| !d.contains_key(**id))
                .copied()
                .take(5)
                .collect();
            let extra: Vec<&String> = d
                .keys()
                .filter(|id| !dumps[0].contains_key(*id))
                .take(5)
                .collect();
            return Err(SrqaError::data(format!(
                "dump {} covers different question ids (missing {:?}, extra {:?})",
                paths[i].display(),
                missing,
                extra
            )));
        }
    }

    let k = dumps.len();
    let total = dumps[0].len();
    let mut counts = vec![0usize; 1 << k];
    for id in dumps[0].keys() {
        let mut mask = 0;
        for (i, d) in dumps.iter().enumerate() {
            if d[id] {
                mask |= 1 << i;
            }
        }
        counts[mask] += 1;
    }
    let cells = counts
        .iter()
        .enumerate()
        .map(|(mask, &count)| CompareCell {
            mask,
            label: mask_label(mask, k),
            count,
            percent: if total == 0 {
                0.0
            } else {
                100.0 * count as f64 / total as f64
            },
        })
        .collect();
    Ok(CompareReport {
        labels: paths.iter().map(|p| p.display().to_string()).collect(),
        total,
        cells,
    })
}

pub fn format_compare(report: &CompareReport) -> String {
    let mut out = String::new();
    let names = ["A", "B", "C"];
    for (i, label) in report.labels.iter().enumerate() {
        out.push_str(&format!("{} = {}\n", names[i], label));
    }
    out.push_str(&format!("questions: {}\n", report.total));
    for cell in &report.cells {
        out.push_str(&format!(
            "{:<8}{:>8.2}% ({})\n",
            cell.label, cell.percent, cell.count
        ));
    }
    out
}

pub fn cmd_compare(paths: &[std::path::PathBuf]) -> Result<CompareReport> {
    let report = compare_dumps(paths)?;
    print!("{}", format_compare(&report));
    Ok(report)
}
