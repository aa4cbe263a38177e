use std::fmt::Write;

/// Dice summary plus the training trace, written as `name<TAB>value` lines.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub per_case_dice: f64,
    pub global_dice: f64,
    /// `(name, dice)` for every evaluated case.
    pub cases: Vec<(String, f64)>,
    pub loss_curve: Vec<(usize, f64)>,
    pub runtime_secs: f64,
}

impl MetricsReport {
    /// The runtime line is optional so reports can be compared byte for byte.
    pub fn to_tsv(&self, with_runtime: bool) -> String {
        let mut s = String::new();
        writeln!(s, "per_case_dice\t{:.6}", self.per_case_dice).unwrap();
        writeln!(s, "global_dice\t{:.6}", self.global_dice).unwrap();
        for (name, d) in &self.cases {
            writeln!(s, "dice[{name}]\t{d:.6}").unwrap();
        }
        for (it, l) in &self.loss_curve {
            writeln!(s, "loss[{it}]\t{l:.6}").unwrap();
        }
        if with_runtime {
            writeln!(s, "runtime_seconds\t{:.3}", self.runtime_secs).unwrap();
        }
        s
    }

    /// Mean recorded loss over the iterations in `range`.
    pub fn mean_loss(&self, range: std::ops::Range<usize>) -> Option<f64> {
        let v: Vec<f64> = self
            .loss_curve
            .iter()
            .filter(|(i, _)| range.contains(i))
            .map(|&(_, l)| l)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}
