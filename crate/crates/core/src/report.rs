//! Per-landmark error reports in the seven-column accuracy-table layout.

use serde::{Deserialize, Serialize};

use crate::folds::FoldPlan;
use crate::landmark::{Landmark, LandmarkSet};
use crate::nn::Model;
use crate::train::{predict_case, Prepared, TrainError};
use crate::volume::{physical_distance_mm, Case};

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub sd: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        if values.is_empty() {
            return Stat { mean: 0.0, sd: 0.0 };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Stat { mean, sd: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseErrors {
    pub id: String,
    pub fold: Option<usize>,
    /// Physical error per landmark (mm), canonical landmark order.
    pub mm: [f64; 7],
    /// Error per landmark in voxel units.
    pub voxels: [f64; 7],
}

impl CaseErrors {
    pub fn between(id: &str, fold: Option<usize>, predicted: &LandmarkSet, truth: &LandmarkSet, spacing: [f64; 3]) -> Self {
        let mut mm = [0.0; 7];
        let mut voxels = [0.0; 7];
        for (l, p) in predicted.iter() {
            let t = truth.get(l);
            mm[l.index()] = physical_distance_mm(p, t, spacing);
            voxels[l.index()] = physical_distance_mm(p, t, [1.0; 3]);
        }
        CaseErrors {
            id: id.to_string(),
            fold,
            mm,
            voxels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkRow {
    pub landmark: String,
    pub abbrev: String,
    pub mm: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub landmarks: Vec<LandmarkRow>,
    pub overall: Stat,
    pub overall_voxels: Stat,
    pub cases: Vec<CaseErrors>,
}

impl EvalReport {
    pub fn from_cases(cases: Vec<CaseErrors>) -> Self {
        let landmarks = Landmark::ALL
            .iter()
            .map(|&l| {
                let v: Vec<f64> = cases.iter().map(|c| c.mm[l.index()]).collect();
                LandmarkRow {
                    landmark: l.key().to_string(),
                    abbrev: l.abbrev().to_string(),
                    mm: Stat::of(&v),
                }
            })
            .collect();
        let all_mm: Vec<f64> = cases.iter().flat_map(|c| c.mm).collect();
        let all_vox: Vec<f64> = cases.iter().flat_map(|c| c.voxels).collect();
        EvalReport {
            landmarks,
            overall: Stat::of(&all_mm),
            overall_voxels: Stat::of(&all_vox),
            cases,
        }
    }

    /// Two-decimal table: one column per landmark plus the overall column.
    pub fn render_table(&self) -> String {
        let cell = |s: &Stat| format!("{:.2} ± {:.2}", s.mean, s.sd);
        let mut head = format!("{:<12}", "");
        let mut row = format!("{:<12}", "Error (mm)");
        for l in &self.landmarks {
            head.push_str(&format!("{:>13}", l.abbrev));
            row.push_str(&format!("{:>13}", cell(&l.mm)));
        }
        head.push_str(&format!("{:>13}", "Overall"));
        row.push_str(&format!("{:>13}", cell(&self.overall)));
        let legend: Vec<String> = Landmark::ALL.iter().map(|l| format!("{}={}", l.abbrev(), l.key())).collect();
        format!("{}\n{}\n{}\n", head.trim_end(), row, legend.join(", "))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report is plain data")
    }
}

/// Predicts every held-out case with its fold's model and scores it against
/// the original-grid ground truth.
pub fn evaluate(
    models: &[Model],
    plan: &FoldPlan,
    cases: &[Case],
    prepared: &[Prepared],
    input_dims: [usize; 3],
) -> Result<EvalReport, TrainError> {
    let mut errors = Vec::with_capacity(cases.len());
    for (fold, test) in plan.folds.iter().enumerate() {
        let model = models.get(fold).ok_or(TrainError::MissingCheckpoint(fold))?;
        for &i in test {
            let pred = predict_case(model, &prepared[i], input_dims)?;
            let case = &cases[i];
            errors.push(CaseErrors::between(
                &case.volume.id,
                Some(fold),
                &pred,
                &case.landmarks,
                case.volume.spacing(),
            ));
        }
    }
    errors.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(EvalReport::from_cases(errors))
}
