use ndarray::{ArrayView2, Zip};

use crate::error::{Error, Result};

/// Top-1 exact-match fraction.
pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::Empty("no predictions to score".into()));
    }
    if preds.len() != labels.len() {
        return Err(Error::Shape(format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Per-class overlap counts, accumulated over any number of masks.
#[derive(Clone, Debug, PartialEq)]
pub struct DiceCounts {
    pub intersection: Vec<u64>,
    pub predicted: Vec<u64>,
    pub truth: Vec<u64>,
}

impl DiceCounts {
    pub fn new(num_classes: usize) -> Self {
        Self {
            intersection: vec![0; num_classes],
            predicted: vec![0; num_classes],
            truth: vec![0; num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.truth.len()
    }

    pub fn add(&mut self, pred: ArrayView2<u8>, truth: ArrayView2<u8>) -> Result<()> {
        if pred.dim() != truth.dim() {
            return Err(Error::Shape(format!(
                "prediction {:?} vs ground truth {:?}",
                pred.dim(),
                truth.dim()
            )));
        }
        let c = self.num_classes();
        let mut bad = None;
        Zip::from(&pred).and(&truth).for_each(|&p, &t| {
            let (p, t) = (p as usize, t as usize);
            if p >= c || t >= c {
                bad = Some(p.max(t));
                return;
            }
            self.predicted[p] += 1;
            self.truth[t] += 1;
            if p == t {
                self.intersection[p] += 1;
            }
        });
        match bad {
            Some(l) => Err(Error::Shape(format!("label {l} outside {c} classes"))),
            None => Ok(()),
        }
    }

    /// `2|P∩T| / (|P| + |T|)` per class; 1 when a class is absent from both.
    pub fn per_class(&self) -> Vec<f64> {
        (0..self.num_classes())
            .map(|k| {
                let denom = self.predicted[k] + self.truth[k];
                if denom == 0 {
                    1.0
                } else {
                    2.0 * self.intersection[k] as f64 / denom as f64
                }
            })
            .collect()
    }
}

/// Dice of one prediction against its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct DiceScores {
    pub per_class: Vec<f64>,
    /// Mean over classes `1..C` (background excluded); equals the background
    /// score when there is only one class.
    pub mean_foreground: f64,
}

impl DiceScores {
    pub fn from_counts(counts: &DiceCounts) -> Self {
        let per_class = counts.per_class();
        let fg = &per_class[1.min(per_class.len() - 1)..];
        let mean_foreground = fg.iter().sum::<f64>() / fg.len() as f64;
        Self {
            per_class,
            mean_foreground,
        }
    }
}

pub fn dice(pred: ArrayView2<u8>, truth: ArrayView2<u8>, num_classes: usize) -> Result<DiceScores> {
    if num_classes == 0 {
        return Err(Error::Config("dice needs at least one class".into()));
    }
    let mut c = DiceCounts::new(num_classes);
    c.add(pred, truth)?;
    Ok(DiceScores::from_counts(&c))
}
