//! The four-term training loss and the ablation variants.

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// How the discrepancy between the two branches enters the total loss.
///
/// `Add` is the literal positive sum; `Subtract` negates it; `Hinge`
/// maximizes the discrepancy up to a margin, max(0, m - S), which keeps the
/// term bounded below while still pushing the branches apart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DiscMode {
    Add,
    Subtract,
    Hinge,
}

impl DiscMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "add" => Ok(DiscMode::Add),
            "subtract" => Ok(DiscMode::Subtract),
            "hinge" => Ok(DiscMode::Hinge),
            other => Err(Error::InvalidArgument(format!(
                "unknown discriminative mode `{other}` (expected add, subtract or hinge)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            DiscMode::Add => "add",
            DiscMode::Subtract => "subtract",
            DiscMode::Hinge => "hinge",
        }
    }

    pub fn apply(&self, discrepancy: f64, margin: f64) -> f64 {
        match self {
            DiscMode::Add => discrepancy,
            DiscMode::Subtract => -discrepancy,
            DiscMode::Hinge => (margin - discrepancy).max(0.0),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub ados: f64,
    pub phys: f64,
    pub nonphys: f64,
    pub disc: f64,
    pub mode: DiscMode,
    pub margin: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            ados: 1.0,
            phys: 1.0,
            nonphys: 1.0,
            disc: 1.0,
            mode: DiscMode::Hinge,
            margin: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("ados", self.ados),
            ("phys", self.phys),
            ("nonphys", self.nonphys),
            ("disc", self.disc),
        ] {
            if !w.is_finite() {
                return Err(Error::InvalidArgument(format!("loss weight `{name}` is not finite")));
            }
        }
        if self.mode == DiscMode::Hinge && self.margin <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "hinge margin must be positive, got {}",
                self.margin
            )));
        }
        Ok(())
    }
}

/// Ablation variants. Which branches exist and which loss terms are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Full,
    EncOnly,
    PhysDec,
    NonPhysDec,
    NoDisLoss,
}

impl Variant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "enc-only" => Ok(Variant::EncOnly),
            "phys-dec" => Ok(Variant::PhysDec),
            "nonphys-dec" => Ok(Variant::NonPhysDec),
            "no-dis-loss" => Ok(Variant::NoDisLoss),
            other => Err(Error::InvalidArgument(format!(
                "unknown ablation variant `{other}` \
                 (expected full, enc-only, phys-dec, nonphys-dec or no-dis-loss)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::EncOnly => "enc-only",
            Variant::PhysDec => "phys-dec",
            Variant::NonPhysDec => "nonphys-dec",
            Variant::NoDisLoss => "no-dis-loss",
        }
    }

    pub fn all() -> [Variant; 5] {
        [
            Variant::EncOnly,
            Variant::PhysDec,
            Variant::NonPhysDec,
            Variant::NoDisLoss,
            Variant::Full,
        ]
    }

    pub fn has_physics_decoder(&self) -> bool {
        matches!(self, Variant::Full | Variant::PhysDec | Variant::NoDisLoss)
    }

    pub fn has_nonphysics_decoder(&self) -> bool {
        matches!(self, Variant::Full | Variant::NonPhysDec | Variant::NoDisLoss)
    }

    pub fn has_discriminative_loss(&self) -> bool {
        matches!(self, Variant::Full)
    }
}

/// Per-term loss values for one sample or one epoch.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub ados: f64,
    pub phys: f64,
    pub nonphys: f64,
    pub disc: f64,
    /// True when the discriminative term was not applicable (single-target
    /// data or a variant without both branches).
    pub disc_disabled: bool,
    pub total: f64,
}

/// Total loss over one sample's predictions. Prediction/target matrices are
/// H x (joints * dims); per-frame mean squared errors are summed over the
/// horizon. Reference implementation used both directly and as the oracle
/// for the graph-built training loss.
#[allow(clippy::too_many_arguments)]
pub fn compute_losses(
    phys_pred: Option<&Tensor>,
    nonphys_pred: Option<&Tensor>,
    phys_target: Option<&Tensor>,
    nonphys_target: Option<&Tensor>,
    class_logits: &Tensor,
    label: usize,
    weights: &LossWeights,
    dual_target: bool,
) -> Result<LossBreakdown> {
    weights.validate()?;
    let ados = cross_entropy_scalar(class_logits, label)?;

    let phys = match (phys_pred, phys_target) {
        (Some(p), Some(t)) => summed_frame_mse(p, t)?,
        (None, _) => 0.0,
        (Some(_), None) => {
            return Err(Error::InvalidArgument(
                "physics prediction given without a target".into(),
            ))
        }
    };
    let nonphys = match (nonphys_pred, nonphys_target) {
        (Some(p), Some(t)) => summed_frame_mse(p, t)?,
        (None, _) => 0.0,
        (Some(_), None) => {
            return Err(Error::InvalidArgument(
                "non-physics prediction given without a target".into(),
            ))
        }
    };

    let (disc, disc_disabled) = match (phys_pred, nonphys_pred) {
        (Some(p), Some(n)) if dual_target && weights.disc != 0.0 => {
            let s = summed_frame_mse(p, n)?;
            (weights.mode.apply(s, weights.margin), false)
        }
        _ => (0.0, true),
    };

    let total = weights.ados * ados
        + weights.phys * phys
        + weights.nonphys * nonphys
        + if disc_disabled { 0.0 } else { weights.disc * disc };
    Ok(LossBreakdown {
        ados,
        phys,
        nonphys,
        disc,
        disc_disabled,
        total,
    })
}

/// Sum over frames of the per-frame mean squared error, i.e. H times the
/// whole-matrix MSE.
pub fn summed_frame_mse(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape {
            op: "summed_frame_mse",
            detail: format!("{:?} vs {:?}", pred.shape(), target.shape()),
        });
    }
    let (h, w) = pred.dims2()?;
    let mut total = 0.0;
    for r in 0..h {
        let mut frame = 0.0;
        for c in 0..w {
            let d = pred.data()[r * w + c] - target.data()[r * w + c];
            frame += d * d;
        }
        total += frame / w as f64;
    }
    Ok(total)
}

fn cross_entropy_scalar(logits: &Tensor, label: usize) -> Result<f64> {
    let k = logits.numel();
    if label >= k {
        return Err(Error::InvalidArgument(format!(
            "label {label} outside [0, {k})"
        )));
    }
    let row = logits.data();
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
    Ok(-(row[label] - max - sum.ln()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logits() -> Tensor {
        Tensor::vector(vec![2.0, -1.0, 0.5])
    }

    #[test]
    fn exact_prediction_zeroes_the_physics_term() {
        let target = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = compute_losses(
            Some(&target),
            None,
            Some(&target),
            None,
            &logits(),
            0,
            &LossWeights::default(),
            true,
        )
        .unwrap();
        assert_eq!(b.phys, 0.0);
    }

    #[test]
    fn hinge_example_from_hand_mse() {
        // q_hat = (1,1), q_check = (0,0): summed per-frame MSE = 1.
        // Hinge with margin 4: max(0, 4 - 1) = 3.
        let phys = Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap();
        let nonphys = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        let target = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        let weights = LossWeights {
            margin: 4.0,
            ..Default::default()
        };
        let b = compute_losses(
            Some(&phys),
            Some(&nonphys),
            Some(&target),
            Some(&target),
            &logits(),
            0,
            &weights,
            true,
        )
        .unwrap();
        assert!((b.disc - 3.0).abs() < 1e-12);
        assert!(!b.disc_disabled);
    }

    #[test]
    fn single_target_mode_disables_discriminative_term() {
        let phys = Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap();
        let nonphys = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        let target = Tensor::matrix(1, 2, vec![0.5, 0.5]).unwrap();
        let b = compute_losses(
            Some(&phys),
            Some(&nonphys),
            Some(&target),
            Some(&target),
            &logits(),
            1,
            &LossWeights::default(),
            false,
        )
        .unwrap();
        assert_eq!(b.disc, 0.0);
        assert!(b.disc_disabled);
    }

    #[test]
    fn ados_only_weights_reduce_to_bare_cross_entropy() {
        let phys = Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap();
        let nonphys = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        let target = Tensor::matrix(1, 2, vec![0.5, 0.5]).unwrap();
        let weights = LossWeights {
            phys: 0.0,
            nonphys: 0.0,
            disc: 0.0,
            ..Default::default()
        };
        let b = compute_losses(
            Some(&phys),
            Some(&nonphys),
            Some(&target),
            Some(&target),
            &logits(),
            2,
            &weights,
            true,
        )
        .unwrap();
        let expected = cross_entropy_scalar(&logits(), 2).unwrap();
        assert!((b.total - expected).abs() < 1e-12);
    }

    #[test]
    fn single_and_dual_target_agree_when_targets_coincide() {
        let phys = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let nonphys = Tensor::matrix(2, 2, vec![0.5, 1.5, 2.5, 3.5]).unwrap();
        let target = Tensor::matrix(2, 2, vec![0.0, 0.0, 0.0, 0.0]).unwrap();
        let run = |dual| {
            compute_losses(
                Some(&phys),
                Some(&nonphys),
                Some(&target),
                Some(&target),
                &logits(),
                0,
                &LossWeights::default(),
                dual,
            )
            .unwrap()
        };
        let dual = run(true);
        let single = run(false);
        assert_eq!(dual.phys, single.phys);
        assert_eq!(dual.nonphys, single.nonphys);
    }

    #[test]
    fn subtract_mode_negates_the_discrepancy() {
        let phys = Tensor::matrix(1, 1, vec![2.0]).unwrap();
        let nonphys = Tensor::matrix(1, 1, vec![0.0]).unwrap();
        let target = Tensor::matrix(1, 1, vec![0.0]).unwrap();
        let weights = LossWeights {
            mode: DiscMode::Subtract,
            ..Default::default()
        };
        let b = compute_losses(
            Some(&phys),
            Some(&nonphys),
            Some(&target),
            Some(&target),
            &logits(),
            0,
            &weights,
            true,
        )
        .unwrap();
        assert!((b.disc + 4.0).abs() < 1e-12);
    }

    #[test]
    fn unknown_mode_strings_rejected() {
        assert!(DiscMode::parse("hinge").is_ok());
        assert!(DiscMode::parse("max").is_err());
        assert!(Variant::parse("enc-only").is_ok());
        assert!(Variant::parse("encoder").is_err());
    }

    #[test]
    fn variant_branch_availability() {
        assert!(!Variant::EncOnly.has_physics_decoder());
        assert!(!Variant::EncOnly.has_nonphysics_decoder());
        assert!(Variant::PhysDec.has_physics_decoder());
        assert!(!Variant::PhysDec.has_nonphysics_decoder());
        assert!(Variant::NoDisLoss.has_physics_decoder());
        assert!(Variant::NoDisLoss.has_nonphysics_decoder());
        assert!(!Variant::NoDisLoss.has_discriminative_loss());
        assert!(Variant::Full.has_discriminative_loss());
    }

    #[test]
    fn label_out_of_range_rejected() {
        let r = compute_losses(
            None,
            None,
            None,
            None,
            &logits(),
            3,
            &LossWeights::default(),
            false,
        );
        assert!(r.is_err());
    }
}
